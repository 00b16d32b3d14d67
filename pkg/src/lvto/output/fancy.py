from collections.abc import Sequence

from rich.status import Status
from rich.table import Table
from rich.text import Text

from lvto.fea import COMPONENTS
from lvto.topopt import RunStatus
from lvto.utils import get_consoles

_, stderr = get_consoles()


def status_color(status: RunStatus) -> str:
    match status:
        case RunStatus.CONVERGED:
            return "green"
        case RunStatus.MAX_ITER:
            return "yellow"
        case RunStatus.ERROR:
            return "red"


def styled_status(status: RunStatus) -> Text:
    return Text(status.value, style=status_color(status))


def get_validation_table(
    means: Sequence[float],
    variances: Sequence[float],
    assembled: Sequence[float] | None = None,
) -> Table:
    table = Table(title="Test MSE")
    table.add_column("component", style="cyan")
    table.add_column("mean", justify="right", style="yellow")
    table.add_column("variance", justify="right")
    if assembled is not None:
        table.add_column("assembled mean", justify="right", style="bright_magenta")

    for i, name in enumerate(COMPONENTS):
        row = [name, f"{means[i]:.3e}", f"{variances[i]:.3e}"]
        if assembled is not None:
            row.append(f"{assembled[i]:.3e}")
        table.add_row(*row)

    return table


def get_usage_table(usage: Sequence[tuple[str, int, float]]) -> Table:
    table = Table(title="Class usage")
    table.add_column("class", style="cyan")
    table.add_column("elements", justify="right")
    table.add_column("share", justify="right", style="yellow")

    for name, count, percent in usage:
        table.add_row(name, str(count), f"{percent:.1f}%")

    return table


def get_result_table(stages: Sequence[tuple[str, float, int, RunStatus]]) -> Table:
    table = Table(title="Optimization")
    table.add_column("stage", style="cyan")
    table.add_column("compliance", justify="right", style="yellow")
    table.add_column("iterations", justify="right")
    table.add_column("status")

    for stage, c, iterations, status in stages:
        table.add_row(stage, f"{c:.6g}", str(iterations), styled_status(status))

    return table


def get_timing_table(rows: Sequence[tuple[str, int, float]]) -> Table:
    table = Table(title="Timings")
    table.add_column("phase", style="cyan")
    table.add_column("calls", justify="right")
    table.add_column("total", justify="right", style="yellow")

    for name, count, total in rows:
        table.add_row(name, str(count), f"{total:.3f}s")

    return table


status = Status("working", spinner="noise", console=stderr)  # type: ignore
