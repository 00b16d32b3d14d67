"""Plain file formats (CSV, PGM, JSON, legacy VTK) and plain-text summaries."""

import csv
import io
import json
from collections.abc import Iterable, Sequence
from typing import Any

import numpy as np
from numpy.typing import NDArray

from lvto.fea import COMPONENTS, MacroMesh
from lvto.homog import Dataset
from lvto.utils import LvtoError, Printable, atomic_write
from lvto.utils import simple_stderr as stderr

Meta = dict[str, Any]


class MalformedFileError(LvtoError):
    pass


def metadata_lines(meta: Meta) -> list[str]:
    return [
        f"lvto {meta.get('version', '?')}",
        f"config {meta.get('config', '?')}",
        f"seed {meta.get('seed', '?')}",
    ]


def _cell(value: object) -> str:
    if isinstance(value, float | np.floating):
        return repr(float(value))
    if isinstance(value, np.integer | np.bool_):
        return str(value.item())
    return str(value)


def csv_text(
    header: Sequence[str], rows: Iterable[Sequence[object]], meta: Meta | None = None
) -> str:
    output = io.StringIO()
    if meta is not None:
        for line in metadata_lines(meta):
            output.write(f"# {line}\n")

    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])

    return output.getvalue()


def write_csv(
    path: str, header: Sequence[str], rows: Iterable[Sequence[object]], meta: Meta | None = None
):
    atomic_write(path, csv_text(header, rows, meta))


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as f:
            lines = [line for line in f if not line.startswith("#")]
    except OSError as err:
        raise MalformedFileError(f"cannot read {path}: {err}") from err

    rows = list(csv.reader(lines))
    if not rows:
        raise MalformedFileError(f"{path} is empty")

    return rows[0], rows[1:]


def write_dataset(path: str, dataset: Dataset, meta: Meta | None = None):
    header = ["class_id", "vf", *COMPONENTS]
    rows = (
        [c, v, *y]
        for c, v, y in zip(
            dataset.class_ids.tolist(), dataset.vf.tolist(), dataset.Y.tolist(), strict=True
        )
    )
    write_csv(path, header, rows, meta)


def read_dataset(path: str) -> Dataset:
    header, rows = read_csv(path)
    if header[:2] != ["class_id", "vf"] or len(header) < 3:
        raise MalformedFileError(f"{path}: unexpected dataset header {header}")

    try:
        class_ids = [int(r[0]) for r in rows]
        vf = [float(r[1]) for r in rows]
        Y = [[float(v) for v in r[2:]] for r in rows]
    except (ValueError, IndexError) as err:
        raise MalformedFileError(f"{path}: {err}") from err

    if not rows:
        raise MalformedFileError(f"{path} has no rows")

    return Dataset(class_ids, vf, np.array(Y))


def pgm_bytes(cells: NDArray[np.bool_], meta: Meta | None = None) -> bytes:
    """Binary PGM, 0 = void, 255 = solid, top row first."""

    height, width = cells.shape
    comment = "".join(f"# {line}\n" for line in metadata_lines(meta)) if meta else ""
    header = f"P5\n{comment}{width} {height}\n255\n".encode()
    pixels = np.where(cells[::-1], 255, 0).astype(np.uint8)
    return header + pixels.tobytes()


def read_pgm(path: str) -> NDArray[np.bool_]:
    with open(path, "rb") as f:
        data = f.read()

    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        line_end = data.index(b"\n", pos)
        line = data[pos:line_end]
        pos = line_end + 1
        if not line.startswith(b"#"):
            tokens += line.split()

    if tokens[0] != b"P5":
        raise MalformedFileError(f"{path} is not a binary PGM")

    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    return pixels.reshape(height, width)[::-1] > 127


def write_json(path: str, doc: dict[str, Any]):
    atomic_write(path, json.dumps(doc, indent=2) + "\n")


def read_json(path: str) -> dict[str, Any]:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise MalformedFileError(f"cannot load {path}: {err}") from err


def vtk_text(mesh: MacroMesh, cell_data: dict[str, NDArray[Any]], meta: Meta | None = None) -> str:
    """Legacy ASCII VTK structured-points file with per-element scalars."""

    title = " ".join(metadata_lines(meta)) if meta else "lvto field"
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1",
        "ORIGIN 0 0 0",
        "SPACING 1 1 1",
        f"CELL_DATA {mesh.n_elements}",
    ]
    for name, values in cell_data.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in np.asarray(values, dtype=float)]

    return "\n".join(lines) + "\n"


class FieldTable:
    """Per-element rows of an optimized design, as written to field.csv."""

    HEADER = [
        "element", "ex", "ey", "active", "rho", "rho_phys", "z1", "z2", "class",
        "energy", "sxx", "syy", "txy",
    ]  # fmt: skip

    def __init__(self, rows: list[list[str]]):
        self.rows = rows

    def column(self, name: str, kind: type = float) -> NDArray[Any]:
        i = self.HEADER.index(name)
        return np.array([kind(r[i]) for r in self.rows])

    @property
    def nx(self) -> int:
        return int(self.column("ex", int).max()) + 1

    @property
    def ny(self) -> int:
        return int(self.column("ey", int).max()) + 1

    @classmethod
    def from_values(cls, rows: Sequence[Sequence[object]]) -> "FieldTable":
        return cls([[_cell(v) for v in row] for row in rows])

    @classmethod
    def read(cls, path: str) -> "FieldTable":
        header, rows = read_csv(path)
        if header != cls.HEADER:
            raise MalformedFileError(f"{path}: unexpected field header {header}")
        if not rows:
            raise MalformedFileError(f"{path} has no rows")
        return cls(rows)


def print_validation(
    means: Sequence[float],
    variances: Sequence[float],
    assembled: Sequence[float] | None = None,
    console: Printable = stderr,
):
    for i, name in enumerate(COMPONENTS):
        line = f"{name}: mse mean={means[i]:.3e} var={variances[i]:.3e}"
        if assembled is not None:
            line += f" (assembled mean={assembled[i]:.3e})"
        console.print(line)


def print_usage(usage: Sequence[tuple[str, int, float]], console: Printable = stderr):
    for name, count, percent in usage:
        console.print(f"class {name}: {count} elements ({percent:.1f}%)")


def print_summary(rows: Sequence[tuple[str, str]], console: Printable = stderr):
    for key, value in rows:
        console.print(f"{key}: {value}")


def print_timings(rows: Sequence[tuple[str, int, float]], console: Printable = stderr):
    for name, count, total in rows:
        console.print(f"{name}: {total:.3f}s ({count}x)")


class NoopStatus:
    def start(self):
        pass

    def update(self, message: str = ""):
        pass

    def stop(self):
        pass
