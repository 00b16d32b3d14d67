import contextlib
import hashlib
import json
import os
import sys
import tempfile
import threading
import time
from collections.abc import Iterator
from enum import Enum
from pathlib import Path
from typing import Protocol


class LvtoError(Exception):
    """Base class for every domain failure raised by lvto."""


class Printable(Protocol):
    def print(self, msg: object | None = None, style: object | None = None) -> None: ...


class SimpleConsole:
    """Plain-text stand-in for a rich console, used when the output is not a tty."""

    def __init__(self, file: object):
        self.file = file

    def print(self, msg: object | None = None, style: object | None = None) -> None:
        text = "" if msg is None else str(msg)
        self.file.write(text + "\n")  # type: ignore

    @property
    def is_terminal(self) -> bool:
        return False


def is_terminal(file: object) -> bool:
    isatty = getattr(file, "isatty", None)
    return bool(isatty and isatty())


def get_console(file: object) -> Printable:
    if is_terminal(file):
        from rich.console import Console

        return Console(file=file)  # type: ignore

    if file is sys.stdout:
        return simple_stdout
    if file is sys.stderr:
        return simple_stderr
    return SimpleConsole(file)


# results go to plain stdout, progress and logs may get a rich stderr
def get_consoles() -> tuple[Printable, Printable]:
    return simple_stdout, get_console(sys.stderr)


class LogLevel(Enum):
    DISABLED = 0
    TRACE = 1
    DEBUG = 2
    INFO = 3
    WARNING = 4
    ERROR = 5

    @classmethod
    def from_flags(cls, debug: bool = False, perf: bool = False) -> "LogLevel":
        if perf:
            return cls.TRACE
        return cls.DEBUG if debug else cls.INFO


class SimpleLogger:
    """Leveled logger writing `+seconds LEVEL message` lines to a console.

    Timestamps count from the last `enable`, so a run log reads as a timeline.
    """

    level: LogLevel
    console: Printable | None
    warnings: int

    def __init__(self, level: LogLevel = LogLevel.INFO):
        self.level = level
        self.console = None
        self.warnings = 0
        self._t0 = time.perf_counter()

    def enabled_for(self, level: LogLevel) -> bool:
        if self.console is None or self.level == LogLevel.DISABLED:
            return False
        return level.value >= self.level.value

    def _log(self, level: LogLevel, message: object):
        if level == LogLevel.WARNING:
            self.warnings += 1

        if not self.enabled_for(level):
            return

        assert self.console is not None
        elapsed = time.perf_counter() - self._t0
        self.console.print(f"+{elapsed:8.3f}s\t{level.name}\t{message}")

    def trace(self, message: object):
        self._log(LogLevel.TRACE, message)

    def debug(self, message: object):
        self._log(LogLevel.DEBUG, message)

    def info(self, message: object):
        self._log(LogLevel.INFO, message)

    def warning(self, message: object):
        self._log(LogLevel.WARNING, message)

    def error(self, message: object):
        self._log(LogLevel.ERROR, message)

    def disable(self):
        self.level = LogLevel.DISABLED
        self.console = None

    def enable(self, console: Printable, level: LogLevel = LogLevel.INFO):
        self.level = level
        self.console = console
        self.warnings = 0
        self._t0 = time.perf_counter()


class Timings:
    """Accumulated wall time per named phase, in first-seen order."""

    def __init__(self):
        self._lock = threading.Lock()
        self.totals: dict[str, float] = {}
        self.counts: dict[str, int] = {}

    def add(self, name: str, elapsed: float):
        with self._lock:
            self.totals[name] = self.totals.get(name, 0.0) + elapsed
            self.counts[name] = self.counts.get(name, 0) + 1

    def rows(self) -> list[tuple[str, int, float]]:
        return [(name, self.counts[name], total) for name, total in self.totals.items()]

    def clear(self):
        self.totals.clear()
        self.counts.clear()


@contextlib.contextmanager
def timer(description: str, phase: str | None = None) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - start
        timings.add(phase or description, elapsed)
        logger.trace(f"{description}: {elapsed:.3f}s")


def get_version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("lvto")
    except PackageNotFoundError:
        # source checkout that was never installed
        return "0.0.0+unknown"


def config_hash(tree: object) -> str:
    canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write `data` to `path` through a temporary file in the same directory."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.remove(tmp)
        raise


logger = SimpleLogger()
timings = Timings()
simple_stdout = SimpleConsole(sys.stdout)
simple_stderr = SimpleConsole(sys.stderr)
