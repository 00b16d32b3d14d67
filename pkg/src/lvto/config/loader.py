import copy
import json
import os
from collections.abc import Sequence
from importlib.abc import Traversable
from importlib.resources import files
from typing import Any

from lvto.utils import LvtoError, Printable, config_hash, get_consoles, simple_stderr, simple_stdout

Tree = dict[str, Any]


class ConfigError(LvtoError):
    pass


def defaults_path() -> Traversable:
    return files("lvto.config").joinpath("defaults.json")


def load_defaults() -> Tree:
    return json.loads(defaults_path().read_text())


def _type_name(value: object) -> str:
    return "null" if value is None else type(value).__name__


def _compatible(default: object, value: object) -> bool:
    # keys that default to null are optional and take any value
    if default is None or value is None:
        return default is None

    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)

    if isinstance(default, float):
        return isinstance(value, int | float)

    if isinstance(default, int):
        return isinstance(value, int)

    return isinstance(value, type(default))


def merge(base: Tree, override: Tree, prefix: str = "") -> Tree:
    """Deep-merge `override` into a copy of `base`.

    Keys must exist in `base` and values must match the type of the value
    they replace, otherwise a ConfigError names the offending key path."""

    merged = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in merged:
            raise ConfigError(f"unknown config key: {path}")

        current = merged[key]
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path} expects a table, got {_type_name(value)}")
            merged[key] = merge(current, value, prefix=f"{path}.")  # type: ignore
        elif _compatible(current, value):
            merged[key] = copy.deepcopy(value)
        else:
            raise ConfigError(
                f"config key {path} expects {_type_name(current)}, got {_type_name(value)}"
            )

    return merged


def parse_assignment(text: str) -> Tree:
    """Turn `a.b.c=JSON` into the nested override {"a": {"b": {"c": value}}}.

    Values that are not valid JSON are taken as plain strings."""

    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"expected key.path=value, got {text!r}")

    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw

    tree: Tree = {}
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return tree


def load_file(path: str) -> Tree:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON in {path}: {err}") from err

    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")

    return data  # type: ignore


def resolve(
    config_path: str | None = None,
    assignments: Sequence[str] = (),
    seed: int | None = None,
) -> Tree:
    """defaults <- config file <- --set assignments <- --seed"""

    tree = load_defaults()
    if config_path:
        tree = merge(tree, load_file(config_path))

    for assignment in assignments:
        tree = merge(tree, parse_assignment(assignment))

    if seed is not None:
        tree = merge(tree, {"seed": seed})

    if tree["seed"] < 0:
        raise ConfigError(f"seed must be non-negative, got {tree['seed']}")

    if tree["workers"] < 1:
        raise ConfigError(f"workers must be at least 1, got {tree['workers']}")

    return tree


class Config:
    command: str | None
    tree: Tree
    out_dir: str
    config_path: str | None
    field_path: str | None

    stdout: Printable
    stderr: Printable

    def __init__(
        self,
        command: str | None = None,
        config_path: str | None = None,
        out_dir: str = "out",
        seed: int | None = None,
        assignments: Sequence[str] = (),
        field_path: str | None = None,
        debug: bool = False,
        verbose: bool = False,
        perf: bool = False,
    ):
        self.command = command
        self.config_path = config_path
        self.out_dir = out_dir
        self.seed_override = seed
        self.assignments = list(assignments)
        self.field_path = field_path
        self.debug = debug
        self.verbose = verbose
        self.perf = perf
        self.stdout = simple_stdout
        self.stderr = simple_stderr
        self.tree = {}

    def resolve(self) -> Tree:
        self.tree = resolve(self.config_path, self.assignments, self.seed_override)
        return self.tree

    @property
    def seed(self) -> int:
        return self.tree["seed"]

    @property
    def workers(self) -> int:
        return self.tree["workers"]

    @property
    def hash(self) -> str:
        return config_hash(self.tree)

    def section(self, name: str) -> Tree:
        return self.tree[name]

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def setup_consoles(self):
        self.stdout, self.stderr = get_consoles()
