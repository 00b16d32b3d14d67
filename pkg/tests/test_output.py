import numpy as np
import pytest

from lvto.fea import MacroMesh
from lvto.homog import Dataset
from lvto.output.basic import (
    FieldTable,
    MalformedFileError,
    csv_text,
    pgm_bytes,
    read_csv,
    read_dataset,
    read_json,
    read_pgm,
    vtk_text,
    write_dataset,
    write_json,
)
from lvto.output.render import class_image, density_png, structure_png
from lvto.utils import LogLevel, SimpleLogger, Timings, atomic_write, config_hash, timer, timings

META = {"version": "1.2.3", "config": "abc123", "seed": 7}


def test_csv_text_with_metadata():
    text = csv_text(["a", "b"], [[1, 0.1], [np.int64(2), np.float64(1e-9)]], META)
    lines = text.splitlines()
    assert lines[:3] == ["# lvto 1.2.3", "# config abc123", "# seed 7"]
    assert lines[3:] == ["a,b", "1,0.1", "2,1e-09"]


def test_dataset_file(tmp_path):
    dataset = Dataset([1, 1, 2], [0.2, 0.4, 0.2], [[1.0, 0.1, 1.0, 0.3]] * 3)
    path = str(tmp_path / "dataset.csv")
    write_dataset(path, dataset, META)

    header, rows = read_csv(path)
    assert header == ["class_id", "vf", "C11", "C12", "C22", "C66"]
    assert len(rows) == 3

    loaded = read_dataset(path)
    np.testing.assert_array_equal(loaded.class_ids, dataset.class_ids)
    np.testing.assert_array_equal(loaded.Y, dataset.Y)


def test_malformed_files(tmp_path):
    with pytest.raises(MalformedFileError):
        read_csv(str(tmp_path / "missing.csv"))

    bad = tmp_path / "bad.csv"
    bad.write_text("class_id,vf,C11\n1,abc,2\n")
    with pytest.raises(MalformedFileError):
        read_dataset(str(bad))

    with pytest.raises(MalformedFileError):
        read_json(str(tmp_path / "missing.json"))

    other = tmp_path / "other.csv"
    other.write_text("x,y\n1,2\n")
    with pytest.raises(MalformedFileError):
        FieldTable.read(str(other))


def test_pgm(tmp_path):
    cells = np.zeros((4, 6), dtype=bool)
    cells[0, :] = True
    data = pgm_bytes(cells, META)
    assert data.startswith(b"P5\n# lvto 1.2.3\n")

    path = tmp_path / "cell.pgm"
    path.write_bytes(data)
    np.testing.assert_array_equal(read_pgm(str(path)), cells)
    # bottom row of the cell is the last row of the file
    assert data.endswith(bytes([255]) * 6)


def test_json(tmp_path):
    path = str(tmp_path / "model.json")
    write_json(path, {"levels": [1, 2], "phi": [0.5]})
    assert read_json(path) == {"levels": [1, 2], "phi": [0.5]}


def test_vtk_text():
    mesh = MacroMesh(3, 2)
    text = vtk_text(mesh, {"rho": np.linspace(0.1, 0.6, 6)}, META)
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DIMENSIONS 4 3 1" in lines
    assert "CELL_DATA 6" in lines
    assert lines[-6:] == [repr(float(v)) for v in np.linspace(0.1, 0.6, 6)]


def test_field_table():
    rows = [[e, e % 2, e // 2, 1, 0.5, 0.5, 0.0, 0.0, 1, 0.0, 0.0, 0.0, 0.0] for e in range(6)]
    table = FieldTable.from_values(rows)
    assert (table.nx, table.ny) == (2, 3)
    assert table.column("class", int).tolist() == [1] * 6


def test_class_image():
    rgba = class_image(2, 1, np.array([True, False]), np.array([3, 0]), [1, 2, 3])
    assert rgba.shape == (1, 2, 4)
    assert rgba[0, 1].tolist() == [1.0, 1.0, 1.0, 1.0]
    assert rgba[0, 0].tolist() != [1.0, 1.0, 1.0, 1.0]


def test_png_output_is_deterministic():
    image = np.zeros((20, 30), dtype=bool)
    image[5:10, :] = True
    assert structure_png(image, META) == structure_png(image, META)
    assert structure_png(image, META).startswith(b"\x89PNG")

    active = np.array([True, True, False, True])
    rho = np.array([0.2, 0.5, 0.0, 0.9])
    assert density_png(2, 2, active, rho, META) == density_png(2, 2, active, rho, META)


def test_atomic_write(tmp_path):
    path = tmp_path / "nested" / "out.txt"
    atomic_write(path, "one")
    atomic_write(path, "two")
    assert path.read_text() == "two"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_config_hash():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


class Recorder:
    def __init__(self):
        self.lines: list[str] = []

    def print(self, msg: object | None = None, style: object | None = None) -> None:
        self.lines.append(str(msg))


def test_logger_levels():
    console = Recorder()
    log = SimpleLogger()
    log.info("dropped")

    log.enable(console, LogLevel.INFO)
    log.debug("hidden")
    log.info("shown")
    log.warning("warned")
    assert len(console.lines) == 2
    assert "INFO\tshown" in console.lines[0]
    assert console.lines[0].startswith("+")
    assert log.warnings == 1

    log.disable()
    log.error("gone")
    assert len(console.lines) == 2


def test_log_level_from_flags():
    assert LogLevel.from_flags() == LogLevel.INFO
    assert LogLevel.from_flags(debug=True) == LogLevel.DEBUG
    assert LogLevel.from_flags(debug=True, perf=True) == LogLevel.TRACE


def test_timings():
    table = Timings()
    table.add("fit start", 0.5)
    table.add("stage1", 2.0)
    table.add("fit start", 0.25)
    assert table.rows() == [("fit start", 2, 0.75), ("stage1", 1, 2.0)]

    timings.clear()
    for k in range(3):
        with timer(f"repetition {k}", phase="repetition"):
            pass
    assert [(name, n) for name, n, _ in timings.rows()] == [("repetition", 3)]
