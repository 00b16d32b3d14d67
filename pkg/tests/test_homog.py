import numpy as np
import pytest

from lvto.homog import (
    BaseMaterial,
    Dataset,
    DegenerateCellError,
    NonOrthotropicCellError,
    SampleHomogenizationError,
    StiffnessVec,
    homogenize,
    homogenize_library,
)
from lvto.microlib import (
    LibrarySample,
    PixelGrid,
    Rod,
    _segment_distance,
    build_library,
    get_class,
    rasterize,
    solve_thickness,
)


def diagonal_rod_grid(resolution: int, thickness: float) -> PixelGrid:
    centres = (np.arange(resolution) + 0.5) / resolution
    px, py = np.meshgrid(centres, centres)
    field = np.full((resolution, resolution), np.inf)
    for sx in (-1.0, 0.0, 1.0):
        for sy in (-1.0, 0.0, 1.0):
            rod = _segment_distance(px + sx, py + sy, Rod((0.0, 0.0), (1.0, 1.0)))
            field = np.minimum(field, rod)
    return PixelGrid(field <= 0.5 * thickness)


def test_solid_cell_recovers_base_material():
    grid = PixelGrid(np.ones((100, 100), dtype=bool))
    C = homogenize(grid, BaseMaterial(E=1.0, nu=0.3))

    assert C.c11 == pytest.approx(1 / 0.91, rel=1e-6)
    assert C.c22 == pytest.approx(1 / 0.91, rel=1e-6)
    assert C.c12 == pytest.approx(0.3 / 0.91, rel=1e-6)
    assert C.c66 == pytest.approx(1 / 2.6, rel=1e-6)


def test_stiffness_scales_with_modulus():
    grid = rasterize(get_class(4), 0.2, 40)
    one = homogenize(grid, BaseMaterial(E=1.0))
    two = homogenize(grid, BaseMaterial(E=2.0))
    np.testing.assert_allclose(two.values, 2 * one.values, rtol=1e-9)


def test_void_cell_is_degenerate():
    with pytest.raises(DegenerateCellError):
        homogenize(PixelGrid(np.zeros((20, 20), dtype=bool)))


@pytest.mark.parametrize("class_id", [1, 2, 3, 4])
def test_cubic_cells_are_square_symmetric(class_id: int):
    C = homogenize(rasterize(get_class(class_id), 0.2, 40))
    assert C.c11 == pytest.approx(C.c22, rel=1e-6)
    assert C.is_positive_definite()


def test_stiff_axis_cells_are_mirrored():
    e = homogenize(rasterize(get_class(5), 0.15, 40))
    f = homogenize(rasterize(get_class(6), 0.15, 40))

    np.testing.assert_allclose(e.values, f.mirrored().values, rtol=1e-6)
    assert e.c11 > e.c22


def test_diagonal_bracing_carries_shear():
    cells, vfs = {}, {}
    for class_id in (1, 2):
        thickness, vfs[class_id] = solve_thickness(get_class(class_id), 0.5, 50)
        cells[class_id] = rasterize(get_class(class_id), thickness, 50)
        assert cells[class_id].volume_fraction == vfs[class_id]

    # at 50 px the cross (0.4816, 0.5376) and the X (0.4528, 0.5104) step past 0.5
    assert abs(vfs[1] - 0.4816) <= 1e-12
    assert abs(vfs[2] - 0.5104) <= 1e-12

    cross, x = homogenize(cells[1]), homogenize(cells[2])
    assert x.c66 / vfs[2] > 2 * cross.c66 / vfs[1]


def test_single_diagonal_is_not_orthotropic():
    with pytest.raises(NonOrthotropicCellError):
        homogenize(diagonal_rod_grid(40, 0.2))


def test_stiffness_vec():
    C = StiffnessVec([3.0, 1.0, 2.0, 0.5])
    assert C.mirrored().values.tolist() == [2.0, 1.0, 3.0, 0.5]
    assert C.is_positive_definite()
    assert not StiffnessVec([1.0, 2.0, 1.0, 0.5]).is_positive_definite()


def test_base_material_validation():
    with pytest.raises(ValueError):
        BaseMaterial(E=0.0)
    with pytest.raises(ValueError):
        BaseMaterial(nu=0.5)
    assert BaseMaterial(E=2.0, void_ratio=1e-9).E_void == pytest.approx(2e-9)


def test_library_errors_name_the_sample():
    void = PixelGrid(np.zeros((20, 20), dtype=bool))
    solid = PixelGrid(np.ones((20, 20), dtype=bool))
    samples = [LibrarySample(1, 1.0, 1.0, 1.0, solid), LibrarySample(2, 0.4, 0.0, 0.1, void)]

    with pytest.raises(SampleHomogenizationError) as excinfo:
        homogenize_library(samples, workers=2)
    assert "B_0.4000" in str(excinfo.value)


def test_library_is_ordered(small_dataset: Dataset):
    assert len(small_dataset) == 36
    assert small_dataset.levels == [1, 2, 3, 4, 5, 6]

    keys = list(zip(small_dataset.class_ids.tolist(), small_dataset.vf.tolist()))
    assert keys == sorted(keys)


def test_diagonal_components_grow_with_volume_fraction(small_dataset: Dataset):
    # nested pixel sets give a stiffer cell, so every diagonal entry of C grows
    for c in small_dataset.levels:
        Y = small_dataset.Y[small_dataset.rows(c)]
        for j in (0, 2, 3):
            assert np.all(np.diff(Y[:, j]) >= -1e-12), (c, j)


@pytest.mark.parametrize("resolution", [40, pytest.param(100, marks=pytest.mark.slow)])
def test_default_library_homogenizes(resolution: int):
    data = homogenize_library(build_library(resolution=resolution), workers=4)
    assert len(data) == 120

    for c in (1, 2, 3, 4):
        Y = data.Y[data.rows(c)]
        np.testing.assert_allclose(Y[:, 0], Y[:, 2], rtol=1e-6)

    e, f = data.Y[data.rows(5)], data.Y[data.rows(6)]
    np.testing.assert_allclose(e, f[:, [2, 1, 0, 3]], rtol=1e-6)
