import numpy as np
import pytest

from lvto import fea
from lvto.problems import PRESETS, half_mbb, l_beam, make_problem, mbb_multi


def test_l_beam_layout():
    bench = l_beam(nx=10, ny=10, cutout=0.6)
    mesh = bench.mesh

    assert bench.vmax == 0.6
    assert mesh.n_active == 100 - 36
    # the removed block is the top-right corner
    assert not mesh.active[9 * 10 + 9]
    assert mesh.active[9 * 10 + 3]
    assert not mesh.active[9 * 10 + 4]
    assert mesh.active[3 * 10 + 9]

    load = bench.loads[0]
    assert load.F[mesh.dofs(10, 4)[1]] == -1.0
    assert set(load.fixed_dofs.tolist()) == {d for i in range(5) for d in mesh.dofs(i, 10)}


def test_mbb_multi_has_two_load_cases():
    bench = mbb_multi(nx=20, ny=10, load=2.0)
    assert [lc.name for lc in bench.loads] == ["center", "quarters"]
    assert bench.loads[0].F.sum() == -2.0
    assert bench.loads[1].F.sum() == -2.0
    np.testing.assert_array_equal(bench.loads[0].fixed_dofs, bench.loads[1].fixed_dofs)


def test_half_mbb_supports():
    bench = half_mbb(nx=12, ny=4)
    mesh = bench.mesh
    fixed = set(bench.loads[0].fixed_dofs.tolist())
    assert all(mesh.dofs(0, j)[0] in fixed for j in range(5))
    assert mesh.dofs(12, 0)[1] in fixed
    assert mesh.dofs(0, 0)[1] not in fixed


@pytest.mark.parametrize("name", PRESETS)
def test_presets_are_solvable(name: str):
    bench = make_problem(name, nx=12, ny=8)
    Y = np.tile(fea.isotropic_components(1.0, 0.3), (bench.mesh.n_elements, 1))
    sol = fea.solve(bench.mesh, bench.loads, fea.element_stiffness(Y))
    assert np.all(sol.compliance > 0)


def test_make_problem_errors():
    with pytest.raises(ValueError):
        make_problem("bridge")
    with pytest.raises(ValueError):
        l_beam(cutout=1.0)
    with pytest.raises(ValueError):
        l_beam(nx=2, ny=2, cutout=0.9)
