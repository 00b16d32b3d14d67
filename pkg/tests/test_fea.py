import numpy as np
import pytest

from lvto.fea import (
    InvalidStiffnessError,
    LoadCase,
    MacroMesh,
    MechanismError,
    basis,
    check_stiffness,
    constitutive_matrix,
    element_matrix,
    element_stiffness,
    element_stress,
    isotropic_components,
    solve,
)

ORTHO = np.array([2.0, 0.5, 1.5, 0.6])


def cantilever(nx: int = 6, ny: int = 3) -> tuple[MacroMesh, LoadCase]:
    mesh = MacroMesh(nx, ny)
    fixed = [d for j in range(ny + 1) for d in mesh.dofs(0, j)]
    F = np.zeros(mesh.ndof)
    F[mesh.dofs(nx, 0)[1]] = -1.0
    return mesh, LoadCase("tip", F, fixed)


def uniform_ke(mesh: MacroMesh, Y: np.ndarray) -> np.ndarray:
    return element_stiffness(np.tile(Y, (mesh.n_elements, 1)))


def test_basis_combination():
    K = basis().matrices
    assert K.shape == (4, 8, 8)
    for k in K:
        np.testing.assert_allclose(k, k.T, atol=1e-15)

    expected = element_matrix(constitutive_matrix(ORTHO))
    np.testing.assert_allclose(basis().combine(ORTHO), expected, atol=1e-12)
    np.testing.assert_allclose(basis().combine(2 * ORTHO), 2 * basis().combine(ORTHO), atol=1e-12)


def test_isotropic_components():
    expected = [1 / 0.91, 0.3 / 0.91, 1 / 0.91, 1 / 2.6]
    np.testing.assert_allclose(isotropic_components(1.0, 0.3), expected)


def test_rigid_body_modes():
    ke = basis().combine(ORTHO)
    x = np.array([0.0, 1.0, 1.0, 0.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])

    modes = [np.zeros(8) for _ in range(3)]
    modes[0][0::2] = 1.0
    modes[1][1::2] = 1.0
    modes[2][0::2], modes[2][1::2] = -y, x
    for u in modes:
        np.testing.assert_allclose(ke @ u, 0.0, atol=1e-12)

    eig = np.linalg.eigvalsh(ke)
    assert (np.abs(eig) < 1e-10 * eig.max()).sum() == 3


@pytest.mark.parametrize(
    "Y",
    [[1.0, 2.0, 1.0, 0.3], [0.0, 0.0, 1.0, 0.3], [1.0, 0.1, 1.0, -0.2], [np.nan, 0.0, 1.0, 1.0]],
)
def test_invalid_stiffness(Y: list[float]):
    with pytest.raises(InvalidStiffnessError):
        check_stiffness([ORTHO, Y])


def test_mesh_numbering():
    mesh = MacroMesh(3, 2)
    assert mesh.ndof == 24
    assert mesh.node(3, 2) == 11
    assert mesh.edof[0].tolist() == [0, 1, 2, 3, 10, 11, 8, 9]
    np.testing.assert_array_equal(mesh.centroids()[4], [1.5, 1.5])

    with pytest.raises(ValueError):
        MacroMesh(0, 2)
    with pytest.raises(ValueError):
        MacroMesh(2, 2, np.ones(3, dtype=bool))


def test_uniform_tension_patch():
    mesh = MacroMesh(1, 1)
    fixed = [*mesh.dofs(0, 0), mesh.dofs(0, 1)[0]]
    F = np.zeros(mesh.ndof)
    F[mesh.dofs(1, 0)[0]] = 0.5
    F[mesh.dofs(1, 1)[0]] = 0.5

    sol = solve(mesh, [LoadCase("pull", F, fixed)], uniform_ke(mesh, ORTHO))

    exx, eyy = np.linalg.solve([[ORTHO[0], ORTHO[1]], [ORTHO[1], ORTHO[2]]], [1.0, 0.0])
    expected = np.zeros(mesh.ndof)
    expected[mesh.dofs(1, 0)[0]] = exx
    expected[mesh.dofs(0, 1)[1]] = eyy
    expected[list(mesh.dofs(1, 1))] = [exx, eyy]
    np.testing.assert_allclose(sol.U[0], expected, atol=1e-10)

    stress = element_stress(ORTHO[None, :], sol.ue[0])
    np.testing.assert_allclose(stress[0], [1.0, 0.0, 0.0], atol=1e-10)


def test_compliance_and_energy():
    mesh, load = cantilever()
    sol = solve(mesh, [load], uniform_ke(mesh, ORTHO))

    assert sol.compliance[0] > 0
    assert sol.energy[0].sum() == pytest.approx(sol.compliance[0], rel=1e-9)
    assert sol.mean_compliance == sol.compliance[0]

    stiffer = solve(mesh, [load], uniform_ke(mesh, 2 * ORTHO))
    assert stiffer.compliance[0] == pytest.approx(sol.compliance[0] / 2, rel=1e-9)


def test_stiffening_one_element_lowers_compliance():
    mesh, load = cantilever()
    Y = np.tile(ORTHO, (mesh.n_elements, 1))
    base = solve(mesh, [load], element_stiffness(Y)).compliance[0]

    Y[4] *= 3.0
    assert solve(mesh, [load], element_stiffness(Y)).compliance[0] <= base


def test_multiple_load_cases():
    mesh, load = cantilever()
    F2 = np.zeros(mesh.ndof)
    F2[mesh.dofs(mesh.nx, mesh.ny)[0]] = 1.0
    zero = LoadCase("none", np.zeros(mesh.ndof), load.fixed_dofs)

    sol = solve(mesh, [load, LoadCase("axial", F2, load.fixed_dofs), zero], uniform_ke(mesh, ORTHO))
    assert sol.U.shape == (3, mesh.ndof)
    assert sol.compliance[2] == 0.0
    assert not sol.U[2].any()
    assert sol.mean_compliance == pytest.approx(sol.compliance.mean())


def test_unsupported_structure():
    mesh, load = cantilever()
    with pytest.raises(MechanismError):
        solve(mesh, [LoadCase("free", load.F, [])], uniform_ke(mesh, ORTHO))


def test_load_vector_size_is_checked():
    mesh, load = cantilever()
    with pytest.raises(ValueError):
        solve(mesh, [LoadCase("short", load.F[:-2], load.fixed_dofs)], uniform_ke(mesh, ORTHO))
