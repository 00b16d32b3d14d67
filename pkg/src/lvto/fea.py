"""Macro-scale plane-stress finite elements on a regular grid of unit squares.

Element stiffness matrices are built from the four orthotropic stiffness
components [C11, C12, C22, C66] by linear combination of precomputed basis
matrices, so that the derivative of an element matrix with respect to a
component is the basis matrix itself.

Conventions:
- node (i, j), 0 <= i <= nx, 0 <= j <= ny, has id j * (nx + 1) + i and dofs
  (2 * id, 2 * id + 1) for (ux, uy)
- element (ex, ey) has id ey * nx + ex and nodes counter-clockwise from its
  lower-left corner
- y points up
"""

from __future__ import annotations

from collections.abc import Sequence
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.linalg import splu

from lvto.utils import LvtoError, logger

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

GAUSS_POINTS = (-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0))

# local node coordinates in the reference square [-1, 1]^2
LOCAL_NODES = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))

COMPONENTS = ("C11", "C12", "C22", "C66")


class InvalidStiffnessError(LvtoError):
    pass


class MechanismError(LvtoError):
    pass


def strain_displacement(xi: float, eta: float) -> FloatArray:
    """B matrix (3x8) of a unit square bilinear element at (xi, eta).

    Engineering strains [exx, eyy, gxy]; the element is [0, 1]^2 so
    d/dx = 2 d/dxi."""

    dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    dx, dy = 2.0 * dxi, 2.0 * deta

    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


def element_matrix(D: ArrayLike) -> FloatArray:
    """Integrate B^T D B over the unit element with 2x2 Gauss quadrature."""

    D = np.asarray(D, dtype=float)
    ke = np.zeros((8, 8))
    for xi in GAUSS_POINTS:
        for eta in GAUSS_POINTS:
            B = strain_displacement(xi, eta)
            # unit weights, detJ = 1/4
            ke += 0.25 * B.T @ D @ B
    return ke


def constitutive_matrix(Y: ArrayLike) -> FloatArray:
    """3x3 plane-stress constitutive matrix (or a stack of them) from [C11, C12, C22, C66]."""

    Y = np.asarray(Y, dtype=float)
    D = np.zeros((*Y.shape[:-1], 3, 3))
    D[..., 0, 0] = Y[..., 0]
    D[..., 0, 1] = Y[..., 1]
    D[..., 1, 0] = Y[..., 1]
    D[..., 1, 1] = Y[..., 2]
    D[..., 2, 2] = Y[..., 3]
    return D


def isotropic_components(E: float, nu: float) -> FloatArray:
    """[C11, C12, C22, C66] of an isotropic plane-stress material."""

    c = E / (1.0 - nu**2)
    return np.array([c, nu * c, c, E / (2.0 * (1.0 + nu))])


class BasisK:
    """The four 8x8 element matrices obtained with a unit value of one stiffness
    component and zeros elsewhere."""

    matrices: FloatArray

    def __init__(self, matrices: FloatArray):
        self.matrices = matrices

    @classmethod
    def build(cls) -> BasisK:
        unit = np.eye(4)
        return cls(np.stack([element_matrix(constitutive_matrix(u)) for u in unit]))

    def combine(self, Y: ArrayLike) -> FloatArray:
        """k_e = sum_i Y_i K_i, for one component vector or a stack (m, 4)."""
        return np.einsum("...i,ijk->...jk", np.asarray(Y, dtype=float), self.matrices)

    def energies(self, ue: FloatArray) -> FloatArray:
        """u_e^T K_i u_e for every element and basis matrix, shape (..., 4)."""
        return np.einsum("...j,ijk,...k->...i", ue, self.matrices, ue)


@lru_cache(maxsize=1)
def basis() -> BasisK:
    return BasisK.build()


def check_stiffness(Y: ArrayLike) -> None:
    """Raise InvalidStiffnessError unless every row of Y is positive definite."""

    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    c11, c12, c22, c66 = Y[:, 0], Y[:, 1], Y[:, 2], Y[:, 3]
    ok = (c11 > 0) & (c22 > 0) & (c66 > 0) & (c11 * c22 - c12**2 > 0)
    ok &= np.isfinite(Y).all(axis=1)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise InvalidStiffnessError(
            f"stiffness {Y[bad].tolist()} (row {bad}) is not positive definite"
        )


def element_stiffness(Y: ArrayLike) -> FloatArray:
    check_stiffness(Y)
    return basis().combine(np.asarray(Y, dtype=float))


def element_stress(Y: ArrayLike, ue: FloatArray) -> FloatArray:
    """Stress [sxx, syy, txy] at the element centre, for stacks Y (m, 4), ue (m, 8)."""

    B = strain_displacement(0.0, 0.0)
    strain = np.einsum("ij,...j->...i", B, ue)
    return np.einsum("...ij,...j->...i", constitutive_matrix(Y), strain)


class MacroMesh:
    nx: int
    ny: int
    active: NDArray[np.bool_]
    edof: IntArray

    def __init__(self, nx: int, ny: int, active: ArrayLike | None = None):
        if nx < 1 or ny < 1:
            raise ValueError(f"invalid mesh size {nx}x{ny}")

        self.nx = nx
        self.ny = ny

        if active is None:
            self.active = np.ones(nx * ny, dtype=bool)
        else:
            self.active = np.asarray(active, dtype=bool).ravel()
            if self.active.size != nx * ny:
                raise ValueError("active mask does not match the mesh size")

        ex, ey = self.element_indices()
        n0 = ey * (nx + 1) + ex
        nodes = np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)
        self.edof = np.empty((nx * ny, 8), dtype=np.int64)
        self.edof[:, 0::2] = 2 * nodes
        self.edof[:, 1::2] = 2 * nodes + 1

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def ndof(self) -> int:
        return 2 * (self.nx + 1) * (self.ny + 1)

    def element_indices(self) -> tuple[IntArray, IntArray]:
        e = np.arange(self.nx * self.ny)
        return e % self.nx, e // self.nx

    def centroids(self) -> FloatArray:
        ex, ey = self.element_indices()
        return np.stack([ex + 0.5, ey + 0.5], axis=1)

    def node(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def dofs(self, i: int, j: int) -> tuple[int, int]:
        n = self.node(i, j)
        return 2 * n, 2 * n + 1

    def __repr__(self) -> str:
        return f"MacroMesh(nx={self.nx}, ny={self.ny}, active={self.n_active})"


class LoadCase:
    name: str
    F: FloatArray
    fixed_dofs: IntArray

    def __init__(self, name: str, F: ArrayLike, fixed_dofs: Sequence[int] | IntArray):
        self.name = name
        self.F = np.asarray(F, dtype=float)
        self.fixed_dofs = np.unique(np.asarray(fixed_dofs, dtype=np.int64))

        if not np.isfinite(self.F).all():
            raise ValueError(f"load case {name!r} has non-finite forces")

        loaded = np.flatnonzero(self.F[self.fixed_dofs])
        if loaded.size:
            logger.debug(f"load case {name!r}: forces on fixed dofs are ignored")


class Solution:
    U: FloatArray  # (ncase, ndof)
    compliance: FloatArray  # (ncase,)
    ue: FloatArray  # (ncase, m, 8)
    energy: FloatArray  # (ncase, m), u_e^T k_e u_e

    def __init__(self, U: FloatArray, compliance: FloatArray, ue: FloatArray, energy: FloatArray):
        self.U = U
        self.compliance = compliance
        self.ue = ue
        self.energy = energy

    @property
    def mean_compliance(self) -> float:
        return float(self.compliance.mean())


def assemble(mesh: MacroMesh, ke: FloatArray) -> sp.csc_matrix:
    rows = np.repeat(mesh.edof, 8, axis=1).ravel()
    cols = np.tile(mesh.edof, (1, 8)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.ndof, mesh.ndof))
    return K.tocsc()


def solve(mesh: MacroMesh, loads: Sequence[LoadCase], ke: FloatArray) -> Solution:
    """Solve K U = F for every load case with the element matrices `ke` (m, 8, 8)."""

    if ke.shape != (mesh.n_elements, 8, 8):
        raise ValueError(f"expected element matrices of shape {(mesh.n_elements, 8, 8)}")

    K = assemble(mesh, ke)
    ndof = mesh.ndof
    U = np.zeros((len(loads), ndof))

    # one factorization per distinct support set
    factors: dict[bytes, tuple[IntArray, object, sp.csc_matrix]] = {}
    for n, load in enumerate(loads):
        if load.F.shape != (ndof,):
            raise ValueError(f"load case {load.name!r} has {load.F.size} entries, expected {ndof}")

        if not load.fixed_dofs.size:
            raise MechanismError(f"load case {load.name!r} has no supports")

        key = load.fixed_dofs.tobytes()
        if key not in factors:
            free = np.setdiff1d(np.arange(ndof), load.fixed_dofs)
            Kff = K[free][:, free].tocsc()
            try:
                lu = splu(Kff, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as err:
                raise MechanismError(f"singular stiffness matrix: {err}") from err
            factors[key] = (free, lu, Kff)

        free, lu, Kff = factors[key]
        Ff = load.F[free]
        if not Ff.any():
            continue

        Uf = lu.solve(Ff)  # type: ignore
        residual = np.linalg.norm(Kff @ Uf - Ff) / np.linalg.norm(Ff)
        if not np.isfinite(Uf).all() or residual > 1e-10:
            raise MechanismError(
                f"load case {load.name!r}: unstable system (relative residual {residual:.2e})"
            )
        U[n, free] = Uf

    ue = U[:, mesh.edof]
    energy = np.einsum("cej,ejk,cek->ce", ue, ke, ue)
    compliance = np.array([load.F @ U[n] for n, load in enumerate(loads)])
    return Solution(U=U, compliance=compliance, ue=ue, energy=energy)
