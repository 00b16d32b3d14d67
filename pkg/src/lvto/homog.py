"""Periodic homogenization of pixel unit cells.

One bilinear element per pixel, opposite cell edges share nodes, and the
fluctuation field is solved for the three unit macroscopic strains
(exx, eyy, gxy). The effective stiffness is the volume average of the mutual
strain energies.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.linalg import splu

from lvto.fea import COMPONENTS, constitutive_matrix, element_matrix, isotropic_components
from lvto.microlib import LibrarySample, PixelGrid
from lvto.utils import LvtoError, logger, timer

ORTHOTROPY_TOL = 1e-3

# nodal displacements of the unit element [0, 1]^2 (ccw nodes) under unit
# exx, eyy and engineering shear gxy
_UNIT_STRAINS = np.array(
    [
        # exx: u = (x, 0)
        [0, 0, 1, 0, 1, 0, 0, 0],
        # eyy: u = (0, y)
        [0, 0, 0, 0, 0, 1, 0, 1],
        # gxy: u = (y / 2, x / 2)
        [0, 0, 0, 0.5, 0.5, 0.5, 0.5, 0],
    ],
    dtype=float,
).T


class DegenerateCellError(LvtoError):
    pass


class NonOrthotropicCellError(LvtoError):
    pass


class SampleHomogenizationError(LvtoError):
    pass


class BaseMaterial:
    E: float
    nu: float
    void_ratio: float

    def __init__(self, E: float = 1.0, nu: float = 0.3, void_ratio: float = 1e-9):
        if E <= 0:
            raise ValueError(f"E must be positive, got {E}")
        if not 0 < nu < 0.5:
            raise ValueError(f"nu must be in (0, 0.5), got {nu}")
        if not 0 < void_ratio < 1:
            raise ValueError(f"void_ratio must be in (0, 1), got {void_ratio}")

        self.E = E
        self.nu = nu
        self.void_ratio = void_ratio

    @property
    def E_void(self) -> float:  # noqa: N802
        return self.void_ratio * self.E

    def __repr__(self) -> str:
        return f"BaseMaterial(E={self.E}, nu={self.nu}, E_void={self.E_void:g})"


class StiffnessVec:
    """[C11, C12, C22, C66] of a plane-stress orthotropic material."""

    values: NDArray[np.float64]

    def __init__(self, values: ArrayLike):
        self.values = np.asarray(values, dtype=float).reshape(4)

    c11 = property(lambda self: float(self.values[0]))
    c12 = property(lambda self: float(self.values[1]))
    c22 = property(lambda self: float(self.values[2]))
    c66 = property(lambda self: float(self.values[3]))

    def mirrored(self) -> "StiffnessVec":
        """Components of the same cell with the x and y axes swapped."""
        return StiffnessVec([self.c22, self.c12, self.c11, self.c66])

    def is_positive_definite(self) -> bool:
        return self.c11 > 0 and self.c22 > 0 and self.c66 > 0 and self.c11 * self.c22 > self.c12**2

    def __repr__(self) -> str:
        parts = ", ".join(f"{n}={v:.6g}" for n, v in zip(COMPONENTS, self.values, strict=True))
        return f"StiffnessVec({parts})"


def _periodic_edof(resolution: int) -> NDArray[np.int64]:
    n = resolution
    iy, ix = np.divmod(np.arange(n * n), n)
    ix1, iy1 = (ix + 1) % n, (iy + 1) % n
    nodes = np.stack([iy * n + ix, iy * n + ix1, iy1 * n + ix1, iy1 * n + ix], axis=1)
    edof = np.empty((n * n, 8), dtype=np.int64)
    edof[:, 0::2] = 2 * nodes
    edof[:, 1::2] = 2 * nodes + 1
    return edof


def homogenize(grid: PixelGrid, mat: BaseMaterial | None = None) -> StiffnessVec:
    mat = mat or BaseMaterial()
    solid = grid.cells.ravel()
    if not solid.any():
        raise DegenerateCellError("cell has no solid pixels")

    n = grid.resolution
    nel = n * n
    ndof = 2 * nel

    ke = element_matrix(constitutive_matrix(isotropic_components(1.0, mat.nu)))
    moduli = np.where(solid, mat.E, mat.E_void)
    edof = _periodic_edof(n)

    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    vals = (moduli[:, None, None] * ke).ravel()
    K = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsc()

    # right-hand sides: element forces of the affine fields, summed per dof
    fe = np.einsum("e,ab,bs->eas", moduli, ke, _UNIT_STRAINS)
    F = np.zeros((ndof, 3))
    for s in range(3):
        np.add.at(F[:, s], edof.ravel(), fe[:, :, s].ravel())

    # pin node 0 against rigid translation
    free = np.arange(2, ndof)
    try:
        lu = splu(K[free][:, free].tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as err:
        raise DegenerateCellError(f"singular periodic system: {err}") from err

    chi = np.zeros((ndof, 3))
    chi[free] = lu.solve(F[free])
    if not np.isfinite(chi).all():
        raise DegenerateCellError("non-finite fluctuation field")

    ue = _UNIT_STRAINS[None, :, :] - chi[edof]
    C = np.einsum("e,eai,ab,ebj->ij", moduli, ue, ke, ue) / nel
    C = 0.5 * (C + C.T)

    if abs(C[0, 2]) >= ORTHOTROPY_TOL * C[0, 0] or abs(C[1, 2]) >= ORTHOTROPY_TOL * C[0, 0]:
        raise NonOrthotropicCellError(
            f"shear coupling too large: C16={C[0, 2]:.3e}, C26={C[1, 2]:.3e}, C11={C[0, 0]:.3e}"
        )

    return StiffnessVec([C[0, 0], C[0, 1], C[1, 1], C[2, 2]])


class Dataset:
    """Homogenized library: one row per sample, ordered class-major, vf-minor."""

    class_ids: NDArray[np.int64]
    vf: NDArray[np.float64]
    Y: NDArray[np.float64]

    def __init__(self, class_ids: ArrayLike, vf: ArrayLike, Y: ArrayLike):
        self.class_ids = np.asarray(class_ids, dtype=np.int64)
        self.vf = np.asarray(vf, dtype=float)
        self.Y = np.asarray(Y, dtype=float).reshape(len(self.vf), -1)

        if not len(self.class_ids) == len(self.vf) == len(self.Y):
            raise ValueError("dataset columns have different lengths")

    def __len__(self) -> int:
        return len(self.vf)

    @property
    def levels(self) -> list[int]:
        return sorted(set(self.class_ids.tolist()))

    def subset(self, index: ArrayLike) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.class_ids[index], self.vf[index], self.Y[index])

    def rows(self, class_id: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.class_ids == class_id)

    def __repr__(self) -> str:
        return f"Dataset({len(self)} rows, levels={self.levels})"


def homogenize_library(
    samples: Sequence[LibrarySample],
    mat: BaseMaterial | None = None,
    workers: int = 1,
) -> Dataset:
    mat = mat or BaseMaterial()

    def run(sample: LibrarySample) -> StiffnessVec:
        try:
            with timer(f"homogenize {sample.name}", phase="homogenize"):
                return homogenize(sample.grid, mat)
        except LvtoError as err:
            raise SampleHomogenizationError(f"sample {sample.name}: {err}") from err

    logger.info(f"homogenizing {len(samples)} cells ({workers} workers)")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, samples))

    order = sorted(range(len(samples)), key=lambda i: (samples[i].class_id, samples[i].achieved_vf))
    return Dataset(
        class_ids=[samples[i].class_id for i in order],
        vf=[samples[i].achieved_vf for i in order],
        Y=np.stack([results[i].values for i in order]),
    )
