"""Multiscale topology optimization with a latent-variable stiffness model.

Every active macro element carries a volume fraction rho and a latent point
z = (z1, z2). Its stiffness is the model prediction Y(rho, z), scaled by the
latent-distance penalty f(z):

    k_e = f(z_e) * sum_i Y_i(rho_e, z_e) K_i

The driver runs in stages:
- stage 1 optimizes rho and z jointly, starting from a uniform design made of
  the first class; the penalty decay length shrinks along a schedule so that
  latent points settle near the anchors before they are snapped
- stage 2 snaps every latent point to its nearest class anchor and optimizes
  rho only
- the final design is assembled by tiling each element with its class unit
  cell at the optimized volume fraction

A single-class run optimizes rho with z frozen at one class anchor.
"""

from collections.abc import Sequence
from enum import Enum
from functools import lru_cache
from typing import Protocol

import numpy as np
import scipy.sparse as sp
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import KDTree

from lvto import fea
from lvto.fea import LoadCase, MacroMesh, Solution
from lvto.microlib import (
    DEFAULT_RESOLUTION,
    InfeasibleTargetError,
    get_class,
    min_thickness,
    rasterize,
    solve_thickness,
)
from lvto.mma import MmaState, mma_update
from lvto.penalty import PenaltyParams, penalty_many
from lvto.utils import LvtoError, logger, timer

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


DEFAULT_GAMMA_SCHEDULE = (1.0, 0.3, 0.1)


class OptimizationError(LvtoError):
    pass


class RunStatus(Enum):
    CONVERGED = "converged"
    MAX_ITER = "max-iter"
    ERROR = "error"

    @property
    def exit_code(self) -> int:
        return {RunStatus.CONVERGED: 0, RunStatus.MAX_ITER: 2, RunStatus.ERROR: 1}[self]


class StiffnessModel(Protocol):
    levels: list[int]

    @property
    def anchors(self) -> FloatArray: ...

    def predict_many(
        self, rho: ArrayLike, z: ArrayLike, grad: bool = True
    ) -> tuple[FloatArray, FloatArray | None, FloatArray | None]: ...


class DensityFilter:
    """Linear cone-weight filter over element centroids, rows normalized."""

    H: sp.csr_matrix

    def __init__(self, centroids: FloatArray, r_min: float):
        n = len(centroids)
        self.r_min = r_min

        if r_min <= 0:
            self.H = sp.identity(n, format="csr")
            return

        tree = KDTree(centroids)
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        for i, neighbours in enumerate(tree.query_ball_point(centroids, r_min)):
            for j in sorted(neighbours):
                w = r_min - float(np.linalg.norm(centroids[i] - centroids[j]))
                if w > 0:
                    rows.append(i)
                    cols.append(j)
                    vals.append(w)

        H = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        scale = 1.0 / np.asarray(H.sum(axis=1)).ravel()
        self.H = sp.diags(scale) @ H

    def apply(self, field: FloatArray) -> FloatArray:
        return self.H @ field

    def backward(self, grad: FloatArray) -> FloatArray:
        return self.H.T @ grad


def filter_field(raw: FloatArray, r_min: float, centroids: FloatArray) -> FloatArray:
    return DensityFilter(centroids, r_min).apply(raw)


class TopOptProblem:
    mesh: MacroMesh
    loads: list[LoadCase]
    model: StiffnessModel
    vmax: float
    rho_min: float
    rho_max: float
    z_lo: FloatArray
    z_hi: FloatArray
    penalty: PenaltyParams
    penalty_schedule: list[PenaltyParams]
    filter: DensityFilter
    active: IntArray

    def __init__(
        self,
        mesh: MacroMesh,
        loads: Sequence[LoadCase],
        model: StiffnessModel,
        vmax: float,
        rho_bounds: tuple[float, float] = (0.1, 0.95),
        z_margin: float = 0.1,
        penalty_lambda: float = 500.0,
        gamma: float | None = None,
        gamma_schedule: Sequence[float] = DEFAULT_GAMMA_SCHEDULE,
        filter_radius: float = 1.5,
        filter_enabled: bool = True,
        volume_on_filtered: bool = False,
        tol: float = 0.01,
        max_iter: int = 200,
        stiffness_floor: float = 1e-6,
        mma: dict[str, float] | None = None,
    ):
        self.mesh = mesh
        self.loads = list(loads)
        self.model = model
        self.vmax = vmax
        self.rho_min, self.rho_max = rho_bounds
        self.tol = tol
        self.max_iter = max_iter
        self.stiffness_floor = stiffness_floor
        self.volume_on_filtered = volume_on_filtered
        self.mma = dict(mma or {})

        if self.rho_min <= 0 or self.rho_max > 1 or self.rho_min >= self.rho_max:
            raise ValueError(f"invalid rho bounds {rho_bounds}")

        if not self.rho_min < vmax < self.rho_max:
            raise ValueError(f"vmax {vmax} must lie strictly inside the rho bounds {rho_bounds}")

        if mesh.n_active < 1:
            raise ValueError("problem has no active elements")

        if not self.loads:
            raise ValueError("problem has no load cases")

        self.active = np.flatnonzero(mesh.active)
        anchors = model.anchors
        lo, hi = anchors.min(axis=0), anchors.max(axis=0)
        extent = np.where(hi > lo, hi - lo, 1.0)
        self.z_lo = lo - z_margin * extent
        self.z_hi = hi + z_margin * extent

        self.penalty = PenaltyParams(anchors, lam=penalty_lambda, gamma=gamma)
        if not gamma_schedule or min(gamma_schedule) <= 0:
            raise ValueError(f"gamma schedule needs positive factors, got {list(gamma_schedule)}")
        self.penalty_schedule = [
            PenaltyParams(anchors, lam=penalty_lambda, gamma=self.penalty.gamma * s)
            for s in gamma_schedule
        ]

        radius = filter_radius if filter_enabled else 0.0
        self.filter = DensityFilter(mesh.centroids()[self.active], radius)

    @property
    def n_active(self) -> int:
        return len(self.active)

    @property
    def levels(self) -> list[int]:
        return self.model.levels

    def anchor(self, class_id: int) -> FloatArray:
        return self.model.anchors[self.levels.index(class_id)]


class DesignField:
    """Design variables of the active elements, plus their filtered copies
    once the field has been evaluated."""

    rho: FloatArray
    z: FloatArray
    classes: IntArray | None
    rho_phys: FloatArray
    z_phys: FloatArray

    def __init__(self, rho: ArrayLike, z: ArrayLike, classes: ArrayLike | None = None):
        self.rho = np.asarray(rho, dtype=float).copy()
        self.z = np.atleast_2d(np.asarray(z, dtype=float)).copy()
        self.classes = None if classes is None else np.asarray(classes, dtype=np.int64)
        self.rho_phys = self.rho.copy()
        self.z_phys = self.z.copy()

    @classmethod
    def uniform(cls, n: int, rho: float, z: ArrayLike) -> "DesignField":
        return cls(np.full(n, rho), np.tile(np.asarray(z, dtype=float), (n, 1)))

    def copy(self) -> "DesignField":
        field = DesignField(self.rho, self.z, self.classes)
        field.rho_phys = self.rho_phys.copy()
        field.z_phys = self.z_phys.copy()
        return field

    def __len__(self) -> int:
        return len(self.rho)


class Evaluation:
    c: float
    volume: float
    Y: FloatArray  # clamped stiffness, all elements
    dY_drho: FloatArray
    dY_dz: FloatArray
    f: FloatArray
    df: FloatArray
    solution: Solution
    n_clamped: int

    def __init__(
        self,
        c: float,
        volume: float,
        Y: FloatArray,
        dY_drho: FloatArray,
        dY_dz: FloatArray,
        f: FloatArray,
        df: FloatArray,
        solution: Solution,
        n_clamped: int = 0,
    ):
        self.c = c
        self.volume = volume
        self.Y = Y
        self.dY_drho = dY_drho
        self.dY_dz = dY_dz
        self.f = f
        self.df = df
        self.solution = solution
        self.n_clamped = n_clamped

    @property
    def energy_density(self) -> FloatArray:
        """Mean over load cases of u_e^T k_e u_e, all elements."""
        return self.solution.energy.mean(axis=0)


def clamp_stiffness(
    Y: FloatArray, dY_drho: FloatArray, dY_dz: FloatArray, floor: float
) -> tuple[FloatArray, FloatArray, FloatArray, int]:
    """Keep every predicted stiffness positive definite: diagonal terms at least
    `floor`, |C12| at most 0.99 sqrt(C11 C22). Derivatives follow the clamp."""

    Y = Y.copy()
    dr = dY_drho.copy()
    dz = dY_dz.copy()

    low = np.zeros_like(Y, dtype=bool)
    for i in (0, 2, 3):
        low[:, i] = Y[:, i] < floor
    Y[low] = floor
    dr[low] = 0.0
    dz[low] = 0.0

    bound = 0.99 * np.sqrt(Y[:, 0] * Y[:, 2])
    over = np.abs(Y[:, 1]) > bound
    if over.any():
        s = np.sign(Y[over, 1])
        k = s * 0.99 * 0.5 / np.sqrt(Y[over, 0] * Y[over, 2])
        Y[over, 1] = s * bound[over]
        dr[over, 1] = k * (Y[over, 2] * dr[over, 0] + Y[over, 0] * dr[over, 2])
        dz[over, 1] = k[:, None] * (
            Y[over, 2][:, None] * dz[over, 0] + Y[over, 0][:, None] * dz[over, 2]
        )

    n_clamped = int(low.any(axis=1).sum() + over.sum())
    return Y, dr, dz, n_clamped


def physical_field(problem: TopOptProblem, field: DesignField, filter_z: bool) -> None:
    field.rho_phys = problem.filter.apply(field.rho)
    field.z_phys = problem.filter.apply(field.z) if filter_z else field.z.copy()


def evaluate_design(
    problem: TopOptProblem,
    field: DesignField,
    filter_z: bool = True,
    penalty: PenaltyParams | None = None,
) -> Evaluation:
    physical_field(problem, field, filter_z)
    mesh = problem.mesh

    rho_all = np.full(mesh.n_elements, problem.rho_min)
    z_all = np.tile(problem.anchor(problem.levels[0]), (mesh.n_elements, 1))
    rho_all[problem.active] = field.rho_phys
    z_all[problem.active] = field.z_phys

    Y, dY_drho, dY_dz = problem.model.predict_many(rho_all, z_all)
    assert dY_drho is not None and dY_dz is not None
    Y, dY_drho, dY_dz, n_clamped = clamp_stiffness(Y, dY_drho, dY_dz, problem.stiffness_floor)
    if n_clamped:
        logger.debug(f"clamped {n_clamped} predicted stiffness values")

    f, df = penalty_many(z_all, penalty or problem.penalty)

    fea.check_stiffness(Y)
    ke = f[:, None, None] * fea.basis().combine(Y)
    solution = fea.solve(mesh, problem.loads, ke)

    rho_v = field.rho_phys if problem.volume_on_filtered else field.rho
    return Evaluation(
        c=solution.mean_compliance,
        volume=float(rho_v.mean()),
        Y=Y,
        dY_drho=dY_drho,
        dY_dz=dY_dz,
        f=f,
        df=df,
        solution=solution,
        n_clamped=n_clamped,
    )


def sensitivities(
    problem: TopOptProblem,
    ev: Evaluation,
    filter_z: bool = True,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """(dc/drho, dc/dz, dV/drho) with respect to the raw design variables of
    the active elements; dc/dz has shape (n_active, 2)."""

    # basis energies u_e^T K_i u_e averaged over load cases
    energies = fea.basis().energies(ev.solution.ue).mean(axis=0)
    idx = problem.active
    E = energies[idx]
    f = ev.f[idx]

    dc_drho = -f * (E * ev.dY_drho[idx]).sum(axis=1)
    unpenalized = (E * ev.Y[idx]).sum(axis=1)
    dc_dz = -(
        f[:, None] * np.einsum("ei,eid->ed", E, ev.dY_dz[idx]) + ev.df[idx] * unpenalized[:, None]
    )

    dv = np.full(problem.n_active, 1.0 / problem.n_active)

    dc_drho = problem.filter.backward(dc_drho)
    if filter_z:
        dc_dz = problem.filter.backward(dc_dz)
    if problem.volume_on_filtered:
        dv = problem.filter.backward(dv)

    return dc_drho, dc_dz, dv


def snap_classes(z: FloatArray, anchors: FloatArray) -> IntArray:
    """Index of the nearest anchor per point; ties go to the lowest index."""

    d2 = ((np.atleast_2d(z)[:, None, :] - anchors[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


class TraceRow:
    iteration: int
    c: float
    volume: float
    step: float

    def __init__(self, iteration: int, c: float, volume: float, step: float):
        self.iteration = iteration
        self.c = c
        self.volume = volume
        self.step = step

    def as_tuple(self) -> tuple[int, float, float, float]:
        return (self.iteration, self.c, self.volume, self.step)


class StageResult:
    stage: str
    field: DesignField
    trace: list[TraceRow]
    status: RunStatus
    evaluation: Evaluation
    initial_c: float

    def __init__(
        self,
        stage: str,
        field: DesignField,
        trace: list[TraceRow],
        status: RunStatus,
        evaluation: Evaluation,
        initial_c: float,
    ):
        self.stage = stage
        self.field = field
        self.trace = trace
        self.status = status
        self.evaluation = evaluation
        self.initial_c = initial_c

    @property
    def c(self) -> float:
        return self.evaluation.c

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def __repr__(self) -> str:
        status = self.status.value
        return f"StageResult({self.stage}, c={self.c:.6g}, {self.iterations} iterations, {status})"


def _optimize(
    problem: TopOptProblem,
    field: DesignField,
    design_z: bool,
    stage: str,
    penalties: Sequence[PenaltyParams] | None = None,
) -> StageResult:
    """MMA loop on rho (and z when `design_z`). With several penalties the loop
    moves to the next one when the current one converges or has used its share
    of the iterations; only convergence under the last one counts."""

    n = problem.n_active
    field = field.copy()
    schedule = list(penalties or [problem.penalty])
    level, since = 0, 0
    budget = max(1, problem.max_iter // len(schedule))

    if design_z:
        x0 = np.concatenate([field.rho, field.z[:, 0], field.z[:, 1]])
        lo, hi = problem.z_lo, problem.z_hi
        xmin = np.concatenate([np.full(n, problem.rho_min), np.full(n, lo[0]), np.full(n, lo[1])])
        xmax = np.concatenate([np.full(n, problem.rho_max), np.full(n, hi[0]), np.full(n, hi[1])])
    else:
        x0 = field.rho.copy()
        xmin = np.full(n, problem.rho_min)
        xmax = np.full(n, problem.rho_max)

    state = MmaState(np.clip(x0, xmin, xmax), xmin, xmax, **problem.mma)
    span = xmax - xmin
    trace: list[TraceRow] = []
    status = RunStatus.MAX_ITER
    c0 = 0.0

    for it in range(problem.max_iter):
        try:
            ev = evaluate_design(problem, field, filter_z=design_z, penalty=schedule[level])
            dc_drho, dc_dz, dv = sensitivities(problem, ev, filter_z=design_z)
        except LvtoError as err:
            raise OptimizationError(f"{stage}, iteration {it}: {err}") from err

        if it == 0:
            c0 = ev.c
            if not c0 > 0:
                raise OptimizationError(f"{stage}: initial compliance is {c0}")

        dc = np.concatenate([dc_drho, dc_dz[:, 0], dc_dz[:, 1]]) if design_z else dc_drho
        dg = np.concatenate([dv, np.zeros(2 * n)]) if design_z else dv
        g = ev.volume / problem.vmax - 1.0

        try:
            x_new = mma_update(state, ev.c / c0, dc / c0, g, dg / problem.vmax)
        except LvtoError as err:
            raise OptimizationError(f"{stage}, iteration {it}: {err}") from err

        step = float(np.max(np.abs(x_new - state.x_prev) / span))
        trace.append(TraceRow(it, ev.c, ev.volume, step))
        logger.debug(f"{stage} {it:3d}: c={ev.c:.6g} V={ev.volume:.4f} step={step:.4f}")

        field.rho = x_new[:n].copy()
        if design_z:
            field.z = np.stack([x_new[n : 2 * n], x_new[2 * n :]], axis=1)

        last = level == len(schedule) - 1
        if step < problem.tol and last:
            status = RunStatus.CONVERGED
            break

        since += 1
        if not last and (step < problem.tol or since >= budget):
            level, since = level + 1, 0
            state.reset_curvature()
            logger.debug(f"{stage} {it:3d}: penalty gamma {schedule[level].gamma:.4g}")

    try:
        final = evaluate_design(problem, field, filter_z=design_z, penalty=schedule[level])
    except LvtoError as err:
        raise OptimizationError(f"{stage}, final design: {err}") from err

    logger.info(f"{stage}: c={final.c:.6g} after {len(trace)} iterations ({status.value})")
    return StageResult(stage, field, trace, status, final, c0)


def stage1(problem: TopOptProblem) -> StageResult:
    field = DesignField.uniform(problem.n_active, problem.vmax, problem.anchor(problem.levels[0]))
    with timer("stage1"):
        return _optimize(
            problem, field, design_z=True, stage="stage1", penalties=problem.penalty_schedule
        )


def stage2(problem: TopOptProblem, previous: StageResult) -> StageResult:
    anchors = problem.model.anchors
    nearest = snap_classes(previous.field.z_phys, anchors)
    classes = np.array(problem.levels)[nearest]

    field = DesignField(previous.field.rho, anchors[nearest], classes)
    with timer("stage2"):
        return _optimize(problem, field, design_z=False, stage="stage2")


def run_single_class(problem: TopOptProblem, class_id: int) -> StageResult:
    if class_id not in problem.levels:
        raise OptimizationError(f"class {class_id} is not known to the model")

    n = problem.n_active
    field = DesignField.uniform(n, problem.vmax, problem.anchor(class_id))
    field.classes = np.full(n, class_id, dtype=np.int64)
    with timer("single-class"):
        return _optimize(problem, field, design_z=False, stage="single")


@lru_cache(maxsize=4096)
def _cell(class_id: int, rho: float, resolution: int) -> NDArray[np.bool_]:
    cls = get_class(class_id)
    try:
        thickness, _ = solve_thickness(cls, rho, resolution)
    except InfeasibleTargetError:
        thickness = min_thickness(resolution) if rho < 1 else 1.0
        logger.warning(f"class {cls.name}: vf {rho:.4f} not realizable, clamped")
    return rasterize(cls, thickness, resolution).cells


def assemble_structure(
    mesh: MacroMesh,
    classes: ArrayLike,
    rho: ArrayLike,
    resolution: int = DEFAULT_RESOLUTION,
) -> NDArray[np.bool_]:
    """Tile every active element with its class cell at its volume fraction.

    `classes` and `rho` cover the active elements in element order. The image
    has shape (ny * resolution, nx * resolution) with row 0 at the bottom."""

    classes = np.asarray(classes, dtype=np.int64)
    rho = np.asarray(rho, dtype=float)
    image = np.zeros((mesh.ny * resolution, mesh.nx * resolution), dtype=bool)

    ex, ey = mesh.element_indices()
    for k, e in enumerate(np.flatnonzero(mesh.active)):
        cell = _cell(int(classes[k]), round(float(rho[k]), 6), resolution)
        x0, y0 = ex[e] * resolution, ey[e] * resolution
        image[y0 : y0 + resolution, x0 : x0 + resolution] = cell

    return image


def class_usage(classes: ArrayLike, levels: Sequence[int]) -> list[tuple[int, int, float]]:
    """(class id, element count, percent of active elements) per level."""

    classes = np.asarray(classes, dtype=np.int64)
    total = max(1, len(classes))
    counts = [int((classes == c).sum()) for c in levels]
    return [(c, n, 100.0 * n / total) for c, n in zip(levels, counts, strict=True)]


def latent_scatter(
    problem: TopOptProblem, field: DesignField
) -> list[tuple[str, int, float, float]]:
    """Rows (kind, id, z1, z2) for the class anchors and every element's latent point."""

    anchors = zip(problem.levels, problem.model.anchors, strict=True)
    elements = zip(problem.active, field.z_phys, strict=True)
    rows = [("anchor", c, float(z[0]), float(z[1])) for c, z in anchors]
    rows += [("element", int(e), float(z[0]), float(z[1])) for e, z in elements]
    return rows
