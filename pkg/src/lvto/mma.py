"""Method of moving asymptotes for box-bounded problems with one constraint.

Each update builds the separable convex approximation

    min  sum_j p0_j / (U_j - x_j) + q0_j / (x_j - L_j)
    s.t. sum_j p1_j / (U_j - x_j) + q1_j / (x_j - L_j) <= b,   alpha <= x <= beta

around the current point and solves it through its scalar dual.

The objective terms also carry a scalar secant curvature estimate taken from
the last two gradients. It changes the curvature of the approximation at x
but not its gradient, so steps shrink with the gradient near an optimum
instead of bouncing between the asymptote bounds.
"""

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

from lvto.utils import LvtoError

FloatArray = NDArray[np.float64]

_DUAL_CAP = 1e15


class RejectedIterateError(LvtoError):
    pass


class MmaState:
    x: FloatArray
    x_prev: FloatArray
    x_prev2: FloatArray
    low: FloatArray
    upp: FloatArray
    xmin: FloatArray
    xmax: FloatArray
    df0_prev: FloatArray | None
    curvature: float
    iteration: int

    def __init__(
        self,
        x: ArrayLike,
        xmin: ArrayLike,
        xmax: ArrayLike,
        move_limit: float = 0.2,
        asyinit: float = 0.5,
        asyincr: float = 1.2,
        asydecr: float = 0.7,
        asymin: float = 1e-3,
        asymax: float = 10.0,
        albefa: float = 0.1,
        raa0: float = 1e-5,
        secant: bool = True,
    ):
        self.x = np.asarray(x, dtype=float).copy()
        n = self.x.size
        self.xmin = np.broadcast_to(np.asarray(xmin, dtype=float), (n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(xmax, dtype=float), (n,)).copy()

        if np.any(self.xmax <= self.xmin):
            raise ValueError("every variable needs xmax > xmin")

        if np.any(self.x < self.xmin) or np.any(self.x > self.xmax):
            raise ValueError("starting point is outside the bounds")

        self.x_prev = self.x.copy()
        self.x_prev2 = self.x.copy()
        self.low = self.xmin.copy()
        self.upp = self.xmax.copy()

        self.move_limit = move_limit
        self.asyinit = asyinit
        self.asyincr = asyincr
        self.asydecr = asydecr
        self.asymin = asymin
        self.asymax = asymax
        self.albefa = albefa
        self.raa0 = raa0
        self.secant = secant
        self.df0_prev = None
        self.curvature = 0.0
        self.iteration = 0

        if not 0.0 < asymin < asyinit < asymax:
            raise ValueError(
                f"need 0 < asymin < asyinit < asymax, got {asymin}, {asyinit}, {asymax}"
            )

    @property
    def size(self) -> int:
        return self.x.size

    def update_asymptotes(self) -> None:
        x = self.x
        span = self.xmax - self.xmin

        if self.iteration < 2:
            self.low = x - self.asyinit * span
            self.upp = x + self.asyinit * span
            return

        trend = (x - self.x_prev) * (self.x_prev - self.x_prev2)
        factor = np.ones_like(x)
        factor[trend > 0] = self.asyincr
        factor[trend < 0] = self.asydecr

        low = x - factor * (self.x_prev - self.low)
        upp = x + factor * (self.upp - self.x_prev)

        self.low = np.clip(low, x - self.asymax * span, x - self.asymin * span)
        self.upp = np.clip(upp, x + self.asymin * span, x + self.asymax * span)

    def update_curvature(self, df0: FloatArray) -> float:
        """Secant estimate s.y / s.s of the objective curvature along the last
        step, floored at zero. Kept unchanged when the design did not move."""

        if not self.secant or self.df0_prev is None:
            return 0.0

        s = self.x - self.x_prev
        ss = float(s @ s)
        if ss > 0.0:
            self.curvature = max(0.0, float(s @ (df0 - self.df0_prev)) / ss)
        return self.curvature

    def reset_curvature(self) -> None:
        self.df0_prev = None
        self.curvature = 0.0


def _approximation(
    state: MmaState,
    df: FloatArray,
    curvature: float = 0.0,
) -> tuple[FloatArray, FloatArray]:
    ux = state.upp - state.x
    xl = state.x - state.low
    reg = state.raa0 / (state.xmax - state.xmin)
    pos = np.maximum(df, 0.0)
    neg = np.maximum(-df, 0.0)

    # equal weight on both terms: adds `curvature` to the second derivative at x
    # and nothing to the first
    extra = curvature * ux * xl / (2.0 * (ux + xl))
    p = (1.001 * pos + 0.001 * neg + reg + extra) * ux**2
    q = (0.001 * pos + 1.001 * neg + reg + extra) * xl**2
    return p, q


def mma_update(
    state: MmaState,
    f0: float,
    df0: ArrayLike,
    f1: float,
    df1: ArrayLike,
) -> FloatArray:
    """One MMA step for min f0(x) s.t. f1(x) <= 0. Returns (and stores) the new x."""

    df0 = np.asarray(df0, dtype=float)
    df1 = np.asarray(df1, dtype=float)

    finite = np.isfinite(f0) and np.isfinite(f1)
    finite = finite and np.isfinite(df0).all() and np.isfinite(df1).all()
    if not finite:
        raise RejectedIterateError(f"non-finite inputs at MMA iteration {state.iteration}")

    if df0.shape != state.x.shape or df1.shape != state.x.shape:
        raise ValueError("gradient size does not match the design vector")

    state.update_asymptotes()
    x, low, upp = state.x, state.low, state.upp
    span = state.xmax - state.xmin

    alpha = np.maximum.reduce(
        [state.xmin, low + state.albefa * (x - low), x - state.move_limit * span]
    )
    beta = np.minimum.reduce(
        [state.xmax, upp - state.albefa * (upp - x), x + state.move_limit * span]
    )

    p0, q0 = _approximation(state, df0, state.update_curvature(df0))
    p1, q1 = _approximation(state, df1)
    b = (p1 / (upp - x) + q1 / (x - low)).sum() - f1

    def primal(lam: float) -> FloatArray:
        sp = np.sqrt(p0 + lam * p1)
        sq = np.sqrt(q0 + lam * q1)
        return np.clip((sp * low + sq * upp) / (sp + sq), alpha, beta)

    def slack(lam: float) -> float:
        xl = primal(lam)
        return float((p1 / (upp - xl) + q1 / (xl - low)).sum() - b)

    if slack(0.0) <= 0.0:
        lam = 0.0
    else:
        lo, hi = 0.0, 1.0
        while slack(hi) > 0.0 and hi < _DUAL_CAP:
            lo, hi = hi, 2.0 * hi

        # slack is decreasing in lam
        lam = hi if slack(hi) > 0.0 else float(brentq(slack, lo, hi, xtol=1e-14, rtol=1e-14))

    x_new = primal(lam)
    if not np.isfinite(x_new).all():
        raise RejectedIterateError(f"non-finite iterate at MMA iteration {state.iteration}")

    state.x_prev2 = state.x_prev
    state.x_prev = state.x
    state.x = x_new
    state.df0_prev = df0.copy()
    state.iteration += 1
    return x_new.copy()
