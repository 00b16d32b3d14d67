"""Smooth latent-distance penalty.

    e_t(z) = exp(-||z - z_t||^2 / gamma)
    f(z)   = (1 / lambda) * ln sum_t exp(lambda * e_t(z))

f is a soft maximum of the closeness to each class anchor z_t, so
max_t e_t <= f <= max_t e_t + ln(n_anchors) / lambda. Scaling an element
stiffness by f makes latent points far from every class expensive.
"""

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, softmax

FloatArray = NDArray[np.float64]

DEFAULT_LAMBDA = 500.0


def bounding_diagonal(anchors: ArrayLike) -> float:
    """Diagonal length of the anchors' axis-aligned bounding box (1 if degenerate)."""

    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    diag = float(np.linalg.norm(anchors.max(axis=0) - anchors.min(axis=0)))
    return diag if diag > 0 else 1.0


class PenaltyParams:
    lam: float
    gamma: float
    anchors: FloatArray

    def __init__(self, anchors: ArrayLike, lam: float = DEFAULT_LAMBDA, gamma: float | None = None):
        self.anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        if not len(self.anchors):
            raise ValueError("penalty needs at least one anchor")

        self.lam = lam
        self.gamma = bounding_diagonal(self.anchors) if gamma is None else gamma

        if lam <= 0 or self.gamma <= 0:
            raise ValueError(f"lambda and gamma must be positive, got {lam}, {self.gamma}")

    @property
    def slack(self) -> float:
        """Upper bound of f minus the hard maximum."""
        return float(np.log(len(self.anchors)) / self.lam)

    def __repr__(self) -> str:
        return f"PenaltyParams(lam={self.lam}, gamma={self.gamma:.6g}, anchors={len(self.anchors)})"


def closeness(z: ArrayLike, params: PenaltyParams) -> FloatArray:
    """e_t for every point and anchor, shape (m, n_anchors)."""

    z = np.atleast_2d(np.asarray(z, dtype=float))
    d2 = ((z[:, None, :] - params.anchors[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-d2 / params.gamma)


def penalty_many(z: ArrayLike, params: PenaltyParams) -> tuple[FloatArray, FloatArray]:
    """f (m,) and df/dz (m, 2) for a batch of latent points."""

    z = np.atleast_2d(np.asarray(z, dtype=float))
    e = closeness(z, params)
    f = logsumexp(params.lam * e, axis=1) / params.lam

    w = softmax(params.lam * e, axis=1) * e
    diff = z[:, None, :] - params.anchors[None, :, :]
    grad = (-2.0 / params.gamma) * (w[:, :, None] * diff).sum(axis=1)
    return f, grad


def penalty_f(z: ArrayLike, params: PenaltyParams) -> float:
    f, _ = penalty_many(z, params)
    return float(f[0])


def penalty_grad(z: ArrayLike, params: PenaltyParams) -> FloatArray:
    _, grad = penalty_many(z, params)
    return grad[0]
