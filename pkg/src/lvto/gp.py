"""Latent-variable Gaussian process over (volume fraction, class) inputs.

Every class level is mapped to a point in a 2-D latent space and the
correlation between two inputs is

    r = exp(-phi * (x - x')^2 - ||z(t) - z(t')||^2)

with x the volume fraction scaled to [0, 1] by the training range. All
responses share one correlation matrix R and have a constant mean; their
cross-covariance Sigma is estimated from the data (separable Sigma (x) R
model). The regression coefficients and Sigma are profiled out of the
likelihood, leaving

    nll(Z, phi) = n * ln|Sigma_hat| + q * ln|R|

to be minimized over the latent coordinates and log(phi). Level 1 is pinned at
the origin and level 2 on the positive z1 axis, since the likelihood only
depends on latent distances.
"""

from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any

import numpy as np
import scipy.linalg as la
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize

from lvto.homog import Dataset
from lvto.utils import LvtoError, logger, timer

FloatArray = NDArray[np.float64]

LATENT_DIM = 2
DEFAULT_NUGGET = 1e-8
LOG_PHI_BOUNDS = (-6.0, 8.0)
LATENT_BOUND = 4.0

# pivots of the correlation factor below this are treated as rank deficiency
_PIVOT_FLOOR = 1e-14

_FAILED = 1e10


class IllConditionedDataError(LvtoError):
    pass


class FitFailureError(LvtoError):
    pass


class TrainingData:
    """Scaled inputs and standardized responses of a training set."""

    levels: list[int]
    t: NDArray[np.int64]  # level index per row, 0-based
    x: FloatArray  # scaled volume fraction
    D: FloatArray  # standardized responses (n, q)
    x_range: tuple[float, float]
    y_mean: FloatArray
    y_std: FloatArray

    def __init__(
        self,
        levels: Sequence[int],
        class_ids: ArrayLike,
        vf: ArrayLike,
        Y: ArrayLike,
        x_range: tuple[float, float] | None = None,
        y_mean: ArrayLike | None = None,
        y_std: ArrayLike | None = None,
    ):
        class_ids = np.asarray(class_ids, dtype=np.int64)
        vf = np.asarray(vf, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]

        self.levels = list(levels)
        index = {c: i for i, c in enumerate(self.levels)}
        try:
            self.t = np.array([index[c] for c in class_ids.tolist()], dtype=np.int64)
        except KeyError as err:
            raise ValueError(f"class {err} is not a declared level") from err

        if x_range is None:
            lo, hi = float(vf.min()), float(vf.max())
            x_range = (lo, hi if hi > lo else lo + 1.0)
        self.x_range = x_range
        self.x = scale_x(vf, x_range)

        if y_mean is None or y_std is None:
            y_mean = Y.mean(axis=0)
            y_std = Y.std(axis=0)
            y_std = np.where(y_std > 0, y_std, 1.0)
        self.y_mean = np.asarray(y_mean, dtype=float)
        self.y_std = np.asarray(y_std, dtype=float)

        self.vf = vf
        self.Y = Y
        self.D = (Y - self.y_mean) / self.y_std

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "TrainingData":
        return cls(dataset.levels, dataset.class_ids, dataset.vf, dataset.Y)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def q(self) -> int:
        return self.D.shape[1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)


def scale_x(vf: ArrayLike, x_range: tuple[float, float]) -> FloatArray:
    lo, hi = x_range
    return (np.asarray(vf, dtype=float) - lo) / (hi - lo)


def _exponent(
    xa: FloatArray, za: FloatArray, xb: FloatArray, zb: FloatArray, phi: FloatArray
) -> FloatArray:
    dx = xa[:, None] - xb[None, :]
    dz = za[:, None, :] - zb[None, :, :]
    return phi[0] * dx**2 + (dz**2).sum(axis=-1)


def correlation_matrix(
    xa: FloatArray,
    za: FloatArray,
    xb: FloatArray,
    zb: FloatArray,
    phi: FloatArray,
) -> FloatArray:
    """Gaussian correlation between two sets of transformed inputs."""
    return np.exp(-_exponent(xa, za, xb, zb, phi))


def correlation(s: tuple[float, ArrayLike], s2: tuple[float, ArrayLike], phi: ArrayLike) -> float:
    """Correlation of two transformed inputs (x, z) and (x', z')."""

    x1, z1 = s
    x2, z2 = s2
    r = correlation_matrix(
        np.array([x1], dtype=float),
        np.atleast_2d(np.asarray(z1, dtype=float)),
        np.array([x2], dtype=float),
        np.atleast_2d(np.asarray(z2, dtype=float)),
        np.atleast_1d(np.asarray(phi, dtype=float)),
    )
    return float(r[0, 0])


class Profile:
    """Profiled likelihood terms at fixed (Z, phi)."""

    nll: float
    Bhat: FloatArray  # (1, q)
    Sigma: FloatArray  # (q, q)
    R0: FloatArray  # correlation without nugget
    chol: tuple[FloatArray, bool]
    alpha: FloatArray  # R^-1 (D - 1 Bhat)

    def __init__(self, Z: FloatArray, phi: FloatArray, data: TrainingData, nugget: float):
        n, q = data.n, data.q
        z = Z[data.t]
        self.R0 = correlation_matrix(data.x, z, data.x, z, phi)
        R = self.R0 + nugget * np.eye(n)

        try:
            self.chol = la.cho_factor(R, lower=True, check_finite=True)
        except la.LinAlgError as err:
            msg = f"correlation matrix is not positive definite: {err}"
            raise IllConditionedDataError(msg) from err

        pivots = np.diag(self.chol[0])
        if pivots.min() ** 2 <= _PIVOT_FLOOR:
            raise IllConditionedDataError("correlation matrix is numerically singular")

        ones = np.ones((n, 1))
        Rinv_H = la.cho_solve(self.chol, ones)
        Rinv_D = la.cho_solve(self.chol, data.D)
        self.Bhat = (ones.T @ Rinv_D) / (ones.T @ Rinv_H)

        E = data.D - ones @ self.Bhat
        self.alpha = la.cho_solve(self.chol, E)
        self.Sigma = (E.T @ self.alpha) / n
        self.Sigma = 0.5 * (self.Sigma + self.Sigma.T)

        sign, logdet_sigma = np.linalg.slogdet(self.Sigma)
        if sign <= 0:
            raise IllConditionedDataError("response covariance is singular")

        logdet_r = 2.0 * np.log(pivots).sum()
        self.nll = float(n * logdet_sigma + q * logdet_r)

    def weight_matrix(self, q: int) -> FloatArray:
        """G such that d(nll) = tr(G dR)."""
        n = self.alpha.shape[0]
        Rinv = la.cho_solve(self.chol, np.eye(n))
        return q * Rinv - self.alpha @ np.linalg.solve(self.Sigma, self.alpha.T)


def neg_log_likelihood(
    Z: ArrayLike,
    phi: ArrayLike,
    data: TrainingData,
    nugget: float = DEFAULT_NUGGET,
) -> float:
    Z = np.asarray(Z, dtype=float).reshape(data.n_levels, -1)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    return Profile(Z, phi, data, nugget).nll


def sr_neg_log_likelihood(
    Z: ArrayLike,
    phi: ArrayLike,
    data: TrainingData,
    response: int = 0,
    nugget: float = DEFAULT_NUGGET,
) -> float:
    """n * ln(sigma2_hat) + ln|R| for one response column."""

    Z = np.asarray(Z, dtype=float).reshape(data.n_levels, -1)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    z = Z[data.t]
    n = data.n
    y = data.D[:, response]

    R = correlation_matrix(data.x, z, data.x, z, phi) + nugget * np.eye(n)
    try:
        c = la.cho_factor(R, lower=True)
    except la.LinAlgError as err:
        raise IllConditionedDataError(str(err)) from err

    ones = np.ones(n)
    beta = (ones @ la.cho_solve(c, y)) / (ones @ la.cho_solve(c, ones))
    resid = y - beta
    sigma2 = (resid @ la.cho_solve(c, resid)) / n
    logdet_r = 2.0 * np.log(np.diag(c[0])).sum()
    return float(n * np.log(sigma2) + logdet_r)


class LatentParams:
    """Packing of (log phi, anchored latent map) into one optimization vector:
    [log phi, a, z(3), z(4), ...] with level 2 at (a, 0)."""

    n_levels: int

    def __init__(self, n_levels: int):
        self.n_levels = n_levels

    @property
    def n_latent(self) -> int:
        return max(0, 2 * self.n_levels - 3)

    @property
    def size(self) -> int:
        return 1 + self.n_latent

    def unpack(self, theta: FloatArray) -> tuple[FloatArray, FloatArray]:
        phi = np.exp(theta[:1])
        Z = np.zeros((self.n_levels, LATENT_DIM))
        if self.n_levels >= 2:
            Z[1, 0] = theta[1]
            Z[2:] = theta[2:].reshape(-1, LATENT_DIM)
        return Z, phi

    def pack(self, Z: FloatArray, phi: FloatArray) -> FloatArray:
        parts = [np.log(phi)]
        if self.n_levels >= 2:
            parts += [Z[1, :1], Z[2:].ravel()]
        return np.concatenate(parts)

    def bounds(self) -> list[tuple[float, float]]:
        b = [LOG_PHI_BOUNDS]
        if self.n_levels >= 2:
            b.append((0.0, LATENT_BOUND))
            b += [(-LATENT_BOUND, LATENT_BOUND)] * (self.n_latent - 1)
        return b

    def random_start(self, rng: np.random.Generator) -> FloatArray:
        theta = np.empty(self.size)
        theta[0] = rng.uniform(-3.0, 3.0)
        if self.n_levels >= 2:
            theta[1:] = rng.uniform(-1.0, 1.0, size=self.n_latent)
            theta[1] = abs(theta[1])
        return theta


def nll_and_grad(
    theta: FloatArray,
    params: LatentParams,
    data: TrainingData,
    nugget: float,
) -> tuple[float, FloatArray]:
    Z, phi = params.unpack(theta)
    prof = Profile(Z, phi, data, nugget)
    G = prof.weight_matrix(data.q)
    GR = G * prof.R0

    grad = np.zeros(params.size)
    dx2 = (data.x[:, None] - data.x[None, :]) ** 2
    grad[0] = -phi[0] * (GR * dx2).sum()

    if params.n_levels >= 2:
        z = Z[data.t]
        grad_z = np.zeros_like(Z)
        for d in range(LATENT_DIM):
            dz = z[:, d][:, None] - z[:, d][None, :]
            rows = (GR * (-2.0 * dz)).sum(axis=1)
            grad_z[:, d] = 2.0 * np.bincount(data.t, weights=rows, minlength=params.n_levels)
        grad[1] = grad_z[1, 0]
        grad[2:] = grad_z[2:].ravel()

    return prof.nll, grad


class MrLvgpModel:
    levels: list[int]
    Z: FloatArray
    phi: FloatArray
    nugget: float
    data: TrainingData
    profile: Profile
    seed: int | None

    def __init__(
        self,
        levels: Sequence[int],
        Z: ArrayLike,
        phi: ArrayLike,
        data: TrainingData,
        nugget: float = DEFAULT_NUGGET,
        seed: int | None = None,
    ):
        self.levels = list(levels)
        self.Z = np.asarray(Z, dtype=float).reshape(len(self.levels), LATENT_DIM)
        self.phi = np.atleast_1d(np.asarray(phi, dtype=float))
        self.nugget = nugget
        self.data = data
        self.seed = seed
        self.profile = Profile(self.Z, self.phi, data, nugget)

    @property
    def nll(self) -> float:
        return self.profile.nll

    @property
    def Bhat(self) -> FloatArray:  # noqa: N802
        return self.profile.Bhat

    @property
    def Sigma(self) -> FloatArray:  # noqa: N802
        return self.profile.Sigma

    @property
    def n_responses(self) -> int:
        return self.data.q

    def anchor(self, class_id: int) -> FloatArray:
        return self.Z[self.levels.index(class_id)].copy()

    @property
    def anchors(self) -> FloatArray:
        return self.Z.copy()

    def predict_many(
        self,
        rho: ArrayLike,
        z: ArrayLike,
        grad: bool = True,
    ) -> tuple[FloatArray, FloatArray | None, FloatArray | None]:
        """Responses at m points, with dY/drho (m, q) and dY/dz (m, q, 2).

        A point that coincides with a training input gets the nugget added to
        its correlation, which makes the prediction interpolate exactly."""

        data = self.data
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        xs = scale_x(rho, data.x_range)
        zt = self.Z[data.t]

        expo = _exponent(xs, z, data.x, zt, self.phi)
        r0 = np.exp(-expo)
        r = r0 + self.nugget * (expo == 0.0)

        alpha = self.profile.alpha
        Y = data.y_mean + data.y_std * (self.profile.Bhat + r @ alpha)
        if not grad:
            return Y, None, None

        lo, hi = data.x_range
        dx = xs[:, None] - data.x[None, :]
        dr_dx = r0 * (-2.0 * self.phi[0] * dx) / (hi - lo)
        dY_drho = data.y_std * (dr_dx @ alpha)

        dY_dz = np.empty((len(rho), data.q, LATENT_DIM))
        for d in range(LATENT_DIM):
            dz = z[:, d][:, None] - zt[:, d][None, :]
            dY_dz[:, :, d] = data.y_std * ((r0 * (-2.0 * dz)) @ alpha)

        return Y, dY_drho, dY_dz

    def predict(self, rho: float, z: ArrayLike) -> FloatArray:
        Y, _, _ = self.predict_many([rho], [z], grad=False)
        return Y[0]

    def predict_grad(self, rho: float, z: ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray]:
        """(dY/drho, dY/dz1, dY/dz2), each of length q."""
        _, d_rho, d_z = self.predict_many([rho], [z])
        assert d_rho is not None and d_z is not None
        return d_rho[0], d_z[0, :, 0], d_z[0, :, 1]

    def predict_class(self, rho: ArrayLike, class_ids: ArrayLike) -> FloatArray:
        idx = [self.levels.index(c) for c in np.atleast_1d(class_ids).tolist()]
        Y, _, _ = self.predict_many(rho, self.Z[idx], grad=False)
        return Y

    def export_latent(self) -> list[tuple[int, float, float]]:
        return [(c, float(z[0]), float(z[1])) for c, z in zip(self.levels, self.Z, strict=True)]

    def to_dict(self, meta: dict[str, Any] | None = None) -> dict[str, Any]:
        data = self.data
        return {
            "meta": meta or {},
            "levels": self.levels,
            "latent": self.Z.tolist(),
            "phi": self.phi.tolist(),
            "nugget": self.nugget,
            "seed": self.seed,
            "x_range": list(data.x_range),
            "y_mean": data.y_mean.tolist(),
            "y_std": data.y_std.tolist(),
            "Bhat": self.Bhat.ravel().tolist(),
            "Sigma": self.Sigma.tolist(),
            "nll": self.nll,
            "train": {
                "class_ids": [self.levels[t] for t in data.t.tolist()],
                "vf": data.vf.tolist(),
                "Y": data.Y.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "MrLvgpModel":
        try:
            levels = doc["levels"]
            train = doc["train"]
            lo, hi = doc["x_range"]
            data = TrainingData(
                levels,
                train["class_ids"],
                train["vf"],
                train["Y"],
                x_range=(lo, hi),
                y_mean=doc["y_mean"],
                y_std=doc["y_std"],
            )
            return cls(levels, doc["latent"], doc["phi"], data, doc["nugget"], doc.get("seed"))
        except (KeyError, TypeError, ValueError) as err:
            raise FitFailureError(f"malformed model document: {err}") from err

    def __repr__(self) -> str:
        data = self.data
        return f"MrLvgpModel(levels={self.levels}, n={data.n}, q={data.q}, nll={self.nll:.4f})"


def _dedupe(dataset: Dataset) -> Dataset:
    seen: set[tuple[int, float]] = set()
    keep: list[int] = []
    for i, key in enumerate(zip(dataset.class_ids.tolist(), dataset.vf.tolist(), strict=True)):
        if key not in seen:
            seen.add(key)
            keep.append(i)

    if len(keep) < len(dataset):
        logger.warning(f"dropping {len(dataset) - len(keep)} duplicate training inputs")

    return dataset.subset(keep)


def _fit_start(
    theta0: FloatArray,
    params: LatentParams,
    data: TrainingData,
    nugget: float,
    index: int,
) -> tuple[float, FloatArray] | None:
    def objective(theta: FloatArray) -> tuple[float, FloatArray]:
        try:
            return nll_and_grad(theta, params, data, nugget)
        except IllConditionedDataError:
            return _FAILED, np.zeros_like(theta)

    with timer(f"fit start {index}", phase="fit start"):
        result = minimize(
            objective,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=params.bounds(),
            options={"maxiter": 500},
        )

    try:
        nll = nll_and_grad(result.x, params, data, nugget)[0]
    except IllConditionedDataError as err:
        logger.debug(f"start {index} failed: {err}")
        return None

    logger.debug(f"start {index}: nll={nll:.6f} ({result.nit} iterations)")
    return nll, result.x


def fit(
    dataset: Dataset,
    latent_dim: int = LATENT_DIM,
    starts: int = 8,
    nugget: float = DEFAULT_NUGGET,
    seed: int = 0,
    workers: int = 1,
) -> MrLvgpModel:
    """Maximum likelihood fit of the latent map and phi from `starts` random
    starting points. The result only depends on the dataset and the seed."""

    if latent_dim != LATENT_DIM:
        raise ValueError(f"only a {LATENT_DIM}-D latent space is supported, got {latent_dim}")

    dataset = _dedupe(dataset)
    if len(dataset) < 2:
        raise IllConditionedDataError("need at least 2 distinct training inputs")

    data = TrainingData.from_dataset(dataset)
    params = LatentParams(data.n_levels)

    rng = np.random.default_rng(seed)
    thetas = [params.random_start(rng) for _ in range(starts)]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_fit_start, theta, params, data, nugget, i)
            for i, theta in enumerate(thetas)
        ]
        results = [f.result() for f in futures]

    ok = [(r[0], i, r[1]) for i, r in enumerate(results) if r is not None and r[0] < _FAILED]
    if not ok:
        raise FitFailureError(f"all {starts} starts failed")

    nll, best, theta = min(ok, key=lambda r: (r[0], r[1]))
    logger.info(f"fit: best start {best} of {starts}, nll={nll:.6f}")

    Z, phi = params.unpack(theta)
    return MrLvgpModel(data.levels, Z, phi, data, nugget, seed)


class AssembledModel:
    """One single-response model per response column, stacked."""

    models: list[MrLvgpModel]

    def __init__(self, models: list[MrLvgpModel]):
        self.models = models

    def predict_class(self, rho: ArrayLike, class_ids: ArrayLike) -> FloatArray:
        return np.concatenate([m.predict_class(rho, class_ids) for m in self.models], axis=1)


def fit_assembled(
    dataset: Dataset,
    starts: int = 8,
    nugget: float = DEFAULT_NUGGET,
    seed: int = 0,
    workers: int = 1,
) -> AssembledModel:
    models: list[MrLvgpModel] = []
    for j in range(dataset.Y.shape[1]):
        column = Dataset(dataset.class_ids, dataset.vf, dataset.Y[:, [j]])
        models.append(fit(column, starts=starts, nugget=nugget, seed=seed, workers=workers))
    return AssembledModel(models)


def sample_latent(
    model: MrLvgpModel,
    rho: float = 0.5,
    n_grid: int = 21,
    expand: float = 0.25,
) -> FloatArray:
    """Predictions on a regular latent grid, rows (z1, z2, Y...)."""

    lo, hi = model.Z.min(axis=0), model.Z.max(axis=0)
    extent = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - expand * extent, hi + expand * extent

    g1 = np.linspace(lo[0], hi[0], n_grid)
    g2 = np.linspace(lo[1], hi[1], n_grid)
    z1, z2 = np.meshgrid(g1, g2)
    z = np.stack([z1.ravel(), z2.ravel()], axis=1)

    Y, _, _ = model.predict_many(np.full(len(z), rho), z, grad=False)
    return np.concatenate([z, Y], axis=1)


class ValidationReport:
    seeds: list[int]
    mse: FloatArray  # (repetitions, q)
    assembled_mse: FloatArray | None
    splits: list[NDArray[np.int64]]  # test indices per repetition

    def __init__(
        self,
        seeds: list[int],
        mse: FloatArray,
        splits: list[NDArray[np.int64]],
        assembled_mse: FloatArray | None = None,
    ):
        self.seeds = seeds
        self.mse = mse
        self.splits = splits
        self.assembled_mse = assembled_mse

    @property
    def mean(self) -> FloatArray:
        return self.mse.mean(axis=0)

    @property
    def variance(self) -> FloatArray:
        return self.mse.var(axis=0, ddof=1) if len(self.mse) > 1 else np.zeros(self.mse.shape[1])


def stratified_split(
    dataset: Dataset,
    train_fraction: float,
    rng: np.random.Generator,
) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    """Per-class random split keeping at least one training row per class."""

    train: list[int] = []
    test: list[int] = []
    for c in dataset.levels:
        rows = rng.permutation(dataset.rows(c))
        k = min(len(rows), max(1, round(train_fraction * len(rows))))
        train += rows[:k].tolist()
        test += rows[k:].tolist()

    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def validate(
    dataset: Dataset,
    repetitions: int = 10,
    train_fraction: float = 0.8,
    seed: int = 0,
    starts: int = 8,
    nugget: float = DEFAULT_NUGGET,
    workers: int = 1,
    assembled: bool = False,
) -> ValidationReport:
    """Repeated random train/test splits; test MSE per response in raw units."""

    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=repetitions).tolist()

    mse = np.zeros((repetitions, dataset.Y.shape[1]))
    assembled_mse = np.zeros_like(mse) if assembled else None
    splits: list[NDArray[np.int64]] = []

    for k, rep_seed in enumerate(seeds):
        train, test = stratified_split(dataset, train_fraction, np.random.default_rng(rep_seed))
        splits.append(test)
        if not len(test):
            raise ValueError(f"train_fraction {train_fraction} leaves no test rows")

        trained = dataset.subset(train)
        held = dataset.subset(test)

        with timer(f"validation repetition {k}", phase="validation repetition"):
            model = fit(trained, starts=starts, nugget=nugget, seed=rep_seed, workers=workers)
            pred = model.predict_class(held.vf, held.class_ids)
            mse[k] = ((pred - held.Y) ** 2).mean(axis=0)

            if assembled_mse is not None:
                sr = fit_assembled(
                    trained, starts=starts, nugget=nugget, seed=rep_seed, workers=workers
                )
                err = sr.predict_class(held.vf, held.class_ids) - held.Y
                assembled_mse[k] = (err**2).mean(axis=0)

        logger.info(f"validation {k + 1}/{repetitions} (seed {rep_seed}): mse={mse[k].tolist()}")

    return ValidationReport(seeds, mse, splits, assembled_mse)
