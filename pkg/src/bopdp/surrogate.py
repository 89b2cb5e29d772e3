"""Gaussian-process regression: kernels, marginal-likelihood fitting, and
joint posterior prediction.

Targets are standardized to zero mean / unit variance before fitting; kernel
hyperparameters are chosen by maximizing the log marginal likelihood with a
multi-start bounded Nelder-Mead search over log-parameterized values.
Hierarchical configurations enter the model through midpoint imputation of
inactive values plus one binary activity indicator column per conditional
parameter.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from . import space as sp
from .errors import ContractError, ModelFitError

MATERN32 = "matern32"
GAUSSIAN = "gaussian"
_FAMILIES = (MATERN32, GAUSSIAN)

_SQRT3 = math.sqrt(3.0)
_LOG_HP_BOUNDS = (math.log(1e-2), math.log(1e2))
_LOG_NUGGET_BOUNDS = (math.log(1e-8), math.log(1e-1))
_MAX_NUGGET = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel with ARD lengthscales."""

    family: str
    lengthscales: tuple[float, ...]
    signal_variance: float
    nugget: float = 0.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ContractError(f"unknown kernel family {self.family!r}")
        if any(l <= 0 for l in self.lengthscales):
            raise ContractError("lengthscales must be positive")
        if self.signal_variance <= 0:
            raise ContractError("signal_variance must be positive")
        if self.nugget < 0:
            raise ContractError("nugget must be nonnegative")


def _kernel_from_sqdist(family: str, sv: float, q: np.ndarray) -> np.ndarray:
    """Kernel value from the scaled squared distance q = sum((a-b)^2 / l^2)."""
    if family == MATERN32:
        t = np.sqrt(3.0 * np.maximum(q, 0.0))
        return sv * (1.0 + t) * np.exp(-t)
    return sv * np.exp(-0.5 * q)


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Covariance between two points."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    ls = np.asarray(spec.lengthscales, dtype=float)
    if a.shape != b.shape or a.shape != ls.shape:
        raise ContractError("point and lengthscale dimensions must match")
    q = float(np.sum(((a - b) / ls) ** 2))
    return float(_kernel_from_sqdist(spec.family, spec.signal_variance, np.array(q)))


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Cross-covariance matrix between row sets (no nugget)."""
    ls = np.asarray(spec.lengthscales, dtype=float)
    a_scaled = np.asarray(a, dtype=float) / ls
    b_scaled = a_scaled if b is None else np.asarray(b, dtype=float) / ls
    q = cdist(a_scaled, b_scaled, "sqeuclidean")
    return _kernel_from_sqdist(spec.family, spec.signal_variance, q)


# ---------------------------------------------------------------------------
# Hierarchical encoding: model-scale columns per param, midpoint imputation
# for inactive values, one 0/1 activity indicator per conditional param.
# ---------------------------------------------------------------------------

def encoder_columns(space: sp.SearchSpace) -> list[str]:
    cols = list(space.names)
    cols += [f"{p.name}__active" for p in space.params if p.condition is not None]
    return cols


def encoder_bounds(space: sp.SearchSpace) -> tuple[np.ndarray, np.ndarray]:
    lo = [p.model_bounds()[0] for p in space.params]
    hi = [p.model_bounds()[1] for p in space.params]
    n_cond = sum(1 for p in space.params if p.condition is not None)
    lo += [0.0] * n_cond
    hi += [1.0] * n_cond
    return np.array(lo, dtype=float), np.array(hi, dtype=float)


def encode_configs(space: sp.SearchSpace, configs: list[sp.Config]) -> np.ndarray:
    """Configs -> (n, p + #conditional) model-scale matrix."""
    n = len(configs)
    conditional = [p for p in space.params if p.condition is not None]
    out = np.empty((n, len(space) + len(conditional)))
    for j, p in enumerate(space.params):
        lo, hi = p.model_bounds()
        mid = 0.5 * (lo + hi)
        col = out[:, j]
        for i, c in enumerate(configs):
            v = c.values[p.name]
            col[i] = mid if v is sp.INACTIVE else p.to_model(v)
    for j, p in enumerate(conditional):
        col = out[:, len(space) + j]
        for i, c in enumerate(configs):
            col[i] = 0.0 if c.values[p.name] is sp.INACTIVE else 1.0
    return out


@dataclass(frozen=True)
class PosteriorSlice:
    """Joint Gaussian posterior over a finite query set."""

    means: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        c = self.covariance
        if c.shape[0] != c.shape[1] or len(self.means) != c.shape[0]:
            raise ContractError("covariance must be square and match the mean vector")

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.covariance)


@dataclass
class GpSurrogate:
    """Fitted GP state: kernel, training data, Cholesky factor, dual weights.

    Instances are immutable by convention and safe to share between threads.
    ``encoder_space`` is set when the GP was fitted from configurations and
    lets config-level callers (acquisition, effects) encode queries.
    """

    kernel: KernelSpec
    x_train: np.ndarray
    y_std: np.ndarray
    y_mean: float
    y_scale: float
    chol: np.ndarray | None
    alpha: np.ndarray | None
    fit_seed: int | None = None
    encoder_space: sp.SearchSpace | None = field(default=None, repr=False)

    @property
    def n_train(self) -> int:
        return 0 if self.x_train.size == 0 else self.x_train.shape[0]

    @property
    def dim(self) -> int:
        return len(self.kernel.lengthscales)

    @classmethod
    def from_kernel(cls, kernel: KernelSpec, x: np.ndarray, y: np.ndarray,
                    standardize: bool = True) -> "GpSurrogate":
        """Condition a GP with fixed hyperparameters on (x, y)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if x.shape[0] != len(y):
            raise ContractError("x and y lengths must match")
        if standardize:
            y_mean, y_scale = _standardizer(y)
        else:
            y_mean, y_scale = 0.0, 1.0
        y_s = (y - y_mean) / y_scale
        chol, kernel = _factorize(kernel, x)
        alpha = sla.cho_solve((chol, True), y_s, check_finite=False)
        return cls(kernel, x, y_s, y_mean, y_scale, chol, alpha)

    @classmethod
    def prior(cls, kernel: KernelSpec, mean: float = 0.0) -> "GpSurrogate":
        """Zero-observation GP: constant prior mean, prior covariance."""
        d = len(kernel.lengthscales)
        return cls(kernel, np.empty((0, d)), np.empty(0), mean, 1.0, None, None)


def _standardizer(y: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if scale < 1e-12:  # constant targets: shift only
        scale = 1.0
    return mean, scale


def _factorize(kernel: KernelSpec, x: np.ndarray) -> tuple[np.ndarray, KernelSpec]:
    """Cholesky of K + nugget*I with x10 jitter escalation up to 1e-4."""
    base = kernel_matrix(kernel, x)
    nugget = kernel.nugget
    while True:
        k = base.copy()
        k[np.diag_indices_from(k)] += nugget
        try:
            chol = sla.cholesky(k, lower=True, check_finite=False)
            if nugget != kernel.nugget:
                kernel = KernelSpec(kernel.family, kernel.lengthscales,
                                    kernel.signal_variance, nugget)
            return chol, kernel
        except sla.LinAlgError:
            nugget = max(nugget, 1e-12) * 10.0
            if nugget > _MAX_NUGGET:
                raise ModelFitError(
                    "covariance not positive definite even with nugget 1e-4"
                ) from None


class _NllObjective:
    """Negative log marginal likelihood over log-parameterized kernel values.

    Per-dimension squared differences are precomputed once, so each call is
    one matvec, an in-place elementwise kernel transform, and one Cholesky.
    """

    _INFEASIBLE = 1e25

    def __init__(self, x: np.ndarray, y_std: np.ndarray, family: str,
                 nugget: float, ard: bool, estimate_nugget: bool):
        n, d = x.shape
        diffs = x.T[:, :, None] - x.T[:, None, :]
        self.sqdiffs = np.ascontiguousarray((diffs**2).reshape(d, n * n))
        self.y = np.ascontiguousarray(y_std)
        self.family = family
        self.nugget = nugget
        self.ard = ard
        self.estimate_nugget = estimate_nugget
        self.n = n
        self.d = d
        self.n_ls = d if ard else 1
        self.const = 0.5 * n * math.log(2.0 * math.pi)
        self._q = np.empty(n * n)
        self._e = np.empty(n * n)
        self._potrf, self._trtrs = sla.get_lapack_funcs(
            ("potrf", "trtrs"), (self._q, self.y)
        )

    @property
    def n_params(self) -> int:
        return self.n_ls + 1 + (1 if self.estimate_nugget else 0)

    def kernel_spec(self, theta: np.ndarray) -> KernelSpec:
        ls = np.exp(theta[: self.n_ls])
        if not self.ard:
            ls = np.repeat(ls, self.d)
        sv = float(math.exp(theta[self.n_ls]))
        nugget = float(math.exp(theta[self.n_ls + 1])) if self.estimate_nugget else self.nugget
        return KernelSpec(self.family, tuple(float(l) for l in ls), sv, nugget)

    def __call__(self, theta: np.ndarray) -> float:
        inv_sq = np.exp(-2.0 * theta[: self.n_ls])
        if not self.ard:
            inv_sq = np.full(self.d, inv_sq[0])
        q, e = self._q, self._e
        np.matmul(inv_sq, self.sqdiffs, out=q)  # q >= 0: nonneg summands
        sv = math.exp(theta[self.n_ls])
        if self.family == MATERN32:
            np.multiply(q, 3.0, out=q)
            np.sqrt(q, out=q)
            np.negative(q, out=e)
            np.exp(e, out=e)
            np.add(q, 1.0, out=q)
            np.multiply(q, e, out=q)
        else:
            np.multiply(q, -0.5, out=q)
            np.exp(q, out=q)
        np.multiply(q, sv, out=q)
        nugget = math.exp(theta[self.n_ls + 1]) if self.estimate_nugget else self.nugget
        n = self.n
        q[:: n + 1] += nugget
        k = q.reshape(n, n)
        chol, info = self._potrf(k, lower=1, clean=0, overwrite_a=1)
        if info != 0:
            return self._INFEASIBLE
        diag = np.einsum("ii->i", chol)
        if np.any(diag <= 0.0):
            return self._INFEASIBLE
        half_logdet = float(np.sum(np.log(diag)))
        z, info = self._trtrs(chol, self.y, lower=1, trans=0)
        if info != 0:
            return self._INFEASIBLE
        return float(0.5 * (z @ z) + half_logdet + self.const)


def log_marginal_likelihood(kernel: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Log marginal likelihood of raw targets (standardized internally the
    same way :func:`fit` does)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    y_mean, y_scale = _standardizer(y)
    y_s = (y - y_mean) / y_scale
    obj = _NllObjective(x, y_s, kernel.family, kernel.nugget, ard=True,
                        estimate_nugget=False)
    theta = np.concatenate([np.log(kernel.lengthscales), [math.log(kernel.signal_variance)]])
    return -obj(theta)


def fit(
    x: np.ndarray,
    y: np.ndarray,
    family: str = MATERN32,
    nugget: float = 1e-8,
    seed=0,
    n_starts: int = 10,
    ard: bool = True,
    estimate_nugget: bool = False,
    space: sp.SearchSpace | None = None,
) -> GpSurrogate:
    """Maximum-marginal-likelihood GP fit.

    Lengthscales and signal variance are searched in log space over
    [1e-2, 1e2] with ``n_starts`` Nelder-Mead restarts (first start at the
    unit point, the rest drawn from the seeded RNG). The nugget stays fixed
    unless ``estimate_nugget`` is set, in which case it is searched over
    [1e-8, 1e-1].
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2:
        raise ContractError("x must be a 2-D matrix")
    if x.shape[0] != len(y):
        raise ContractError("x and y lengths must match")
    if x.shape[0] < 2:
        raise ContractError("need at least 2 observations to fit")
    if nugget == 0.0 and len(np.unique(x, axis=0)) != len(x):
        raise ContractError("duplicate inputs need a positive nugget")

    y_mean, y_scale = _standardizer(y)
    y_s = (y - y_mean) / y_scale
    obj = _NllObjective(x, y_s, family, nugget, ard, estimate_nugget)

    k = obj.n_params
    lo, hi = _LOG_HP_BOUNDS
    bounds = [(lo, hi)] * (obj.n_ls + 1)
    starts = [np.zeros(k)]
    if estimate_nugget:
        bounds.append(_LOG_NUGGET_BOUNDS)
        starts[0] = np.concatenate([np.zeros(k - 1), [math.log(max(nugget, 1e-8))]])
    rng = np.random.default_rng(seed)
    lows = np.array([b[0] for b in bounds])
    highs = np.array([b[1] for b in bounds])
    for _ in range(max(0, n_starts - 1)):
        starts.append(rng.uniform(lows, highs))

    # short exploratory run from every start, then polish the best one
    best_theta = starts[0]
    best_val = math.inf
    for theta0 in starts:
        res = minimize(
            obj,
            theta0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-2, "fatol": 1e-5, "maxfev": 40 * k, "adaptive": k > 4},
        )
        if res.fun < best_val:
            best_val = float(res.fun)
            best_theta = np.asarray(res.x)
    res = minimize(
        obj,
        best_theta,
        method="Nelder-Mead",
        bounds=bounds,
        options={"xatol": 1e-3, "fatol": 1e-7, "maxfev": 150 * k, "adaptive": k > 4},
    )
    if res.fun <= best_val:
        best_val = float(res.fun)
        best_theta = np.asarray(res.x)
    if not math.isfinite(best_val) or best_val >= _NllObjective._INFEASIBLE:
        raise ModelFitError("marginal-likelihood search found no feasible kernel")

    kernel = obj.kernel_spec(best_theta)
    chol, kernel = _factorize(kernel, x)
    alpha = sla.cho_solve((chol, True), y_s, check_finite=False)
    seed_int = None if seed is None else int(seed)
    return GpSurrogate(kernel, x, y_s, y_mean, y_scale, chol, alpha,
                       fit_seed=seed_int, encoder_space=space)


def fit_on_configs(
    space: sp.SearchSpace,
    configs: list[sp.Config],
    y: np.ndarray,
    family: str = MATERN32,
    nugget: float = 1e-8,
    seed=0,
    n_starts: int = 10,
    ard: bool = True,
    estimate_nugget: bool = False,
) -> GpSurrogate:
    """Fit on configurations via the hierarchical encoding."""
    x = encode_configs(space, configs)
    return fit(x, y, family=family, nugget=nugget, seed=seed, n_starts=n_starts,
               ard=ard, estimate_nugget=estimate_nugget, space=space)


def predict_joint(gp: GpSurrogate, q: np.ndarray) -> PosteriorSlice:
    """Posterior mean vector and full covariance over query rows."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[1] != gp.dim:
        raise ContractError("query dimension does not match the training data")
    k_qq = kernel_matrix(gp.kernel, q)
    if gp.n_train == 0:
        cov = gp.y_scale**2 * k_qq
        means = np.full(q.shape[0], gp.y_mean)
    else:
        k_star = kernel_matrix(gp.kernel, gp.x_train, q)
        means = gp.y_mean + gp.y_scale * (k_star.T @ gp.alpha)
        v = sla.solve_triangular(gp.chol, k_star, lower=True, check_finite=False)
        cov = gp.y_scale**2 * (k_qq - v.T @ v)
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov).copy()
    np.fill_diagonal(cov, np.maximum(diag, 0.0))
    return PosteriorSlice(means=means, covariance=cov)


def predict_mean_var(gp: GpSurrogate, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and per-point variances (no cross-covariances)."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[1] != gp.dim:
        raise ContractError("query dimension does not match the training data")
    sv = gp.kernel.signal_variance
    if gp.n_train == 0:
        return (np.full(q.shape[0], gp.y_mean),
                np.full(q.shape[0], gp.y_scale**2 * sv))
    k_star = kernel_matrix(gp.kernel, gp.x_train, q)
    means = gp.y_mean + gp.y_scale * (k_star.T @ gp.alpha)
    v = sla.solve_triangular(gp.chol, k_star, lower=True, check_finite=False)
    var = np.maximum(sv - np.sum(v * v, axis=0), 0.0) * gp.y_scale**2
    return means, var


def predict_config_mean_var(gp: GpSurrogate, configs: list[sp.Config]) -> tuple[np.ndarray, np.ndarray]:
    """Config-level prediction; requires the GP to carry its encoder space."""
    if gp.encoder_space is None:
        raise ContractError("this surrogate was not fitted from configurations")
    return predict_mean_var(gp, encode_configs(gp.encoder_space, configs))
