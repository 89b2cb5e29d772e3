"""ICE curves and partial dependence estimates with model uncertainty.

The PDP mean at a grid point is the average of the surrogate's posterior
means over the Monte Carlo sample of complement configurations. Its variance
comes in two flavors: the full estimator aggregates the joint posterior
covariance of all sample points at the grid value (1/n^2 * 1'K1), while the
diagonal estimator averages only the pointwise posterior variances (1/n *
sum K_ii). On hierarchical spaces, grid/sample combinations that violate the
dependency structure are masked out and averages run over valid entries
only; the full-covariance estimator is restricted to flat spaces.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import space as sp
from . import surrogate as sg
from ._fmt import write_csv
from .errors import ContractError, EstimationError

DIAG = "diag"
FULL_COV = "full_cov"

MODE_DIAG_ONLY = "diag_only"
MODE_WITH_JOINT = "with_joint"

DEFAULT_JOINT_CAP = 2000


@dataclass
class IceBundle:
    """Per-sample marginal-effect curves of the surrogate.

    ``mean_curves[i, g]`` and ``var_curves[i, g]`` hold posterior mean and
    variance at (grid point g, complement sample i); ``valid`` masks
    dependency-violating combinations; ``self_var[i]`` is the posterior
    variance at sample i's own configuration.
    """

    s: int
    grid: sp.Grid
    sample: list[sp.Config]
    mean_curves: np.ndarray
    var_curves: np.ndarray
    valid: np.ndarray
    self_var: np.ndarray
    space: sp.SearchSpace = field(repr=False)
    joint_cov: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.mean_curves.shape[0]

    @property
    def n_grid(self) -> int:
        return self.mean_curves.shape[1]


@dataclass
class PdpEstimate:
    """Partial dependence curve with a pointwise confidence band."""

    grid: sp.Grid
    param: sp.ParamDef
    mean: np.ndarray
    variance: np.ndarray
    estimator: str
    alpha: float
    members: np.ndarray
    band_lo: np.ndarray = field(init=False)
    band_hi: np.ndarray = field(init=False)

    def __post_init__(self):
        half = norm.ppf(1.0 - self.alpha / 2.0) * np.sqrt(np.maximum(self.variance, 0.0))
        self.band_lo = self.mean - half
        self.band_hi = self.mean + half

    @property
    def n_members(self) -> int:
        return len(self.members)

    def to_csv(self, path) -> None:
        rows = [
            [p, m, v, lo, hi, self.n_members, self.estimator]
            for p, m, v, lo, hi in zip(
                self.grid.points, self.mean, self.variance, self.band_lo, self.band_hi
            )
        ]
        write_csv(path, ["grid_value", "mean", "variance", "band_lo", "band_hi",
                         "n_members", "estimator"], rows)


def ice(
    gp: sg.GpSurrogate,
    space: sp.SearchSpace,
    s: int,
    grid: sp.Grid,
    sample: list[sp.Config],
    mode: str = MODE_DIAG_ONLY,
    joint_cap: int = DEFAULT_JOINT_CAP,
) -> IceBundle:
    """Evaluate the surrogate on every (grid point, sample) combination."""
    if not sample:
        raise ContractError("ICE needs a nonempty Monte Carlo sample")
    if mode not in (MODE_DIAG_ONLY, MODE_WITH_JOINT):
        raise ContractError(f"unknown ICE mode {mode!r}")
    param = space.param(s)
    s = space.index(param.name)
    n = len(sample)
    n_grid = len(grid)

    if mode == MODE_WITH_JOINT:
        if space.is_hierarchical:
            raise ContractError(
                "joint covariances are only defined on flat spaces; "
                "use the diagonal estimator for hierarchical spaces"
            )
        if n > joint_cap:
            raise ContractError(
                f"joint mode caches {n_grid} matrices of size {n}x{n}; "
                f"sample size exceeds the cap of {joint_cap}"
            )

    base = sg.encode_configs(space, sample)
    _, self_var = sg.predict_mean_var(gp, base)

    indicator_col = None
    if param.condition is not None:
        conditional = [p.name for p in space.params if p.condition is not None]
        indicator_col = len(space) + conditional.index(param.name)

    mean_curves = np.empty((n, n_grid))
    var_curves = np.empty((n, n_grid))
    joint: list[np.ndarray] | None = [] if mode == MODE_WITH_JOINT else None
    queries = base.copy()
    if indicator_col is not None:
        queries[:, indicator_col] = 1.0
    for g, point in enumerate(grid.points):
        queries[:, s] = param.to_model(point)
        if joint is not None:
            slice_ = sg.predict_joint(gp, queries)
            mean_curves[:, g] = slice_.means
            var_curves[:, g] = slice_.variances
            joint.append(slice_.covariance)
        else:
            means, variances = sg.predict_mean_var(gp, queries)
            mean_curves[:, g] = means
            var_curves[:, g] = variances

    valid = np.ones((n, n_grid), dtype=bool)
    if space.is_hierarchical:
        for i, config in enumerate(sample):
            for g, point in enumerate(grid.points):
                valid[i, g] = sp.is_valid(space, config.replace(param.name, point))

    return IceBundle(s=s, grid=grid, sample=sample, mean_curves=mean_curves,
                     var_curves=var_curves, valid=valid, self_var=self_var,
                     space=space, joint_cov=joint)


def _resolve_members(bundle: IceBundle, members) -> np.ndarray:
    if members is None:
        return np.arange(bundle.n, dtype=np.intp)
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise ContractError("member set must be nonempty")
    if members.min() < 0 or members.max() >= bundle.n:
        raise ContractError("member index out of range")
    return members


def _masked_column_means(curves: np.ndarray, mask: np.ndarray,
                         grid: sp.Grid) -> np.ndarray:
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        g = int(np.argmax(counts == 0))
        raise EstimationError(
            f"no valid member at grid point {grid.points[g]!r} (index {g})"
        )
    return (curves * mask).sum(axis=0) / counts


def pdp_mean(bundle: IceBundle, members=None) -> np.ndarray:
    """Validity-masked average of the ICE mean curves over the members."""
    idx = _resolve_members(bundle, members)
    return _masked_column_means(bundle.mean_curves[idx], bundle.valid[idx], bundle.grid)


def pdp_var_diag(bundle: IceBundle, members=None) -> np.ndarray:
    """Diagonal variance estimate: average pointwise posterior variance."""
    idx = _resolve_members(bundle, members)
    return _masked_column_means(bundle.var_curves[idx], bundle.valid[idx], bundle.grid)


def pdp_var_full(bundle: IceBundle, members=None) -> np.ndarray:
    """Full-covariance variance estimate: 1/n^2 times the total sum of the
    members' joint posterior covariance block at each grid point."""
    if bundle.joint_cov is None:
        raise EstimationError("bundle lacks joint covariances; build with mode='with_joint'")
    if not bool(bundle.valid.all()):
        raise ContractError("full-covariance estimate is undefined with masked entries")
    idx = _resolve_members(bundle, members)
    m = len(idx)
    out = np.empty(bundle.n_grid)
    for g, cov in enumerate(bundle.joint_cov):
        block = cov[np.ix_(idx, idx)]
        out[g] = max(float(block.sum()) / (m * m), 0.0)
    return out


def pdp_from_bundle(
    bundle: IceBundle,
    estimator: str = DIAG,
    alpha: float = 0.05,
    members=None,
) -> PdpEstimate:
    idx = _resolve_members(bundle, members)
    if estimator == DIAG:
        variance = pdp_var_diag(bundle, idx)
    elif estimator == FULL_COV:
        variance = pdp_var_full(bundle, idx)
    else:
        raise ContractError(f"unknown estimator {estimator!r}")
    return PdpEstimate(
        grid=bundle.grid,
        param=bundle.space.param(bundle.s),
        mean=pdp_mean(bundle, idx),
        variance=variance,
        estimator=estimator,
        alpha=alpha,
        members=idx,
    )


def pdp(
    gp: sg.GpSurrogate,
    space: sp.SearchSpace,
    s: int,
    grid: sp.Grid,
    sample: list[sp.Config],
    estimator: str = DIAG,
    alpha: float = 0.05,
    members=None,
) -> PdpEstimate:
    """One-call PDP: builds the ICE bundle and aggregates it."""
    mode = MODE_WITH_JOINT if estimator == FULL_COV else MODE_DIAG_ONLY
    bundle = ice(gp, space, s, grid, sample, mode=mode)
    return pdp_from_bundle(bundle, estimator=estimator, alpha=alpha, members=members)
