"""Quantitative evaluation of PDP estimates.

MMD^2 quantifies how far the optimizer's archive drifted from uniform
coverage; the negative log-likelihood of the true marginal under the PDP's
pointwise Gaussian measures reliability; mean confidence (MC) and
at-optimum confidence (OC) measure band width. Relative improvements compare
a sub-regional PDP against the global one.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import space as sp
from .effects import PdpEstimate
from .errors import ContractError
from .objective import TrueMarginal


@dataclass(frozen=True)
class PdpScore:
    """Reliability and confidence of one PDP estimate."""

    nll_per_point: np.ndarray
    nll_mean: float
    mc: float
    oc: float


@dataclass(frozen=True)
class ImprovementReport:
    """Relative improvements in percent, sub-regional vs. global.

    Positive means the sub-regional estimate is better (smaller); None marks
    an undefined ratio (zero or non-finite global reference)."""

    delta_mc: float | None
    delta_oc: float | None
    delta_nll: float | None


def mmd2(x: np.ndarray, y: np.ndarray, sigma: float | None = None) -> float:
    """Unbiased squared maximum mean discrepancy with an RBF kernel.

    Inputs are min-max normalized per dimension over the pooled sample so the
    statistic is comparable across spaces; the bandwidth defaults to the
    median pairwise distance of the pooled, normalized sample.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[1] != y.shape[1]:
        raise ContractError("samples must share a dimension")
    n, m = x.shape[0], y.shape[0]
    if n < 2 or m < 2:
        raise ContractError("both samples need at least 2 points")
    pooled = np.vstack([x, y])
    lo = pooled.min(axis=0)
    span = pooled.max(axis=0) - lo
    span[span == 0.0] = 1.0
    x = (x - lo) / span
    y = (y - lo) / span
    if sigma is None:
        sigma = float(np.median(pdist(np.vstack([x, y]))))
        if sigma <= 0.0:
            sigma = 1.0
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * cdist(x, x, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(y, y, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(x, y, "sqeuclidean"))
    term_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    term_xy = 2.0 * kxy.sum() / (n * m)
    return float(term_x + term_y - term_xy)


@dataclass(frozen=True)
class NllResult:
    per_point: np.ndarray
    mean: float


def nll(pdp: PdpEstimate, truth: TrueMarginal) -> NllResult:
    """Pointwise Gaussian negative log-likelihood of the true marginal under
    the PDP estimate, variance floored at 1e-12."""
    if len(pdp.grid) != len(truth.grid) or pdp.grid.s != truth.grid.s:
        raise ContractError("PDP and truth grids differ")
    for a, b in zip(pdp.grid.points, truth.grid.points):
        if isinstance(a, str) or isinstance(b, str):
            if a != b:
                raise ContractError("PDP and truth grids differ")
        elif not math.isclose(float(a), float(b), rel_tol=1e-12, abs_tol=0.0):
            raise ContractError("PDP and truth grids differ")
    var = np.maximum(pdp.variance, 1e-12)
    err = truth.values - pdp.mean
    per_point = 0.5 * np.log(2.0 * math.pi * var) + err**2 / (2.0 * var)
    return NllResult(per_point=per_point, mean=float(per_point.mean()))


def confidence(pdp: PdpEstimate, incumbent_s) -> tuple[float, float]:
    """(mean band width, band width at the grid point nearest the incumbent).

    Distances are taken on the sampling scale; exact midpoints resolve to the
    lower grid point.
    """
    if len(pdp.grid) == 0:
        raise ContractError("empty grid")
    widths = np.sqrt(np.maximum(pdp.variance, 0.0))
    mc = float(widths.mean())
    p = pdp.param
    if p.kind == sp.CATEGORICAL:
        dist = np.array([0.0 if v == incumbent_s else 1.0 for v in pdp.grid.points])
    else:
        target = p.to_model(incumbent_s)
        dist = np.array([abs(p.to_model(v) - target) for v in pdp.grid.points])
    oc = float(widths[int(np.argmin(dist))])
    return mc, oc


def score_pdp(pdp: PdpEstimate, truth: TrueMarginal, incumbent_s) -> PdpScore:
    """Bundle NLL and confidence into one record."""
    res = nll(pdp, truth)
    mc, oc = confidence(pdp, incumbent_s)
    return PdpScore(nll_per_point=res.per_point, nll_mean=res.mean, mc=mc, oc=oc)


def _relative(global_value: float, sub_value: float) -> float | None:
    if not math.isfinite(global_value) or global_value == 0.0:
        return None
    return 100.0 * (global_value - sub_value) / abs(global_value)


def improvement(global_score: PdpScore, sub_score: PdpScore) -> ImprovementReport:
    """Percent improvement of the sub-regional over the global scores. A
    negative delta means the sub-regional estimate got worse."""
    return ImprovementReport(
        delta_mc=_relative(global_score.mc, sub_score.mc),
        delta_oc=_relative(global_score.oc, sub_score.oc),
        delta_nll=_relative(global_score.nll_mean, sub_score.nll_mean),
    )
