"""Black-box cost functions and brute-force marginal-effect oracles.

Provides the synthetic Styblinski-Tang family on [-5, 5]^d, a k-nearest-
neighbor table objective for externally evaluated data, and a Monte Carlo
estimator of the true per-parameter marginal cost.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import space as sp
from .errors import ContractError


@dataclass(frozen=True)
class Objective:
    """Deterministic cost function over a search space.

    ``fn`` evaluates one Config; ``matrix_fn``, when present, evaluates a
    whole (n, d) matrix of native-unit rows at once and is used by the Monte
    Carlo oracles on flat spaces.
    """

    fn: Callable[[sp.Config], float]
    space: sp.SearchSpace
    deterministic: bool = True
    matrix_fn: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def dim(self) -> int:
        return len(self.space)

    def __call__(self, config: sp.Config) -> float:
        return float(self.fn(config))

    def evaluate_matrix(self, x: np.ndarray) -> np.ndarray:
        """Evaluate rows of native-unit values (flat spaces only)."""
        if self.matrix_fn is not None:
            return np.asarray(self.matrix_fn(np.asarray(x, dtype=float)), dtype=float)
        names = self.space.names
        return np.array(
            [self.fn(sp.Config(dict(zip(names, row)))) for row in np.asarray(x)],
            dtype=float,
        )


@dataclass(frozen=True)
class TrueMarginal:
    """Monte Carlo estimate of the true marginal cost along a grid."""

    grid: sp.Grid
    values: np.ndarray
    mc_sample_size: int

    def __post_init__(self):
        if len(self.values) != len(self.grid):
            raise ContractError("marginal values must match the grid length")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("marginal values must be finite")


def styblinski_tang_space(d: int) -> sp.SearchSpace:
    """The canonical [-5, 5]^d domain."""
    return sp.continuous_space([(-5.0, 5.0)] * d)


class _StyblinskiTangMatrix:
    def __init__(self, quad: float):
        self.quad = quad

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return 0.5 * np.sum(x**4 + self.quad * x**2 + 5.0 * x, axis=1)


class _StyblinskiTangConfig:
    def __init__(self, names: tuple[str, ...], matrix: _StyblinskiTangMatrix):
        self.names = names
        self.matrix = matrix

    def __call__(self, config: sp.Config) -> float:
        row = np.array([config[name] for name in self.names], dtype=float)
        return float(self.matrix(row[None, :])[0])


def styblinski_tang(d: int, plus_form: bool = False) -> Objective:
    """d-dimensional Styblinski-Tang cost (1/2) sum(x^4 - 16 x^2 + 5 x).

    ``plus_form`` flips the quadratic term to +16 x^2, a single-well convex
    variant kept for comparison runs.
    """
    if d < 1:
        raise ContractError("d must be >= 1")
    domain = styblinski_tang_space(d)
    matrix = _StyblinskiTangMatrix(16.0 if plus_form else -16.0)
    return Objective(fn=_StyblinskiTangConfig(domain.names, matrix),
                     space=domain, matrix_fn=matrix)


class _TableInterpolator:
    def __init__(self, space, table, costs, k, lo, span):
        self.space = space
        self.table = table
        self.costs = costs
        self.k = k
        self.lo = lo
        self.span = span

    def normalize(self, configs: list[sp.Config]) -> np.ndarray:
        from .surrogate import encode_configs

        return (encode_configs(self.space, configs) - self.lo) / self.span

    def __call__(self, config: sp.Config) -> float:
        if not sp.is_valid(self.space, config):
            raise ContractError("query outside the search space")
        q = self.normalize([config])[0]
        d = np.sqrt(np.sum((self.table - q) ** 2, axis=1))
        order = np.argsort(d, kind="stable")[: self.k]
        dk = d[order]
        if dk[0] == 0.0:
            return float(self.costs[order[0]])
        w = 1.0 / dk
        return float(np.sum(w * self.costs[order]) / np.sum(w))


def table_objective(
    rows: list[tuple[sp.Config, float]], space: sp.SearchSpace, k: int = 3
) -> Objective:
    """Inverse-distance-weighted k-NN interpolator over evaluated rows.

    Distances are Euclidean on coordinates normalized to the unit cube of the
    model scale (log10 for log params, level index for categoricals, midpoint
    imputation plus activity indicators for conditional params). A query that
    matches a stored row exactly returns that row's cost.
    """
    from .surrogate import encoder_bounds

    if not rows:
        raise ContractError("table objective needs at least one row")
    for config, _ in rows:
        if not sp.is_valid(space, config):
            raise ContractError("table objective rows must be valid configs")
    k = min(int(k), len(rows))
    if k < 1:
        raise ContractError("k must be >= 1")
    costs = np.array([c for _, c in rows], dtype=float)
    lo, hi = encoder_bounds(space)
    span = np.where(hi > lo, hi - lo, 1.0)
    interp = _TableInterpolator(space, None, costs, k, lo, span)
    interp.table = interp.normalize([cfg for cfg, _ in rows])
    return Objective(fn=interp, space=space)


def table_objective_from_csv(path, space: sp.SearchSpace, k: int = 3) -> Objective:
    """Load rows from CSV: one column per parameter (native units), final
    column ``cost``, header row required."""
    rows: list[tuple[sp.Config, float]] = []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "cost" not in reader.fieldnames:
            raise ContractError("objective CSV needs a header row with a 'cost' column")
        for record in reader:
            values = {}
            for p in space.params:
                raw = record.get(p.name, "")
                if raw is None or raw == "":
                    values[p.name] = sp.INACTIVE
                elif p.kind == sp.CATEGORICAL:
                    values[p.name] = raw
                elif p.kind == sp.INTEGER:
                    values[p.name] = int(float(raw))
                else:
                    values[p.name] = float(raw)
            rows.append((sp.Config(values), float(record["cost"])))
    return table_objective(rows, space, k=k)


def true_pd(
    obj: Objective,
    space: sp.SearchSpace,
    s: int,
    grid: sp.Grid,
    n_mc: int = 100_000,
    seed=0,
) -> TrueMarginal:
    """Brute-force marginal cost: average objective value over ``n_mc``
    uniform complement draws, one shared sample reused for every grid point.

    On hierarchical spaces only combinations that are valid after inserting
    the grid value are averaged.
    """
    if n_mc < 1:
        raise ContractError("n_mc must be >= 1")
    name = space.param(s).name
    sample = sp.sample_uniform(space, n_mc, seed)
    if not space.is_hierarchical and obj.matrix_fn is not None:
        base = np.array(
            [[c[pname] for pname in space.names] for c in sample], dtype=float
        )
        col = space.index(name)
        values = np.empty(len(grid))
        for g, point in enumerate(grid.points):
            base[:, col] = float(point)
            values[g] = float(np.mean(obj.evaluate_matrix(base)))
        return TrueMarginal(grid=grid, values=values, mc_sample_size=n_mc)

    values = np.empty(len(grid))
    for g, point in enumerate(grid.points):
        total = 0.0
        count = 0
        for c in sample:
            combined = c.replace(name, point)
            if space.is_hierarchical and not sp.is_valid(space, combined):
                continue
            total += obj(combined)
            count += 1
        if count == 0:
            raise ContractError(f"no valid combinations at grid point {point!r}")
        values[g] = total / count
    return TrueMarginal(grid=grid, values=values, mc_sample_size=n_mc)
