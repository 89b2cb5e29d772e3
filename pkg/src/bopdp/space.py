"""Hyperparameter search spaces: parameter definitions, uniform sampling,
grid construction, and validity of configurations.

Spaces may be flat or hierarchical. A hierarchical parameter carries a
condition (parent name, set of activating parent values) and is active in a
configuration only when its parent is active and takes one of those values.
Inactive parameters are stored as the explicit :data:`INACTIVE` marker, never
as a sentinel number.

Log-scaled parameters are sampled and gridded uniformly in log10 of the
native value; values are always stored in native units.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError


class _Inactive:
    """Singleton marker for a parameter that is switched off."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INACTIVE"

    def __deepcopy__(self, memo):
        return self

    def __copy__(self):
        return self


INACTIVE = _Inactive()

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
_KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)


@dataclass(frozen=True)
class Condition:
    """Activation rule: the parameter is active iff its parent is active and
    the parent's value is in ``values``."""

    parent: str
    values: frozenset

    def __post_init__(self):
        if not self.values:
            raise ContractError("condition needs at least one activating value")


@dataclass(frozen=True)
class ParamDef:
    """One hyperparameter: numeric with bounds or categorical with levels."""

    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    levels: tuple[str, ...] | None = None
    log_scale: bool = False
    condition: Condition | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractError(f"unknown parameter kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise ContractError(f"categorical param {self.name!r} needs levels")
            if len(set(self.levels)) != len(self.levels):
                raise ContractError(f"duplicate levels in param {self.name!r}")
            if self.log_scale:
                raise ContractError("log_scale is meaningless for categorical params")
        else:
            if self.lower is None or self.upper is None:
                raise ContractError(f"param {self.name!r} needs lower and upper bounds")
            if not self.lower < self.upper:
                raise ContractError(
                    f"param {self.name!r}: lower ({self.lower}) must be < upper ({self.upper})"
                )
            if self.log_scale and self.lower <= 0:
                raise ContractError(f"param {self.name!r}: log_scale requires lower > 0")
            if self.kind == INTEGER and (
                float(self.lower) != int(self.lower) or float(self.upper) != int(self.upper)
            ):
                raise ContractError(f"integer param {self.name!r} requires integer bounds")

    def to_model(self, value):
        """Native value -> model-scale real (log10 when log-scaled, level index
        for categoricals)."""
        if self.kind == CATEGORICAL:
            return float(self.levels.index(value))
        v = float(value)
        return math.log10(v) if self.log_scale else v

    def from_model(self, x: float):
        """Model-scale real -> native value (rounded/clipped for integers,
        nearest level for categoricals)."""
        if self.kind == CATEGORICAL:
            idx = min(max(int(round(x)), 0), len(self.levels) - 1)
            return self.levels[idx]
        v = 10.0**x if self.log_scale else float(x)
        if self.kind == INTEGER:
            return int(min(max(round(v), self.lower), self.upper))
        return min(max(v, self.lower), self.upper)

    def model_bounds(self) -> tuple[float, float]:
        if self.kind == CATEGORICAL:
            return 0.0, float(len(self.levels) - 1)
        if self.log_scale:
            return math.log10(self.lower), math.log10(self.upper)
        return float(self.lower), float(self.upper)

    def contains(self, value) -> bool:
        """Whether a native value lies in the range / level set."""
        if self.kind == CATEGORICAL:
            return value in self.levels
        if self.kind == INTEGER:
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                return False
            return self.lower <= value <= self.upper
        if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
            return False
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class Config:
    """A configuration: every parameter maps to a native value or INACTIVE."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, name: str):
        return self.values[name]

    def is_active(self, name: str) -> bool:
        return self.values[name] is not INACTIVE

    def replace(self, name: str, value) -> "Config":
        new = dict(self.values)
        new[name] = value
        return Config(new)


@dataclass(frozen=True)
class Grid:
    """Evaluation grid for one parameter, points in native units."""

    s: int
    points: tuple

    def __len__(self) -> int:
        return len(self.points)


class SearchSpace:
    """Ordered collection of :class:`ParamDef` with a forest of conditions."""

    def __init__(self, params: list[ParamDef]):
        if not params:
            raise ContractError("a search space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ContractError("parameter names must be unique")
        self.params: tuple[ParamDef, ...] = tuple(params)
        self.names: tuple[str, ...] = tuple(names)
        self._index = {name: i for i, name in enumerate(names)}
        self._check_conditions()

    def _check_conditions(self):
        for p in self.params:
            if p.condition is None:
                continue
            parent = p.condition.parent
            if parent not in self._index:
                raise ContractError(
                    f"param {p.name!r} conditions on unknown param {parent!r}"
                )
            if parent == p.name:
                raise ContractError(f"param {p.name!r} cannot condition on itself")
        # walk every chain to the root; revisiting a node means a cycle
        for p in self.params:
            seen = {p.name}
            cur = p
            while cur.condition is not None:
                cur = self.param(cur.condition.parent)
                if cur.name in seen:
                    raise ContractError(f"condition cycle through {cur.name!r}")
                seen.add(cur.name)

    def __len__(self) -> int:
        return len(self.params)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ContractError(f"unknown parameter {name!r}") from None

    def param(self, ref) -> ParamDef:
        """Look up a parameter by index or name."""
        if isinstance(ref, str):
            return self.params[self.index(ref)]
        if not 0 <= ref < len(self.params):
            raise ContractError(f"parameter index {ref} out of range")
        return self.params[ref]

    @property
    def is_hierarchical(self) -> bool:
        return any(p.condition is not None for p in self.params)

    def active_given(self, p: ParamDef, values: dict) -> bool:
        """Whether ``p`` should be active given the (partial) assignment."""
        if p.condition is None:
            return True
        parent_val = values.get(p.condition.parent, INACTIVE)
        return parent_val is not INACTIVE and parent_val in p.condition.values


def sample_uniform(space: SearchSpace, n: int, seed) -> list[Config]:
    """Draw ``n`` configurations uniformly on each parameter's sampling scale.

    Children of conditional parameters are kept only when activated; everything
    else is marked INACTIVE. Deterministic for a fixed seed.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(seed)
    columns: dict[str, list] = {}
    for p in _topo_order(space):  # column-wise draws keep large n cheap
        columns[p.name] = _sample_column(p, n, rng)
    configs = []
    for i in range(n):
        values = {name: columns[name][i] for name in space.names}
        for p in _topo_order(space):
            if not space.active_given(p, values):
                values[p.name] = INACTIVE
        configs.append(Config(values))
    return configs


def _topo_order(space: SearchSpace) -> list[ParamDef]:
    """Parents before children (stable w.r.t. declaration order)."""
    placed: set[str] = set()
    order: list[ParamDef] = []
    pending = list(space.params)
    while pending:
        rest = []
        for p in pending:
            if p.condition is None or p.condition.parent in placed:
                order.append(p)
                placed.add(p.name)
            else:
                rest.append(p)
        if len(rest) == len(pending):  # unreachable given the forest invariant
            raise ContractError("unresolvable condition ordering")
        pending = rest
    return order


def _sample_column(p: ParamDef, n: int, rng: np.random.Generator) -> list:
    if p.kind == CATEGORICAL:
        idx = rng.integers(len(p.levels), size=n)
        return [p.levels[int(i)] for i in idx]
    lo, hi = p.model_bounds()
    xs = rng.uniform(lo, hi, size=n)
    if p.kind == INTEGER:
        return [p.from_model(x) for x in xs]
    if p.log_scale:
        return [float(v) for v in 10.0**xs]
    return [float(x) for x in xs]


def is_valid(space: SearchSpace, config: Config) -> bool:
    """True iff active values are in range and the activity pattern matches
    the dependency structure exactly."""
    for name in config.values:
        if name not in space._index:
            raise ContractError(f"unknown parameter {name!r} in config")
    for p in space.params:
        if p.name not in config.values:
            raise ContractError(f"config is missing parameter {p.name!r}")
    for p in space.params:
        value = config.values[p.name]
        should_be_active = space.active_given(p, config.values)
        if should_be_active:
            if value is INACTIVE or not p.contains(value):
                return False
        else:
            if value is not INACTIVE:
                return False
    return True


def make_grid(space: SearchSpace, s: int, g: int = 20) -> Grid:
    """Equidistant grid on the sampling scale for parameter ``s``.

    Categorical grids are the level list. Integer grids are rounded to unique
    integers, so the returned grid may be shorter than ``g``.
    """
    p = space.param(s)
    s = space.index(p.name)
    if p.kind == CATEGORICAL:
        return Grid(s, tuple(p.levels))
    if g < 2:
        raise ContractError("g must be >= 2 for numeric parameters")
    lo, hi = p.model_bounds()
    xs = np.linspace(lo, hi, g)
    if p.kind == INTEGER:
        ints = [p.from_model(x) for x in xs]
        uniq = sorted(set(ints))
        return Grid(s, tuple(uniq))
    vals = 10.0**xs if p.log_scale else xs
    points = list(float(v) for v in vals)
    points[0], points[-1] = float(p.lower), float(p.upper)  # exact endpoints
    return Grid(s, tuple(points))


def subset_active(space: SearchSpace, configs: list[Config], s: int) -> np.ndarray:
    """Indices of configs in which parameter ``s`` is active."""
    name = space.param(s).name
    return np.array(
        [i for i, c in enumerate(configs) if c.is_active(name)], dtype=np.intp
    )


# ---------------------------------------------------------------------------
# JSON document format: array of {name, kind, lower, upper, levels, log,
# condition: {parent, values}}
# ---------------------------------------------------------------------------

def space_to_json(space: SearchSpace) -> list[dict]:
    out = []
    for p in space.params:
        d: dict = {"name": p.name, "kind": p.kind}
        if p.kind == CATEGORICAL:
            d["levels"] = list(p.levels)
        else:
            d["lower"] = p.lower
            d["upper"] = p.upper
            d["log"] = p.log_scale
        if p.condition is not None:
            d["condition"] = {
                "parent": p.condition.parent,
                "values": sorted(p.condition.values),
            }
        out.append(d)
    return out


def space_from_json(doc) -> SearchSpace:
    params = []
    for d in doc:
        cond = None
        if d.get("condition"):
            cond = Condition(d["condition"]["parent"], frozenset(d["condition"]["values"]))
        params.append(
            ParamDef(
                name=d["name"],
                kind=d["kind"],
                lower=d.get("lower"),
                upper=d.get("upper"),
                levels=tuple(d["levels"]) if d.get("levels") else None,
                log_scale=bool(d.get("log", False)),
                condition=cond,
            )
        )
    return SearchSpace(params)


def load_space(path) -> SearchSpace:
    with open(Path(path), encoding="utf-8") as fh:
        return space_from_json(json.load(fh))


def config_to_json(config: Config) -> dict:
    return {k: (None if v is INACTIVE else v) for k, v in config.values.items()}


def config_from_json(d: dict) -> Config:
    return Config({k: (INACTIVE if v is None else v) for k, v in d.items()})


def continuous_space(bounds: list[tuple[float, float]], prefix: str = "x") -> SearchSpace:
    """Flat all-continuous space, one param per (lower, upper) pair."""
    return SearchSpace(
        [
            ParamDef(name=f"{prefix}{i + 1}", kind=CONTINUOUS, lower=lo, upper=hi)
            for i, (lo, hi) in enumerate(bounds)
        ]
    )
