"""Tree-based partitioning of the complement space into sub-regions whose
ICE uncertainty curves are homogeneous.

A node's impurity measures how much the members' uncertainty structure
varies; splitting greedily minimizes the summed child impurity over all
axis-aligned cuts. Growth is best-first: the executed split is always the
one with the largest impurity reduction among all current leaves, which
makes "the partition after k splits" well defined. The split parameter is
always taken from the complement (never the plotted parameter), so every
sub-region keeps the full plotted range.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import effects as fx
from . import space as sp
from ._fmt import write_csv
from .errors import ContractError, UnsupportedSplitError

L2 = "l2"
AREA = "area"
VAR = "var"
MEAN = "mean"
CRITERIA = (L2, AREA, VAR, MEAN)

MAX_CATEGORICAL_LEVELS = 10


@dataclass(frozen=True)
class Split:
    """Binary cut on one complement parameter."""

    j: int
    param: str
    threshold: float | None = None
    left_levels: frozenset | None = None

    def goes_left(self, value) -> bool:
        if self.left_levels is not None:
            return value in self.left_levels
        return value <= self.threshold


@dataclass
class PartitionNode:
    members: np.ndarray
    box: dict
    depth: int
    impurity: float
    node_id: int
    pdp: fx.PdpEstimate | None = None
    split: Split | None = None
    children: tuple["PartitionNode", "PartitionNode"] | None = None
    split_order: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def size(self) -> int:
        return len(self.members)


@dataclass
class PartitionTree:
    root: PartitionNode
    s: int
    criterion: str
    max_splits: int
    min_node_size: int
    n_splits: int
    nodes: list[PartitionNode]
    space: sp.SearchSpace = field(repr=False, default=None)

    def leaves(self) -> list[PartitionNode]:
        return [n for n in self.nodes if n.is_leaf]

    def leaves_at(self, n_splits: int) -> list[PartitionNode]:
        """Leaves of the partial tree after the first ``n_splits`` splits."""
        out: list[PartitionNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.children is not None and node.split_order < n_splits:
                stack.extend(reversed(node.children))
            else:
                out.append(node)
        return out


def impurity(bundle: fx.IceBundle, members, criterion: str) -> float:
    """Within-node heterogeneity of the members' uncertainty structure.

    l2:   summed squared deviation of each variance curve from the node's
          pointwise mean variance curve, over all grid points.
    area: squared per-curve average deviation, summed over members.
    var:  squared deviation of each member's own-location posterior variance
          from the node mean.
    mean: same as l2 on the posterior-mean curves.
    """
    if criterion not in CRITERIA:
        raise ContractError(f"unknown split criterion {criterion!r}")
    idx = fx._resolve_members(bundle, members)
    if criterion == VAR:
        u = bundle.self_var[idx]
        return float(np.sum((u - u.mean()) ** 2))
    curves = bundle.var_curves if criterion in (L2, AREA) else bundle.mean_curves
    a = curves[idx]
    mask = bundle.valid[idx]
    if mask.all():
        col_means = a.mean(axis=0)
        dev = a - col_means
        if criterion == AREA:
            return float(np.sum(dev.mean(axis=1) ** 2))
        return float(np.sum(dev**2))
    counts = mask.sum(axis=0)
    sums = (a * mask).sum(axis=0)
    col_means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    dev = (a - col_means) * mask
    if criterion == AREA:
        row_counts = mask.sum(axis=1)
        row_avg = np.divide(dev.sum(axis=1), row_counts,
                            out=np.zeros(len(idx)), where=row_counts > 0)
        return float(np.sum(row_avg**2))
    return float(np.sum(dev**2))


@dataclass(frozen=True)
class SplitCandidate:
    split: Split
    left: np.ndarray
    right: np.ndarray
    value: float  # summed child impurity I(j, t)


def best_split(
    bundle: fx.IceBundle,
    members,
    configs: list[sp.Config],
    space: sp.SearchSpace,
    criterion: str,
    min_node_size: int,
) -> SplitCandidate | None:
    """Minimize summed child impurity over all admissible axis-aligned cuts.

    Numeric candidates are midpoints between consecutive distinct member
    values (on the sampling scale); categorical candidates are all binary
    level subsets. Ties resolve to the lowest parameter index, then the
    lowest threshold / lexicographically smallest level subset. Returns None
    when no cut leaves both children at ``min_node_size`` or larger.
    """
    idx = fx._resolve_members(bundle, members)
    if len(idx) < 2 * min_node_size:
        return None
    s_name = space.param(bundle.s).name
    best: SplitCandidate | None = None
    for j, p in enumerate(space.params):
        if p.name == s_name:
            continue
        if any(not configs[i].is_active(p.name) for i in idx):
            continue
        if p.kind == sp.CATEGORICAL:
            cand = _best_categorical(bundle, idx, configs, p, j, criterion, min_node_size)
        else:
            cand = _best_numeric(bundle, idx, configs, p, j, criterion, min_node_size)
        if cand is not None and (best is None or cand.value < best.value):
            best = cand
    return best


def _split_stats(bundle: fx.IceBundle, idx: np.ndarray, criterion: str):
    """Per-member quantities whose prefix sums give child impurities."""
    if criterion == VAR:
        return bundle.self_var[idx][:, None]
    curves = bundle.var_curves if criterion in (L2, AREA) else bundle.mean_curves
    a = curves[idx]
    if criterion == AREA:
        return a.mean(axis=1)[:, None]
    return a


def _sweep_impurities(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left/right impurity at every cut position for a sorted member matrix.

    For column-wise sums S1, S2 over a child, the squared deviation from the
    child's column mean is sum(S2 - S1^2 / m); cuts share prefix sums.
    """
    m = values.shape[0]
    c1 = np.cumsum(values, axis=0)
    c2 = np.cumsum(values**2, axis=0)
    sizes = np.arange(1, m + 1, dtype=float)
    left = c2.sum(axis=1) - (c1**2).sum(axis=1) / sizes
    r1 = c1[-1] - c1
    r2 = c2[-1] - c2
    right_sizes = m - sizes
    with np.errstate(invalid="ignore", divide="ignore"):
        right = r2.sum(axis=1) - (r1**2).sum(axis=1) / right_sizes
    right[-1] = 0.0
    return np.maximum(left, 0.0), np.maximum(right, 0.0)


def _best_numeric(bundle, idx, configs, p, j, criterion, min_node_size):
    vals = np.array([p.to_model(configs[i][p.name]) for i in idx])
    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    cuts = np.nonzero(sorted_vals[:-1] < sorted_vals[1:])[0]  # cut after position k
    cuts = cuts[(cuts + 1 >= min_node_size) & (len(idx) - cuts - 1 >= min_node_size)]
    if cuts.size == 0:
        return None

    if not bool(bundle.valid[idx].all()):
        totals = None  # masked entries: fall back to direct evaluation
    else:
        stats = _split_stats(bundle, idx, criterion)[order]
        stats = stats - stats.mean(axis=0)  # centering keeps the sweep stable
        left_imp, right_imp = _sweep_impurities(stats)
        totals = left_imp[cuts] + right_imp[cuts]

    best_value = math.inf
    best_cut = None
    for rank, k in enumerate(cuts):
        if totals is not None:
            value = float(totals[rank])
        else:
            left_m = idx[order[: k + 1]]
            right_m = idx[order[k + 1:]]
            value = impurity(bundle, left_m, criterion) + impurity(bundle, right_m, criterion)
        if value < best_value:
            best_value = value
            best_cut = int(k)
    t_model = 0.5 * (sorted_vals[best_cut] + sorted_vals[best_cut + 1])
    threshold = 10.0**t_model if p.log_scale else float(t_model)
    left_m = np.sort(idx[order[: best_cut + 1]])
    right_m = np.sort(idx[order[best_cut + 1:]])
    return SplitCandidate(
        split=Split(j=j, param=p.name, threshold=threshold),
        left=left_m, right=right_m, value=best_value,
    )


def _best_categorical(bundle, idx, configs, p, j, criterion, min_node_size):
    q = len(p.levels)
    if q > MAX_CATEGORICAL_LEVELS:
        raise UnsupportedSplitError(
            f"categorical param {p.name!r} has {q} levels; subset enumeration "
            f"is capped at {MAX_CATEGORICAL_LEVELS}"
        )
    level_idx = np.array([p.levels.index(configs[i][p.name]) for i in idx])
    best_value = math.inf
    best_key = None
    best_subset = None
    # binary subsets up to complement symmetry: keep level 0 on the left
    others = list(range(1, q))
    for r in range(0, q - 1):
        for combo in itertools.combinations(others, r):
            subset = (0,) + combo
            sel = np.isin(level_idx, subset)
            n_left = int(sel.sum())
            if n_left < min_node_size or len(idx) - n_left < min_node_size:
                continue
            left_m = idx[sel]
            right_m = idx[~sel]
            value = impurity(bundle, left_m, criterion) + impurity(bundle, right_m, criterion)
            key = subset
            if value < best_value or (value == best_value and key < best_key):
                best_value = value
                best_key = key
                best_subset = subset
    if best_subset is None:
        return None
    sel = np.isin(level_idx, best_subset)
    levels = frozenset(p.levels[i] for i in best_subset)
    return SplitCandidate(
        split=Split(j=j, param=p.name, left_levels=levels),
        left=np.sort(idx[sel]), right=np.sort(idx[~sel]), value=best_value,
    )


def _root_box(space: sp.SearchSpace) -> dict:
    box = {}
    for p in space.params:
        if p.kind == sp.CATEGORICAL:
            box[p.name] = frozenset(p.levels)
        else:
            box[p.name] = (float(p.lower), float(p.upper))
    return box


def _child_boxes(box: dict, split: Split) -> tuple[dict, dict]:
    left = dict(box)
    right = dict(box)
    if split.left_levels is not None:
        left[split.param] = frozenset(split.left_levels)
        right[split.param] = box[split.param] - split.left_levels
    else:
        lo, hi = box[split.param]
        left[split.param] = (lo, float(split.threshold))
        right[split.param] = (float(split.threshold), hi)
    return left, right


def grow(
    bundle: fx.IceBundle,
    configs: list[sp.Config],
    space: sp.SearchSpace,
    criterion: str = L2,
    max_splits: int = 3,
    min_node_size: int = 10,
    estimator: str = fx.DIAG,
    alpha: float = 0.05,
) -> PartitionTree:
    """Best-first tree growth: repeatedly execute the split with the largest
    strict impurity reduction over all current leaves."""
    if len(configs) != bundle.n:
        raise ContractError("configs must align with the bundle sample")
    members = np.arange(bundle.n, dtype=np.intp)
    root = PartitionNode(
        members=members,
        box=_root_box(space),
        depth=0,
        impurity=impurity(bundle, members, criterion),
        node_id=0,
        pdp=fx.pdp_from_bundle(bundle, estimator=estimator, alpha=alpha, members=members),
    )
    nodes = [root]
    candidates: dict[int, SplitCandidate | None] = {
        0: best_split(bundle, members, configs, space, criterion, min_node_size)
    }
    n_splits = 0
    while n_splits < max_splits:
        best_node = None
        best_reduction = 0.0
        for node in nodes:  # creation order; strict > keeps the earliest on ties
            if not node.is_leaf:
                continue
            cand = candidates.get(node.node_id)
            if cand is None:
                continue
            reduction = node.impurity - cand.value
            if reduction > best_reduction:
                best_node = node
                best_reduction = reduction
        if best_node is None:
            break
        cand = candidates[best_node.node_id]
        left_box, right_box = _child_boxes(best_node.box, cand.split)
        children = []
        for child_members, child_box in ((cand.left, left_box), (cand.right, right_box)):
            child = PartitionNode(
                members=child_members,
                box=child_box,
                depth=best_node.depth + 1,
                impurity=impurity(bundle, child_members, criterion),
                node_id=len(nodes),
                pdp=fx.pdp_from_bundle(bundle, estimator=estimator, alpha=alpha,
                                       members=child_members),
            )
            nodes.append(child)
            candidates[child.node_id] = best_split(
                bundle, child_members, configs, space, criterion, min_node_size
            )
            children.append(child)
        best_node.split = cand.split
        best_node.children = (children[0], children[1])
        best_node.split_order = n_splits
        n_splits += 1
    return PartitionTree(root=root, s=bundle.s, criterion=criterion,
                         max_splits=max_splits, min_node_size=min_node_size,
                         n_splits=n_splits, nodes=nodes, space=space)


def _in_box(space: sp.SearchSpace, box: dict, config: sp.Config) -> bool:
    for p in space.params:
        v = config.values[p.name]
        if v is sp.INACTIVE:
            continue
        bounds = box[p.name]
        if p.kind == sp.CATEGORICAL:
            if v not in bounds:
                return False
        elif not bounds[0] <= v <= bounds[1]:
            return False
    return True


def locate(tree: PartitionTree, config: sp.Config,
           n_splits: int | None = None) -> PartitionNode:
    """Leaf whose box contains the complement projection of ``config``.

    Values exactly on a threshold go left. ``n_splits`` restricts the walk to
    the partial tree after that many splits."""
    if not _in_box(tree.space, tree.root.box, config):
        raise ContractError("configuration lies outside the root box")
    limit = tree.n_splits if n_splits is None else n_splits
    node = tree.root
    while node.children is not None and node.split_order < limit:
        value = config.values[node.split.param]
        node = node.children[0] if node.split.goes_left(value) else node.children[1]
    return node


def l1_baseline(
    bundle: fx.IceBundle,
    configs: list[sp.Config],
    incumbent: sp.Config,
    target_size: int,
) -> np.ndarray:
    """The ``target_size`` sample members nearest the incumbent in L1 distance
    over model-scale complement coordinates; ties resolve to lower index."""
    if target_size < 1:
        raise ContractError("target_size must be >= 1")
    from . import surrogate as sg

    space = bundle.space
    x = sg.encode_configs(space, configs)
    ref = sg.encode_configs(space, [incumbent])[0]
    cols = [c for c in range(x.shape[1]) if c != bundle.s]
    dist = np.sum(np.abs(x[:, cols] - ref[cols]), axis=1)
    order = np.argsort(dist, kind="stable")
    return np.sort(order[: min(target_size, len(configs))].astype(np.intp))


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _box_json(box: dict) -> dict:
    return {
        name: (sorted(v) if isinstance(v, frozenset) else [v[0], v[1]])
        for name, v in box.items()
    }


def _node_json(node: PartitionNode, pdp_refs: dict | None) -> dict:
    d: dict = {
        "id": node.node_id,
        "depth": node.depth,
        "size": node.size(),
        "impurity": node.impurity,
        "box": _box_json(node.box),
    }
    if pdp_refs and node.node_id in pdp_refs:
        d["pdp_file"] = pdp_refs[node.node_id]
    if node.children is not None:
        d["split"] = {
            "param": node.split.param,
            "threshold": node.split.threshold,
            "left_levels": sorted(node.split.left_levels) if node.split.left_levels else None,
            "order": node.split_order,
        }
        d["children"] = [_node_json(c, pdp_refs) for c in node.children]
    return d


def tree_to_json(tree: PartitionTree, pdp_refs: dict | None = None) -> dict:
    return {
        "s": tree.s,
        "criterion": tree.criterion,
        "max_splits": tree.max_splits,
        "min_node_size": tree.min_node_size,
        "n_splits": tree.n_splits,
        "root": _node_json(tree.root, pdp_refs),
    }


def save_tree(tree: PartitionTree, path, pdp_refs: dict | None = None) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(tree_to_json(tree, pdp_refs), fh, indent=1)
        fh.write("\n")


def leaves_to_csv(tree: PartitionTree, space: sp.SearchSpace, path) -> None:
    header = ["leaf_id", "depth", "size", "impurity"]
    for p in space.params:
        if p.kind == sp.CATEGORICAL:
            header.append(f"{p.name}__levels")
        else:
            header += [f"{p.name}__lo", f"{p.name}__hi"]
    rows = []
    for leaf in tree.leaves():
        row: list = [leaf.node_id, leaf.depth, leaf.size(), leaf.impurity]
        for p in space.params:
            b = leaf.box[p.name]
            if p.kind == sp.CATEGORICAL:
                row.append("|".join(sorted(b)))
            else:
                row += [b[0], b[1]]
        rows.append(row)
    write_csv(path, header, rows)
