"""Experiment orchestration: optimize, explain, partition, score, repeat.

Every study is a pure function of its spec: per-replication seeds are
``base_seed + replication index``, the Monte Carlo sample and grid are fixed
across replications, and all emitted CSV/JSON artifacts are byte-identical
across re-runs. A failing replication is recorded as a failed row and never
aborts the study.
"""

import hashlib
import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import effects as fx
from . import metrics as mt
from . import objective as ob
from . import optimizer as opt
from . import partition as pt
from . import space as sp
from . import surrogate as sg
from ._fmt import write_csv
from .errors import ContractError

DEFAULT_BUDGETS = {3: 80, 5: 150, 8: 250}
TAU_LABELS = {0.1: "high", 1.0: "medium", 2.0: "medium", 5.0: "low"}

RESULT_COLUMNS = [
    "d", "tau", "bias", "replication", "split_count", "method", "status",
    "mmd", "mc", "oc", "nll", "delta_mc", "delta_oc", "delta_nll",
]

MISSPEC_COLUMNS = ["d", "replication", "kernel", "estimator", "nll"]


def tau_label(tau: float) -> str:
    return TAU_LABELS.get(float(tau), f"tau={tau:g}")


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one synthetic or table-backed study."""

    objective: dict
    taus: tuple[float, ...]
    budget: int
    init_design_size: int
    replications: int
    criterion: str = pt.L2
    max_splits: int = 3
    min_node_size: int = 10
    estimator: str = fx.DIAG
    g: int = 20
    n_mc: int = 1000
    base_seed: int = 0
    out_dir: str | None = None
    s: int = 0
    checkpoints: tuple[int, ...] | None = None
    kernel_family: str = sg.MATERN32
    nugget: float = 1e-8
    ard: bool = False
    incumbent_rule: str = opt.INCUMBENT_SURROGATE
    workers: int = 1
    emit_timings: bool = False
    save_artifacts: bool = True

    def __post_init__(self):
        if self.replications < 1:
            raise ContractError("replications must be >= 1")
        if not self.taus:
            raise ContractError("at least one tau value is required")

    def effective_checkpoints(self) -> tuple[int, ...]:
        if self.checkpoints is not None:
            ks = tuple(sorted(set(int(k) for k in self.checkpoints)))
        else:
            ks = tuple(range(self.max_splits + 1))
        return tuple(k for k in ks if 0 <= k <= self.max_splits) or (0,)


def spec_from_json(doc: dict) -> ExperimentSpec:
    doc = dict(doc)
    if "taus" in doc:
        doc["taus"] = tuple(float(t) for t in doc["taus"])
    if doc.get("checkpoints") is not None:
        doc["checkpoints"] = tuple(int(k) for k in doc["checkpoints"])
    return ExperimentSpec(**doc)


def load_spec(path) -> ExperimentSpec:
    with open(Path(path), encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))


def build_objective(objective: dict) -> ob.Objective:
    kind = objective.get("kind")
    if kind == "styblinski_tang":
        return ob.styblinski_tang(int(objective["d"]),
                                  plus_form=bool(objective.get("plus_form", False)))
    if kind == "table":
        space = sp.load_space(objective["space"])
        return ob.table_objective_from_csv(objective["path"], space,
                                           k=int(objective.get("k", 3)))
    raise ContractError(f"unknown objective kind {objective.get('kind')!r}")


@dataclass
class ResultRow:
    d: int
    tau: float
    replication: int | str
    split_count: int | str
    method: str = "tree"
    status: str = "ok"
    mmd: float | None = None
    mc: float | None = None
    oc: float | None = None
    nll: float | None = None
    delta_mc: float | None = None
    delta_oc: float | None = None
    delta_nll: float | None = None
    wall_time: float | None = None

    def csv_row(self) -> list:
        return [self.d, self.tau, tau_label(self.tau), self.replication,
                self.split_count, self.method, self.status, self.mmd, self.mc,
                self.oc, self.nll, self.delta_mc, self.delta_oc, self.delta_nll]


# ---------------------------------------------------------------------------
# Shared per-study context (fixed across replications)
# ---------------------------------------------------------------------------

@dataclass
class _StudyContext:
    objective: ob.Objective
    space: sp.SearchSpace
    s: int
    grid: sp.Grid
    sample: list[sp.Config]
    truth_curves: np.ndarray
    truth_valid: np.ndarray


def _derive_seed(base: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(base), *[int(t) for t in tags]]).generate_state(1)[0])


def _build_context(spec: ExperimentSpec) -> _StudyContext:
    objective = build_objective(spec.objective)
    space = objective.space
    param = space.param(spec.s)
    s = space.index(param.name)
    grid = sp.make_grid(space, s, spec.g)
    mc_seed = _derive_seed(spec.base_seed, 101)
    sample = sp.sample_uniform(space, spec.n_mc, mc_seed)
    if space.is_hierarchical:
        keep = sp.subset_active(space, sample, s)
        sample = [sample[i] for i in keep]
    truth_curves, truth_valid = _truth_curves(objective, space, s, grid, sample)
    return _StudyContext(objective=objective, space=space, s=s, grid=grid,
                         sample=sample, truth_curves=truth_curves,
                         truth_valid=truth_valid)


def _truth_curves(objective, space, s, grid, sample):
    """Objective values on every (grid point, sample) combination, so the
    true marginal of any member subset is a masked column average."""
    name = space.param(s).name
    n, n_grid = len(sample), len(grid)
    curves = np.zeros((n, n_grid))
    valid = np.ones((n, n_grid), dtype=bool)
    if not space.is_hierarchical and objective.matrix_fn is not None:
        base = np.array([[c[p] for p in space.names] for c in sample], dtype=float)
        col = space.index(name)
        for g, point in enumerate(grid.points):
            base[:, col] = float(point)
            curves[:, g] = objective.evaluate_matrix(base)
        return curves, valid
    for i, config in enumerate(sample):
        for g, point in enumerate(grid.points):
            combined = config.replace(name, point)
            if space.is_hierarchical and not sp.is_valid(space, combined):
                valid[i, g] = False
                continue
            curves[i, g] = objective(combined)
    return curves, valid


def _true_marginal(ctx: _StudyContext, members: np.ndarray) -> ob.TrueMarginal:
    curves = ctx.truth_curves[members]
    mask = ctx.truth_valid[members]
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        g = int(np.argmax(counts == 0))
        raise ContractError(f"no valid member at grid point index {g} for the truth")
    values = (curves * mask).sum(axis=0) / counts
    return ob.TrueMarginal(grid=ctx.grid, values=values, mc_sample_size=len(members))


# ---------------------------------------------------------------------------
# One replication of the synthetic study
# ---------------------------------------------------------------------------

@dataclass
class _RepOutcome:
    tau: float
    replication: int
    rows: list[ResultRow]
    wall_time: float
    archive_json: dict | None = None
    tree_json: dict | None = None
    pdp_rows: dict | None = None
    error: str | None = None


def _run_replication(spec: ExperimentSpec, ctx: _StudyContext, tau: float,
                     rep: int, compare_baseline: bool) -> _RepOutcome:
    t0 = time.perf_counter()
    d = len(ctx.space)
    rep_seed = spec.base_seed + rep
    try:
        cfg = opt.BoConfig(
            tau=tau, budget=spec.budget, init_design_size=spec.init_design_size,
            kernel_family=spec.kernel_family, nugget=spec.nugget, seed=rep_seed,
            ard=spec.ard, incumbent_rule=spec.incumbent_rule,
        )
        archive = opt.run_bo(ctx.objective, ctx.space, cfg)
        gp = archive.surrogate

        ref_seed = _derive_seed(rep_seed, 202)
        reference = sp.sample_uniform(ctx.space, spec.budget, ref_seed)
        x_run = sg.encode_configs(ctx.space, archive.dataset.configs)
        x_ref = sg.encode_configs(ctx.space, reference)
        mmd = float(np.sqrt(max(mt.mmd2(x_ref, x_run), 0.0)))

        mode = fx.MODE_WITH_JOINT if spec.estimator == fx.FULL_COV else fx.MODE_DIAG_ONLY
        bundle = fx.ice(gp, ctx.space, ctx.s, ctx.grid, ctx.sample, mode=mode)
        all_members = np.arange(bundle.n, dtype=np.intp)
        global_pdp = fx.pdp_from_bundle(bundle, estimator=spec.estimator)
        incumbent_s = archive.incumbent[ctx.space.param(ctx.s).name]
        global_score = mt.score_pdp(global_pdp, _true_marginal(ctx, all_members),
                                    incumbent_s)

        tree = pt.grow(bundle, ctx.sample, ctx.space, spec.criterion,
                       max_splits=spec.max_splits, min_node_size=spec.min_node_size,
                       estimator=spec.estimator)

        rows = []
        leaf_pdps = {}
        for k in spec.effective_checkpoints():
            for method in (("tree", "baseline") if compare_baseline else ("tree",)):
                if k == 0:
                    members = all_members
                elif method == "tree":
                    members = pt.locate(tree, archive.incumbent, n_splits=k).members
                else:
                    leaf = pt.locate(tree, archive.incumbent, n_splits=k)
                    members = pt.l1_baseline(bundle, ctx.sample, archive.incumbent,
                                             leaf.size())
                sub_pdp = fx.pdp_from_bundle(bundle, estimator=spec.estimator,
                                             members=members)
                score = mt.score_pdp(sub_pdp, _true_marginal(ctx, members), incumbent_s)
                deltas = mt.improvement(global_score, score)
                rows.append(ResultRow(
                    d=d, tau=tau, replication=rep, split_count=k, method=method,
                    mmd=mmd, mc=score.mc, oc=score.oc, nll=score.nll_mean,
                    delta_mc=deltas.delta_mc, delta_oc=deltas.delta_oc,
                    delta_nll=deltas.delta_nll,
                ))
                if method == "tree":
                    leaf_pdps[k] = sub_pdp
        wall = time.perf_counter() - t0
        for row in rows:
            row.wall_time = wall
        outcome = _RepOutcome(tau=tau, replication=rep, rows=rows, wall_time=wall)
        if spec.save_artifacts:
            archive.objective_info = spec.objective
            outcome.archive_json = opt.archive_to_json(archive)
            outcome.tree_json = pt.tree_to_json(tree)
            outcome.pdp_rows = {k: est for k, est in leaf_pdps.items()}
        return outcome
    except Exception:
        wall = time.perf_counter() - t0
        row = ResultRow(d=d, tau=tau, replication=rep, split_count="", status="failed",
                        wall_time=wall)
        return _RepOutcome(tau=tau, replication=rep, rows=[row], wall_time=wall,
                           error=traceback.format_exc())


def _aggregate(rows: list[ResultRow], d: int) -> list[ResultRow]:
    """Mean and sd rows per (tau, split_count, method) over ok replications."""
    out = []
    keys = []
    for row in rows:
        key = (row.tau, row.split_count, row.method)
        if row.status == "ok" and key not in keys:
            keys.append(key)
    for tau, k, method in keys:
        group = [r for r in rows
                 if (r.tau, r.split_count, r.method) == (tau, k, method)
                 and r.status == "ok"]
        for stat in ("mean", "sd"):
            agg = ResultRow(d=d, tau=tau, replication=stat, split_count=k,
                            method=method, status="aggregate")
            for name in ("mmd", "mc", "oc", "nll", "delta_mc", "delta_oc", "delta_nll"):
                vals = [getattr(r, name) for r in group]
                vals = [v for v in vals if v is not None]
                if not vals:
                    continue
                if stat == "mean":
                    setattr(agg, name, float(np.mean(vals)))
                elif len(vals) > 1:
                    setattr(agg, name, float(np.std(vals, ddof=1)))
            out.append(agg)
    return out


def _execute(spec: ExperimentSpec, ctx: _StudyContext,
             compare_baseline: bool) -> list[_RepOutcome]:
    tasks = [(tau, rep) for tau in spec.taus for rep in range(spec.replications)]
    if spec.workers <= 1:
        return [_run_replication(spec, ctx, tau, rep, compare_baseline)
                for tau, rep in tasks]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        futures = [pool.submit(_run_replication, spec, ctx, tau, rep, compare_baseline)
                   for tau, rep in tasks]
        return [f.result() for f in futures]


def _study(spec: ExperimentSpec, compare_baseline: bool) -> list[ResultRow]:
    ctx = _build_context(spec)
    outcomes = _execute(spec, ctx, compare_baseline)
    rows: list[ResultRow] = []
    for outcome in outcomes:
        rows.extend(outcome.rows)
    rows = rows + _aggregate(rows, d=len(ctx.space))
    if spec.out_dir:
        _emit_artifacts(spec, ctx, outcomes, rows)
    return rows


def run_synthetic_study(spec: ExperimentSpec) -> list[ResultRow]:
    """BO -> global PDP -> MMD -> partition -> per-checkpoint sub-regional
    scores, for every (tau, replication); aggregates appended."""
    return _study(spec, compare_baseline=False)


def run_baseline_compare(spec: ExperimentSpec) -> list[ResultRow]:
    """Synthetic study that also scores the equal-size L1 neighborhood around
    the incumbent for every checkpoint (method column: tree vs baseline)."""
    return _study(spec, compare_baseline=True)


# ---------------------------------------------------------------------------
# Kernel misspecification study
# ---------------------------------------------------------------------------

@dataclass
class MisspecRow:
    d: int
    replication: int | str
    kernel: str
    estimator: str
    nll: float | None

    def csv_row(self) -> list:
        return [self.d, self.replication, self.kernel, self.estimator, self.nll]


def run_misspec_study(
    d: int,
    reps: int = 50,
    seed: int = 0,
    n_train: int = 30,
    g: int = 20,
    n_mc: int = 1000,
    out_dir: str | None = None,
) -> list[MisspecRow]:
    """Compare the two PDP variance estimates under a correctly specified
    and a deliberately misspecified kernel.

    The ground truth is the posterior mean of a reference GP fitted to
    ``n_train`` uniform Styblinski-Tang samples; both surrogates are then fit
    to that function's values at the same inputs, and the NLL of its true
    marginal is evaluated under each (estimator, kernel) PDP.
    """
    st = ob.styblinski_tang(d)
    space = st.space
    grid = sp.make_grid(space, 0, g)
    sample = sp.sample_uniform(space, n_mc, _derive_seed(seed, 301))
    rows: list[MisspecRow] = []
    for rep in range(reps):
        rep_seed = seed + rep
        x = sg.encode_configs(space, sp.sample_uniform(space, n_train,
                                                       _derive_seed(rep_seed, 302)))
        y = st.evaluate_matrix(x)
        truth_gp = sg.fit(x, y, family=sg.MATERN32, nugget=1e-8,
                          seed=_derive_seed(rep_seed, 303), space=space)
        y_true, _ = sg.predict_mean_var(truth_gp, x)

        truth_bundle = fx.ice(truth_gp, space, 0, grid, sample)
        truth = ob.TrueMarginal(grid=grid, values=fx.pdp_mean(truth_bundle),
                                mc_sample_size=n_mc)

        for family, label in ((sg.MATERN32, "correct"), (sg.GAUSSIAN, "misspecified")):
            surrogate = sg.fit(x, y_true, family=family, nugget=1e-8,
                               seed=_derive_seed(rep_seed, 304), space=space)
            bundle = fx.ice(surrogate, space, 0, grid, sample,
                            mode=fx.MODE_WITH_JOINT)
            for estimator, tag in ((fx.FULL_COV, "eq4_full"), (fx.DIAG, "eq5_diag")):
                est = fx.pdp_from_bundle(bundle, estimator=estimator)
                res = mt.nll(est, truth)
                rows.append(MisspecRow(d=d, replication=rep, kernel=label,
                                       estimator=tag, nll=res.mean))
            del bundle
    rows = rows + _aggregate_misspec(rows, d)
    if out_dir:
        out = Path(out_dir)
        write_csv(out / "misspec.csv", MISSPEC_COLUMNS,
                  [r.csv_row() for r in rows])
        _write_manifest(out, [out / "misspec.csv"])
    return rows


def _aggregate_misspec(rows: list[MisspecRow], d: int) -> list[MisspecRow]:
    out = []
    for kernel in ("correct", "misspecified"):
        for estimator in ("eq4_full", "eq5_diag"):
            vals = [r.nll for r in rows
                    if r.kernel == kernel and r.estimator == estimator
                    and isinstance(r.replication, int)]
            out.append(MisspecRow(d=d, replication="mean", kernel=kernel,
                                  estimator=estimator, nll=float(np.mean(vals))))
            sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
            out.append(MisspecRow(d=d, replication="sd", kernel=kernel,
                                  estimator=estimator, nll=sd))
    return out


# ---------------------------------------------------------------------------
# Artifact emission
# ---------------------------------------------------------------------------

def _emit_artifacts(spec: ExperimentSpec, ctx: _StudyContext,
                    outcomes: list[_RepOutcome], rows: list[ResultRow]) -> None:
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    results = out / "results.csv"
    write_csv(results, RESULT_COLUMNS, [r.csv_row() for r in rows])
    paths.append(results)

    if spec.save_artifacts:
        for outcome in outcomes:
            stem = f"tau{outcome.tau:g}_rep{outcome.replication}"
            if outcome.archive_json is not None:
                p = out / "runs" / f"{stem}.json"
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(json.dumps(outcome.archive_json, indent=1) + "\n",
                             encoding="utf-8")
                paths.append(p)
            if outcome.tree_json is not None:
                p = out / "trees" / f"{stem}.json"
                p.parent.mkdir(parents=True, exist_ok=True)
                p.write_text(json.dumps(outcome.tree_json, indent=1) + "\n",
                             encoding="utf-8")
                paths.append(p)
            if outcome.pdp_rows:
                for k, est in outcome.pdp_rows.items():
                    p = out / "pdp" / f"{stem}_splits{k}.csv"
                    est.to_csv(p)
                    paths.append(p)

    if spec.emit_timings:
        timings = out / "timings.csv"
        trows = [[o.tau, o.replication, o.wall_time] for o in outcomes]
        write_csv(timings, ["tau", "replication", "wall_time"], trows)
        # deliberately not in the manifest: wall time varies between runs

    _write_manifest(out, paths)


def _write_manifest(out: Path, paths: list[Path]) -> None:
    entries = []
    for p in sorted(paths):
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        entries.append({
            "path": str(p.relative_to(out)),
            "sha256": digest,
            "bytes": p.stat().st_size,
        })
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"artifacts": entries}, indent=1) + "\n",
                        encoding="utf-8")
