"""Command-line interface.

Subcommands: optimize, pdp, partition, score, bench synthetic, bench
misspec, bench baseline. Exits 0 on success, 1 on usage errors, 2 on
runtime failures.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import effects as fx
from . import harness as hn
from . import metrics as mt
from . import objective as ob
from . import optimizer as opt
from . import partition as pt
from . import space as sp
from . import surrogate as sg

_ESTIMATORS = {"diag": fx.DIAG, "full": fx.FULL_COV}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bopdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run Bayesian optimization, save the archive")
    group = p_opt.add_mutually_exclusive_group(required=True)
    group.add_argument("--synthetic", type=int, metavar="D",
                       help="Styblinski-Tang dimension")
    group.add_argument("--table", type=str, help="objective CSV path")
    p_opt.add_argument("--space", type=str, help="search-space JSON (table objective)")
    p_opt.add_argument("--knn", type=int, default=3, help="table interpolator neighbors")
    p_opt.add_argument("--tau", type=float, default=1.0)
    p_opt.add_argument("--budget", type=int, default=None)
    p_opt.add_argument("--init", type=int, default=None, help="init design size (default 4d)")
    p_opt.add_argument("--kernel", choices=[sg.MATERN32, sg.GAUSSIAN], default=sg.MATERN32)
    p_opt.add_argument("--nugget", type=float, default=1e-8)
    p_opt.add_argument("--estimate-nugget", action="store_true")
    p_opt.add_argument("--incumbent", choices=[opt.INCUMBENT_SURROGATE, opt.INCUMBENT_OBSERVED],
                       default=opt.INCUMBENT_SURROGATE)
    p_opt.add_argument("--seed", type=int, default=0)
    p_opt.add_argument("--out", type=str, required=True, help="archive JSON path")

    p_pdp = sub.add_parser("pdp", help="PDP CSV from an archive (global or incumbent leaf)")
    p_part = sub.add_parser("partition", help="grow the partition tree, export it")
    p_score = sub.add_parser("score", help="score global vs sub-regional PDP")
    for p in (p_pdp, p_part, p_score):
        p.add_argument("--archive", type=str, required=True)
        p.add_argument("--param", type=str, default="0", help="index or name of the plotted param")
        p.add_argument("--splits", type=int, default=0)
        p.add_argument("--criterion", choices=list(pt.CRITERIA), default=pt.L2)
        p.add_argument("--estimator", choices=list(_ESTIMATORS), default="diag")
        p.add_argument("--grid", type=int, default=20)
        p.add_argument("--n-mc", type=int, default=1000)
        p.add_argument("--min-node-size", type=int, default=10)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--seed", type=int, default=0)
    p_pdp.add_argument("--out", type=str, required=True, help="PDP CSV path")
    p_part.add_argument("--out", type=str, required=True, help="output directory")
    p_score.add_argument("--out", type=str, default=None, help="score JSON path (default stdout)")
    p_score.add_argument("--true-mc", type=int, default=100_000,
                         help="Monte Carlo size of the true-marginal oracle")

    p_bench = sub.add_parser("bench", help="paper-style benchmark studies")
    bench_sub = p_bench.add_subparsers(dest="bench_command", required=True)
    p_syn = bench_sub.add_parser("synthetic", help="sampling-bias and partition study")
    p_syn.add_argument("--config", type=str, required=True, help="experiment spec JSON")
    p_syn.add_argument("--out", type=str, default=None, help="override output directory")
    p_base = bench_sub.add_parser("baseline", help="tree vs L1-neighborhood comparison")
    p_base.add_argument("--config", type=str, required=True)
    p_base.add_argument("--out", type=str, default=None)
    p_mis = bench_sub.add_parser("misspec", help="kernel-misspecification stability study")
    p_mis.add_argument("--d", type=int, default=3)
    p_mis.add_argument("--reps", type=int, default=50)
    p_mis.add_argument("--seed", type=int, default=0)
    p_mis.add_argument("--out", type=str, required=True, help="output directory")

    return parser


def _load_archive_tools(args):
    archive = opt.load_archive(args.archive)
    space = archive.space
    param = space.param(int(args.param) if args.param.isdigit() else args.param)
    s = space.index(param.name)
    grid = sp.make_grid(space, s, args.grid)
    sample = sp.sample_uniform(space, args.n_mc, hn._derive_seed(args.seed, 101))
    if space.is_hierarchical:
        keep = sp.subset_active(space, sample, s)
        sample = [sample[i] for i in keep]
    estimator = _ESTIMATORS[args.estimator]
    mode = fx.MODE_WITH_JOINT if estimator == fx.FULL_COV else fx.MODE_DIAG_ONLY
    bundle = fx.ice(archive.surrogate, space, s, grid, sample, mode=mode)
    return archive, space, s, grid, sample, bundle, estimator


def _cmd_optimize(args) -> int:
    if args.synthetic is not None:
        objective_info = {"kind": "styblinski_tang", "d": args.synthetic}
        objective = ob.styblinski_tang(args.synthetic)
        default_budget = hn.DEFAULT_BUDGETS.get(args.synthetic)
    else:
        if not args.space:
            raise _UsageError("--table requires --space")
        objective_info = {"kind": "table", "path": args.table,
                          "space": args.space, "k": args.knn}
        objective = hn.build_objective(objective_info)
        default_budget = None
    budget = args.budget or default_budget
    if budget is None:
        raise _UsageError("--budget is required for this objective")
    init = args.init or 4 * len(objective.space)
    cfg = opt.BoConfig(
        tau=args.tau, budget=budget, init_design_size=init,
        kernel_family=args.kernel, nugget=args.nugget,
        estimate_nugget=args.estimate_nugget, seed=args.seed,
        incumbent_rule=args.incumbent,
    )
    archive = opt.run_bo(objective, objective.space, cfg)
    archive.objective_info = objective_info
    opt.save_archive(archive, args.out)
    print(f"archive written to {args.out} "
          f"(incumbent cost {archive.dataset.costs[archive.incumbent_index]:.6g})")
    return 0


def _cmd_pdp(args) -> int:
    archive, space, s, grid, sample, bundle, estimator = _load_archive_tools(args)
    if args.splits > 0:
        tree = pt.grow(bundle, sample, space, args.criterion, max_splits=args.splits,
                       min_node_size=args.min_node_size, estimator=estimator,
                       alpha=args.alpha)
        members = pt.locate(tree, archive.incumbent).members
    else:
        members = None
    est = fx.pdp_from_bundle(bundle, estimator=estimator, alpha=args.alpha,
                             members=members)
    est.to_csv(args.out)
    print(f"PDP ({est.n_members} members) written to {args.out}")
    return 0


def _cmd_partition(args) -> int:
    archive, space, s, grid, sample, bundle, estimator = _load_archive_tools(args)
    tree = pt.grow(bundle, sample, space, args.criterion, max_splits=args.splits,
                   min_node_size=args.min_node_size, estimator=estimator,
                   alpha=args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    refs = {}
    for leaf in tree.leaves():
        ref = f"leaf_{leaf.node_id}.csv"
        leaf.pdp.to_csv(out / ref)
        refs[leaf.node_id] = ref
    pt.save_tree(tree, out / "tree.json", refs)
    pt.leaves_to_csv(tree, space, out / "leaves.csv")
    incumbent_leaf = pt.locate(tree, archive.incumbent)
    print(f"{tree.n_splits} splits, {len(tree.leaves())} leaves "
          f"(incumbent in leaf {incumbent_leaf.node_id}); artifacts in {out}")
    return 0


def _cmd_score(args) -> int:
    archive, space, s, grid, sample, bundle, estimator = _load_archive_tools(args)
    if not archive.objective_info:
        print("error: archive does not record its objective; cannot score",
              file=sys.stderr)
        return 2
    objective = hn.build_objective(archive.objective_info)
    truth = ob.true_pd(objective, space, s, grid, n_mc=args.true_mc,
                       seed=hn._derive_seed(args.seed, 404))
    incumbent_s = archive.incumbent[space.param(s).name]
    global_est = fx.pdp_from_bundle(bundle, estimator=estimator, alpha=args.alpha)
    global_score = mt.score_pdp(global_est, truth, incumbent_s)
    result = {
        "global": {"mc": global_score.mc, "oc": global_score.oc,
                   "nll": global_score.nll_mean},
    }
    if args.splits > 0:
        tree = pt.grow(bundle, sample, space, args.criterion, max_splits=args.splits,
                       min_node_size=args.min_node_size, estimator=estimator,
                       alpha=args.alpha)
        members = pt.locate(tree, archive.incumbent).members
        sub_est = fx.pdp_from_bundle(bundle, estimator=estimator, alpha=args.alpha,
                                     members=members)
        sub_score = mt.score_pdp(sub_est, truth, incumbent_s)
        deltas = mt.improvement(global_score, sub_score)
        result["subregion"] = {"mc": sub_score.mc, "oc": sub_score.oc,
                               "nll": sub_score.nll_mean,
                               "n_members": int(len(members)),
                               "splits": tree.n_splits}
        result["improvement"] = {"delta_mc": deltas.delta_mc,
                                 "delta_oc": deltas.delta_oc,
                                 "delta_nll": deltas.delta_nll}
    text = json.dumps(result, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"scores written to {args.out}")
    else:
        print(text)
    return 0


def _cmd_bench(args) -> int:
    if args.bench_command == "misspec":
        rows = hn.run_misspec_study(d=args.d, reps=args.reps, seed=args.seed,
                                    out_dir=args.out)
        agg = {(r.kernel, r.estimator): r.nll for r in rows if r.replication == "mean"}
        for (kernel, estimator), value in agg.items():
            print(f"{kernel:>13} {estimator}: mean NLL {value:.4f}")
        return 0
    spec = hn.load_spec(args.config)
    if args.out:
        spec = hn.ExperimentSpec(**{**spec.__dict__, "out_dir": args.out})
    runner = (hn.run_baseline_compare if args.bench_command == "baseline"
              else hn.run_synthetic_study)
    rows = runner(spec)
    n_failed = sum(1 for r in rows if r.status == "failed")
    print(f"{len(rows)} result rows ({n_failed} failed replications)"
          + (f"; artifacts in {spec.out_dir}" if spec.out_dir else ""))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    try:
        if args.command == "optimize":
            return _cmd_optimize(args)
        if args.command == "pdp":
            return _cmd_pdp(args)
        if args.command == "partition":
            return _cmd_partition(args)
        if args.command == "score":
            return _cmd_score(args)
        if args.command == "bench":
            return _cmd_bench(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
