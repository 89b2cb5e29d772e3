import json

import numpy as np
import pytest

from bopdp import harness as hn
from bopdp import objective as ob
from bopdp import optimizer as opt
from bopdp import space as sp
from bopdp.errors import ContractError


def tiny_spec(**overrides):
    base = dict(
        objective={"kind": "styblinski_tang", "d": 2},
        taus=(1.0,), budget=16, init_design_size=8, replications=2,
        max_splits=2, g=6, n_mc=80, base_seed=5, min_node_size=5,
    )
    base.update(overrides)
    return hn.ExperimentSpec(**base)


class TestExperimentSpec:
    def test_json_round_trip(self, tmp_path):
        doc = {
            "objective": {"kind": "styblinski_tang", "d": 3},
            "taus": [0.1, 2, 5],
            "budget": 80,
            "init_design_size": 12,
            "replications": 10,
            "checkpoints": [1, 3],
            "out_dir": "out",
        }
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        spec = hn.load_spec(path)
        assert spec.taus == (0.1, 2.0, 5.0)
        assert spec.checkpoints == (1, 3)
        assert spec.budget == 80

    def test_checkpoints_default_to_all_counts(self):
        spec = tiny_spec(checkpoints=None, max_splits=2)
        assert spec.effective_checkpoints() == (0, 1, 2)

    def test_checkpoints_clipped_to_max_splits(self):
        spec = tiny_spec(checkpoints=(0, 1, 9), max_splits=2)
        assert spec.effective_checkpoints() == (0, 1)

    def test_replications_positive(self):
        with pytest.raises(ContractError):
            tiny_spec(replications=0)

    def test_unknown_objective_kind(self):
        with pytest.raises(ContractError):
            hn.build_objective({"kind": "rosenbrock"})

    def test_tau_labels(self):
        assert hn.tau_label(0.1) == "high"
        assert hn.tau_label(2.0) == "medium"
        assert hn.tau_label(5.0) == "low"
        assert hn.tau_label(7.0) == "tau=7"


@pytest.fixture(scope="module")
def study(tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    spec = tiny_spec(out_dir=str(out))
    rows = hn.run_synthetic_study(spec)
    return spec, rows, out


@pytest.fixture(scope="module")
def misspec_rows():
    return hn.run_misspec_study(d=2, reps=2, seed=1, n_train=12, g=5, n_mc=60)


class TestSyntheticStudy:
    def test_row_count(self, study):
        spec, rows, _ = study
        per_rep = len(spec.effective_checkpoints())
        expected = spec.replications * per_rep
        ok_rows = [r for r in rows if isinstance(r.replication, int)]
        agg_rows = [r for r in rows if r.status == "aggregate"]
        assert len(ok_rows) == expected
        assert len(agg_rows) == 2 * per_rep  # mean + sd per checkpoint

    def test_zero_split_checkpoint_has_zero_deltas(self, study):
        _, rows, _ = study
        for r in rows:
            if isinstance(r.replication, int) and r.split_count == 0:
                assert r.delta_mc == 0.0
                assert r.delta_oc == 0.0
                assert r.delta_nll == 0.0

    def test_results_csv_schema(self, study):
        _, _, out = study
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0] == ",".join(hn.RESULT_COLUMNS)
        assert "wall" not in lines[0]

    def test_manifest_hashes_verify(self, study):
        import hashlib

        _, _, out = study
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["artifacts"]
        for entry in manifest["artifacts"]:
            digest = hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest()
            assert digest == entry["sha256"]

    def test_archives_and_trees_emitted(self, study):
        spec, _, out = study
        assert len(list((out / "runs").glob("*.json"))) == spec.replications
        assert len(list((out / "trees").glob("*.json"))) == spec.replications
        archive = opt.load_archive(next(iter(sorted((out / "runs").glob("*.json")))))
        assert archive.objective_info == spec.objective

    def test_byte_identical_rerun(self, study, tmp_path):
        spec, _, out = study
        spec2 = tiny_spec(out_dir=str(tmp_path / "again"))
        hn.run_synthetic_study(spec2)
        assert (tmp_path / "again" / "results.csv").read_bytes() == \
            (out / "results.csv").read_bytes()

    def test_wall_time_recorded_in_memory_only(self, study):
        _, rows, out = study
        assert all(r.wall_time is not None for r in rows
                   if isinstance(r.replication, int))
        assert not (out / "timings.csv").exists()


class TestSingleRepEdgeCases:
    def test_one_rep_zero_splits_deltas_zero(self):
        spec = tiny_spec(replications=1, max_splits=0)
        rows = hn.run_synthetic_study(spec)
        data = [r for r in rows if isinstance(r.replication, int)]
        assert len(data) == 1
        assert data[0].split_count == 0
        assert data[0].delta_mc == 0.0

    def test_sd_aggregate_is_none_for_single_rep(self):
        spec = tiny_spec(replications=1, max_splits=0)
        rows = hn.run_synthetic_study(spec)
        sd_rows = [r for r in rows if r.replication == "sd"]
        assert sd_rows and all(r.mc is None for r in sd_rows)

    def test_crash_isolation(self, monkeypatch):
        real_run_bo = opt.run_bo
        calls = {"n": 0}

        def flaky(obj, space, cfg):
            calls["n"] += 1
            if cfg.seed == 6:  # second replication (base_seed 5 + rep 1)
                raise RuntimeError("synthetic failure")
            return real_run_bo(obj, space, cfg)

        monkeypatch.setattr(hn.opt, "run_bo", flaky)
        rows = hn.run_synthetic_study(tiny_spec())
        failed = [r for r in rows if r.status == "failed"]
        ok = [r for r in rows if r.status == "ok"]
        assert len(failed) == 1
        assert failed[0].replication == 1
        assert ok  # the other replication still produced rows


class TestBaselineCompare:
    def test_methods_present_and_checkpoint_zero_equal(self):
        spec = tiny_spec(checkpoints=(0, 1))
        rows = hn.run_baseline_compare(spec)
        data = [r for r in rows if isinstance(r.replication, int)]
        methods = {r.method for r in data}
        assert methods == {"tree", "baseline"}
        for rep in range(spec.replications):
            at_zero = {r.method: r for r in data
                       if r.replication == rep and r.split_count == 0}
            assert at_zero["tree"].mc == at_zero["baseline"].mc
            assert at_zero["tree"].delta_mc == at_zero["baseline"].delta_mc == 0.0

    def test_identical_member_sets_identical_scores(self, rng):
        # when the L1 neighborhood happens to be the full root, scores match
        spec = tiny_spec(checkpoints=(0,), max_splits=0)
        rows = hn.run_baseline_compare(spec)
        data = [r for r in rows if isinstance(r.replication, int)]
        by_rep = {}
        for r in data:
            by_rep.setdefault(r.replication, {})[r.method] = r
        for pair in by_rep.values():
            assert pair["tree"].nll == pair["baseline"].nll


class TestMisspecStudy:
    def test_cells_complete(self, misspec_rows):
        data = [r for r in misspec_rows if isinstance(r.replication, int)]
        cells = {(r.kernel, r.estimator) for r in data}
        assert cells == {("correct", "eq4_full"), ("correct", "eq5_diag"),
                         ("misspecified", "eq4_full"), ("misspecified", "eq5_diag")}
        assert len(data) == 2 * 4

    def test_aggregates_appended(self, misspec_rows):
        means = [r for r in misspec_rows if r.replication == "mean"]
        sds = [r for r in misspec_rows if r.replication == "sd"]
        assert len(means) == 4 and len(sds) == 4
        assert all(np.isfinite(r.nll) for r in means)

    def test_single_rep_sd_is_marked_na(self):
        rows = hn.run_misspec_study(d=2, reps=1, seed=0, n_train=10, g=4, n_mc=40)
        sds = [r for r in rows if r.replication == "sd"]
        assert sds and all(r.nll is None for r in sds)

    def test_csv_emission(self, tmp_path):
        hn.run_misspec_study(d=2, reps=1, seed=0, n_train=10, g=4, n_mc=40,
                             out_dir=str(tmp_path))
        lines = (tmp_path / "misspec.csv").read_text().splitlines()
        assert lines[0] == ",".join(hn.MISSPEC_COLUMNS)
        assert (tmp_path / "manifest.json").exists()


class TestTableObjectiveStudy:
    def test_lcbench_style_table_study(self, tmp_path):
        from importlib import resources

        with resources.as_file(resources.files("bopdp") / "data" / "lcbench_space.json") as p:
            space = sp.load_space(p)
            space_path = str(p)
            configs = sp.sample_uniform(space, 40, seed=0)
            rng = np.random.default_rng(1)
            header = ",".join(space.names) + ",cost"
            lines = [header]
            for c in configs:
                vals = [str(c[n]) for n in space.names]
                lines.append(",".join(vals) + f",{rng.uniform():.6f}")
            csv_path = tmp_path / "costs.csv"
            csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

            spec = hn.ExperimentSpec(
                objective={"kind": "table", "path": str(csv_path),
                           "space": space_path, "k": 3},
                taus=(1.0,), budget=14, init_design_size=8, replications=1,
                max_splits=1, g=5, n_mc=50, base_seed=0, min_node_size=5,
            )
            rows = hn.run_synthetic_study(spec)
        data = [r for r in rows if isinstance(r.replication, int)]
        assert data and all(r.status == "ok" for r in data)
