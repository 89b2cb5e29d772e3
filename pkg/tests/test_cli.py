import json

import pytest

from bopdp import cli


@pytest.fixture(scope="module")
def archive_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "run.json"
    code = cli.main([
        "optimize", "--synthetic", "2", "--tau", "1", "--budget", "16",
        "--init", "8", "--seed", "3", "--out", str(path),
    ])
    assert code == 0
    return path


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert cli.main(["nonsense"]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_flag_is_usage_error(self, archive_path):
        assert cli.main(["pdp", "--archive", str(archive_path), "--wat"]) == 1

    def test_missing_required_flag(self):
        assert cli.main(["optimize", "--synthetic", "2"]) == 1

    def test_runtime_failure_is_two(self, tmp_path):
        missing = tmp_path / "does_not_exist.json"
        assert cli.main(["pdp", "--archive", str(missing), "--out",
                         str(tmp_path / "x.csv")]) == 2

    def test_table_requires_space(self, tmp_path):
        assert cli.main(["optimize", "--table", "x.csv", "--budget", "10",
                         "--out", str(tmp_path / "a.json")]) == 1


class TestPdpCommand:
    def test_global_pdp_csv(self, archive_path, tmp_path):
        out = tmp_path / "pdp.csv"
        code = cli.main(["pdp", "--archive", str(archive_path), "--param", "0",
                         "--splits", "0", "--grid", "8", "--n-mc", "100",
                         "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("grid_value,mean,variance")
        assert len(lines) == 9

    def test_subregion_pdp(self, archive_path, tmp_path):
        out = tmp_path / "pdp_sub.csv"
        code = cli.main(["pdp", "--archive", str(archive_path), "--param", "x1",
                         "--splits", "2", "--grid", "8", "--n-mc", "100",
                         "--min-node-size", "5", "--out", str(out)])
        assert code == 0
        assert out.exists()


class TestPartitionCommand:
    def test_tree_and_leaf_artifacts(self, archive_path, tmp_path):
        out = tmp_path / "tree"
        code = cli.main(["partition", "--archive", str(archive_path), "--param", "0",
                         "--splits", "2", "--grid", "8", "--n-mc", "100",
                         "--min-node-size", "5", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "tree.json").read_text())
        assert doc["n_splits"] <= 2
        assert (out / "leaves.csv").exists()
        leaf_files = list(out.glob("leaf_*.csv"))
        assert leaf_files


class TestScoreCommand:
    def test_score_json(self, archive_path, tmp_path, capsys):
        code = cli.main(["score", "--archive", str(archive_path), "--param", "0",
                         "--splits", "1", "--grid", "6", "--n-mc", "80",
                         "--min-node-size", "5", "--true-mc", "5000"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) == {"global", "subregion", "improvement"}
        assert doc["global"]["mc"] > 0

    def test_archive_without_objective_fails_cleanly(self, archive_path, tmp_path):
        doc = json.loads(archive_path.read_text())
        doc["objective"] = None
        stripped = tmp_path / "stripped.json"
        stripped.write_text(json.dumps(doc))
        code = cli.main(["score", "--archive", str(stripped), "--n-mc", "50",
                         "--grid", "5"])
        assert code == 2


class TestBenchCommand:
    def test_bench_synthetic_runs_config(self, tmp_path, capsys):
        config = {
            "objective": {"kind": "styblinski_tang", "d": 2},
            "taus": [1.0], "budget": 14, "init_design_size": 8,
            "replications": 1, "max_splits": 1, "g": 5, "n_mc": 60,
            "base_seed": 3, "min_node_size": 5, "out_dir": str(tmp_path / "out"),
        }
        cfg_path = tmp_path / "spec.json"
        cfg_path.write_text(json.dumps(config))
        assert cli.main(["bench", "synthetic", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "out" / "results.csv").exists()

    def test_bench_misspec(self, tmp_path):
        code = cli.main(["bench", "misspec", "--d", "2", "--reps", "1",
                         "--seed", "0", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "misspec.csv").exists()

    def test_bench_requires_subcommand(self):
        assert cli.main(["bench"]) == 1
