import json

import pytest

from reclab import cli
from reclab.errors import CoverageViolation, NonFiniteLoss


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One simulate + experiment round shared by the downstream tests."""
    root = tmp_path_factory.mktemp("pipeline")
    sim = root / "sim"
    assert run("simulate", "--out-dir", sim, "--days", 14,
               "--users", 30, "--stories", 20, "--seed", 1) == 0

    exp = root / "exp"
    cfg = root / "exp_config.json"
    cfg.write_text(json.dumps({
        "world": {"n_users": 30, "n_stories": 20},
        "experiment": {"pre_days": 14},
        "seed": 2,
    }))
    assert run("experiment", "--config", cfg, "--out-dir", exp,
               "--days", 7) == 0
    return root


class TestSimulate:
    def test_outputs_and_manifest(self, pipeline):
        sim = pipeline / "sim"
        for name in ("editorial.log", "users.tsv", "stories.tsv",
                     "world_config.json", "position_effects.txt",
                     "manifest.json"):
            assert (sim / name).exists(), name
        manifest = json.loads((sim / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 1
        assert len(manifest["config_sha256"]) == 64
        assert str(sim / "editorial.log") in manifest["outputs"]

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run("simulate", "--out-dir", d, "--days", 7,
                       "--users", 12, "--stories", 16, "--seed", 9) == 0
        assert (a / "editorial.log").read_bytes() == \
            (b / "editorial.log").read_bytes()

    def test_bad_world_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"world": {"n_users": -5}}')
        assert run("simulate", "--config", cfg,
                   "--out-dir", tmp_path / "out") == cli.EXIT_CONFIG


class TestIngest:
    def test_round_trip_counts(self, pipeline, tmp_path, capsys):
        sim = pipeline / "sim"
        assert run("ingest", "--log", sim / "editorial.log",
                   "--users", sim / "users.tsv",
                   "--stories", sim / "stories.tsv",
                   "--out-dir", tmp_path, "--trim", "session10") == 0
        out = capsys.readouterr().out
        assert "records:" in out and "dropped_users:" in out
        assert (tmp_path / "ingested.log").exists()

    def test_malformed_log_exit_code(self, tmp_path):
        bad = tmp_path / "bad.log"
        bad.write_text("user_id,story_id,day,session_id,section,"
                       "slate_rank,outcome\n1,2,not_a_day,0,other,-1,"
                       "viewed\n")
        assert run("ingest", "--log", bad,
                   "--out-dir", tmp_path / "out") == cli.EXIT_PARSE

    def test_data_root_env(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.DATA_ROOT_ENV, str(pipeline))
        assert run("ingest", "--log", "sim/editorial.log",
                   "--out-dir", "ing_rel") == 0
        assert (pipeline / "ing_rel" / "ingested.log").exists()


class TestTrain:
    def test_compare_writes_models_and_report(self, pipeline, tmp_path,
                                              capsys):
        sim = pipeline / "sim"
        assert run("train", "--log", sim / "editorial.log",
                   "--users", sim / "users.tsv",
                   "--stories", sim / "stories.tsv",
                   "--out-dir", tmp_path, "--compare", "mean,twfe",
                   "--grid", "l2=1e-4", "--epochs", 3, "--seed", 0) == 0
        assert (tmp_path / "model_mean.json").exists()
        assert (tmp_path / "model_twfe.json").exists()
        report = (tmp_path / "tuning_report.tsv").read_text().splitlines()
        assert report[0] == "model\tk\tl2\tval_mse\ttest_mse"
        assert len(report) == 3
        out = capsys.readouterr().out
        assert "test_mse=" in out

    def test_bad_config_file(self, pipeline, tmp_path):
        sim = pipeline / "sim"
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        assert run("train", "--config", cfg,
                   "--log", sim / "editorial.log",
                   "--out-dir", tmp_path) == cli.EXIT_CONFIG

    def test_divergence_exit_code(self, pipeline, tmp_path, monkeypatch):
        sim = pipeline / "sim"

        def boom(*a, **kw):
            raise NonFiniteLoss("synthetic divergence")

        monkeypatch.setattr(cli.models, "train", boom)
        assert run("train", "--log", sim / "editorial.log",
                   "--out-dir", tmp_path / "out",
                   "--epochs", 1) == cli.EXIT_DIVERGENCE


class TestExperiment:
    def test_outputs(self, pipeline):
        exp = pipeline / "exp"
        for name in ("pre.log", "experiment.log", "assignment.tsv",
                     "users.tsv", "stories.tsv", "world_config.json",
                     "manifest.json"):
            assert (exp / name).exists(), name
        lines = (exp / "assignment.tsv").read_text().splitlines()
        assert lines[0] == "user_id\tarm\tlaunched"
        assert len(lines) == 31
        arms = [int(l.split("\t")[1]) for l in lines[1:]]
        assert set(arms) == {0, 1}

    def test_null_mode(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "world": {"n_users": 16, "n_stories": 16},
            "experiment": {"pre_days": 0},
        }))
        assert run("experiment", "--config", cfg, "--null",
                   "--out-dir", tmp_path / "out", "--days", 7,
                   "--seed", 3) == 0


class TestAnalyze:
    def test_all_tables(self, pipeline, tmp_path):
        exp = pipeline / "exp"
        assert run("analyze", "--data-dir", exp, "--out-dir", tmp_path,
                   "--buckets", 3) == 0
        for name in ("ate_table.tsv", "wilcoxon.txt", "subgroup_table.tsv",
                     "aipw_score_regression.tsv", "balance_table.tsv",
                     "rank_means.tsv", "session_lengths.tsv",
                     "engagement_buckets.tsv", "niche_exposure.tsv",
                     "manifest.json"):
            assert (tmp_path / name).exists(), name
        ate = (tmp_path / "ate_table.tsv").read_text().splitlines()
        # 6 outcomes x 3 estimators plus the header
        assert len(ate) == 19
        estimators = {line.split("\t")[0] for line in ate[1:]}
        assert estimators == {"DiffInMeans", "RegressionAdjusted", "AIPW"}

    def test_table_subset(self, pipeline, tmp_path):
        exp = pipeline / "exp"
        assert run("analyze", "--data-dir", exp, "--out-dir", tmp_path,
                   "--tables", "ate") == 0
        assert (tmp_path / "ate_table.tsv").exists()
        assert not (tmp_path / "balance_table.tsv").exists()

    def test_degenerate_arm_exit_code(self, pipeline, tmp_path):
        exp = pipeline / "exp"
        broken = tmp_path / "broken"
        broken.mkdir()
        for name in ("pre.log", "experiment.log", "users.tsv",
                     "stories.tsv"):
            (broken / name).write_bytes((exp / name).read_bytes())
        lines = (exp / "assignment.tsv").read_text().splitlines()
        # keep only two users: one per arm -> too small to estimate
        by_arm = {}
        for line in lines[1:]:
            uid, arm, lau = line.split("\t")
            if lau == "1":
                by_arm.setdefault(arm, line)
        (broken / "assignment.tsv").write_text(
            lines[0] + "\n" + "\n".join(sorted(by_arm.values())) + "\n")
        assert run("analyze", "--data-dir", broken,
                   "--out-dir", tmp_path / "out") == cli.EXIT_DEGENERATE


class TestEvaluatePolicy:
    def test_dr_report_and_rct_check(self, pipeline, tmp_path):
        exp = pipeline / "exp"
        assert run("evaluate-policy", "--data-dir", exp,
                   "--out-dir", tmp_path, "--policies", "edit",
                   "--bootstrap", 25, "--seed", 4,
                   "--check-against-rct", exp) == 0
        dr = (tmp_path / "dr_values.tsv").read_text().splitlines()
        assert dr[0].startswith("#")
        assert dr[2].startswith("editorial\t")
        comps = (tmp_path / "policy_comparisons.tsv").read_text()
        assert "policy_a\tpolicy_b" in comps
        check = (tmp_path / "rct_check.tsv").read_text().splitlines()
        assert check[1].startswith("editorial\t")

    def test_missing_world_config(self, pipeline, tmp_path):
        exp = pipeline / "exp"
        bare = tmp_path / "bare"
        bare.mkdir()
        for name in ("pre.log", "users.tsv", "stories.tsv"):
            (bare / name).write_bytes((exp / name).read_bytes())
        assert run("evaluate-policy", "--data-dir", bare,
                   "--out-dir", tmp_path / "out") == cli.EXIT_CONFIG

    def test_coverage_violation_exit_code(self, pipeline, tmp_path,
                                          monkeypatch):
        exp = pipeline / "exp"

        def boom(*a, **kw):
            raise CoverageViolation("synthetic floor violation")

        monkeypatch.setattr(cli.offpolicy, "dr_value", boom)
        assert run("evaluate-policy", "--data-dir", exp,
                   "--out-dir", tmp_path, "--policies", "edit",
                   "--bootstrap", 10) == cli.EXIT_COVERAGE
