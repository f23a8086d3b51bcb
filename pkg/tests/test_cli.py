import json

import pytest

from abide import cli
from abide.data import read_csv

HAND_CSV = """unit_id,treatment,responded,outcome,x
a,1,1,1,0.1
b,1,1,0,0.4
c,1,0,,0.9
d,0,1,0,0.3
e,0,1,0,0.2
f,0,0,,0.7
"""


@pytest.fixture
def hand_csv(tmp_path):
    p = tmp_path / "hand.csv"
    p.write_text(HAND_CSV)
    return p


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestEstimate:
    def test_naive_hand_mean(self, capsys, hand_csv, tmp_path):
        code, out, _ = run(capsys, "estimate", "--data", hand_csv, "--estimand", "ate",
                           "--estimators", "naive", "--out", tmp_path / "o")
        assert code == 0
        assert "0.5" in out.splitlines()[1]
        data = json.loads((tmp_path / "o" / "estimates.json").read_text())
        assert data["results"][0]["estimate"] == pytest.approx(0.5)

    def test_line_number_in_error(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        lines = HAND_CSV.splitlines()
        lines[3] = "c,1,0,1,0.9"
        p.write_text("\n".join(lines) + "\n")
        code, _, err = run(capsys, "estimate", "--data", p, "--out", tmp_path)
        assert code == cli.EXIT_VALIDATION
        assert "line 4" in err

    def test_missing_file_is_io_failure(self, capsys, tmp_path):
        code, _, err = run(capsys, "estimate", "--data", tmp_path / "nope.csv")
        assert code == cli.EXIT_IO

    def test_all_estimators_failing_is_numerical(self, capsys, tmp_path):
        # treated respondents sit outside the control range: EB is infeasible
        p = tmp_path / "far.csv"
        p.write_text("unit_id,treatment,responded,outcome,x\n"
                     "a,1,1,1,5\nb,1,1,0,6\nc,0,1,1,0\nd,0,1,0,1\n")
        code, out, _ = run(capsys, "estimate", "--data", p, "--estimand", "atetr",
                           "--estimators", "eb", "--out", tmp_path)
        assert code == cli.EXIT_NUMERICAL
        assert "Infeasible" in out

    def test_partial_failure_keeps_other_rows(self, capsys, tmp_path):
        p = tmp_path / "far.csv"
        p.write_text("unit_id,treatment,responded,outcome,x\n"
                     "a,1,1,1,5\nb,1,1,0,6\nc,0,1,1,0\nd,0,1,0,1\n")
        code, out, _ = run(capsys, "estimate", "--data", p, "--estimand", "atetr",
                           "--estimators", "eb,naive", "--out", tmp_path)
        assert code == 0
        assert "Infeasible" in out and "Naive comparison" in out

    def test_unknown_estimator(self, capsys, hand_csv, tmp_path):
        code, _, _ = run(capsys, "estimate", "--data", hand_csv, "--estimators", "magic",
                         "--out", tmp_path)
        assert code == cli.EXIT_VALIDATION

    def test_bad_flag_is_validation(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["estimate", "--estimand", "att"])
        assert exc.value.code == cli.EXIT_VALIDATION

    def test_simulated_or_ate_near_truth(self, capsys, tmp_path):
        assert run(capsys, "simulate", "--n", 100000, "--seed", 3, "--out", tmp_path)[0] == 0
        code, _, _ = run(capsys, "estimate", "--data", tmp_path / "dataset.csv", "--estimand",
                         "ate", "--estimators", "or", "--out", tmp_path / "est")
        assert code == 0
        res = json.loads((tmp_path / "est" / "estimates.json").read_text())["results"][0]
        assert abs(res["estimate"] - 0.0) < 0.02


class TestSimulate:
    def test_seed_reproducible(self, capsys, tmp_path):
        for d in ("a", "b"):
            assert run(capsys, "simulate", "--n", 500, "--seed", 7, "--out", tmp_path / d)[0] == 0
        assert (tmp_path / "a" / "dataset.csv").read_bytes() == \
            (tmp_path / "b" / "dataset.csv").read_bytes()
        meta = json.loads((tmp_path / "a" / "dataset.meta.json").read_text())
        assert meta["dgp"]["seed"] == 7 and "created" in meta

    def test_round_trips_through_estimate(self, capsys, tmp_path):
        run(capsys, "simulate", "--n", 300, "--out", tmp_path)
        ds = read_csv(tmp_path / "dataset.csv")
        assert ds.n == 300
        assert run(capsys, "estimate", "--data", tmp_path / "dataset.csv",
                   "--out", tmp_path / "e")[0] == 0

    def test_transformed_columns(self, capsys, tmp_path):
        run(capsys, "simulate", "--n", 2000, "--scenario", "transformed", "--out", tmp_path)
        ds = read_csv(tmp_path / "dataset.csv")
        assert ds.schema.names == ("z1", "z2")
        assert (ds.covariates[:, 0] > 1).all()

    def test_env_seed_fallback(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("ABIDE_SEED", "7")
        run(capsys, "simulate", "--n", 200, "--out", tmp_path / "env")
        monkeypatch.delenv("ABIDE_SEED")
        run(capsys, "simulate", "--n", 200, "--seed", 7, "--out", tmp_path / "flag")
        assert (tmp_path / "env" / "dataset.csv").read_bytes() == \
            (tmp_path / "flag" / "dataset.csv").read_bytes()

    def test_precedence(self, capsys, tmp_path, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n": 150, "seed": 2}))
        monkeypatch.setenv("ABIDE_SEED", "9")
        run(capsys, "simulate", "--config", cfg, "--n", 120, "--out", tmp_path / "o")
        meta = json.loads((tmp_path / "o" / "dataset.meta.json").read_text())
        assert meta["n"] == 120          # flag beats config
        assert meta["dgp"]["seed"] == 2  # config beats environment

    def test_bad_config(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(capsys, "simulate", "--config", cfg)[0] == cli.EXIT_VALIDATION

    def test_unwritable_output_is_io_failure(self, capsys, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run(capsys, "simulate", "--n", 500, "--out", blocker / "sub")[0] == cli.EXIT_IO

    @pytest.mark.slow
    def test_million_unit_response_rates(self, capsys, tmp_path):
        run(capsys, "simulate", "--n", 1_000_000, "--out", tmp_path)
        meta = json.loads((tmp_path / "dataset.meta.json").read_text())
        assert meta["resp_rate_treated"] == pytest.approx(0.15, abs=0.005)
        assert meta["resp_rate_control"] == pytest.approx(0.09, abs=0.005)


class TestBenchmark:
    def test_naive_only_single_row(self, capsys, tmp_path):
        code, out, _ = run(capsys, "benchmark", "--replicates", 3, "--n", 1000, "--estimand",
                           "ate", "--estimators", "naive", "--out", tmp_path)
        assert code == 0
        table = out.split("\n\n")[0].splitlines()
        assert table[1].startswith("Estimator") and len(table) == 3
        assert (tmp_path / "table_ate.csv").exists()

    def test_atetr_six_rows(self, capsys, tmp_path):
        code, out, _ = run(capsys, "benchmark", "--replicates", 4, "--n", 2000, "--estimand",
                           "atetr", "--out", tmp_path)
        assert code == 0
        table = out.split("\n\n")[0].splitlines()
        assert [line.split()[0] for line in table[2:]] == \
            ["AB", "CC", "EB", "IPW", "Naive", "OR"]
        assert "Against published values" in out

    def test_rerun_identical_files(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "benchmark", "--replicates", 3, "--n", 1000, "--out", tmp_path / d)
        for name in ("report.json", "table_ate.csv", "raw_atetr.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_clip_and_preset_echoed(self, capsys, tmp_path):
        run(capsys, "benchmark", "--replicates", 2, "--n", 1000, "--estimand", "ate",
            "--preset", "consistent", "--clip", "0.05", "--ab-rounds", "7", "--out", tmp_path)
        settings = json.loads((tmp_path / "report.json").read_text())["config"]["settings"]
        assert settings["preset"] == "consistent" and settings["clip"] == 0.05
        assert settings["ab"]["max_rounds"] == 7

    def test_bad_clip(self, capsys, tmp_path):
        assert run(capsys, "benchmark", "--clip", "0.7", "--out", tmp_path)[0] == \
            cli.EXIT_VALIDATION


def test_truths(capsys):
    code, out, _ = run(capsys, "truths")
    assert code == 0
    values = dict(line.split() for line in out.strip().splitlines())
    assert float(values["resp_rate_treated"]) == pytest.approx(0.15, abs=0.005)
    assert float(values["ate"]) == 0.0
