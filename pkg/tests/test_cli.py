import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from weakfpp import cli, fpp
from weakfpp.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, RunConfig, main
from weakfpp.sampling import HazardError
from weakfpp.stats import REPORT_KEYS


def _read(path):
    with open(path) as fh:
        return fh.read()


def _json(path):
    with open(path) as fh:
        return json.load(fh)


# -- constants ---------------------------------------------------------------
def test_constants_s1(capsys):
    assert main(["constants", "--s", "1"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[:3] == ["lambda=1.0", "beta1=1.0", "beta2=1.0"]
    assert out[3] == "t,density"


def test_constants_s2(tmp_path, capsys):
    assert main(["constants", "--s", "2", "--out", str(tmp_path)]) == EXIT_OK
    lam = float(capsys.readouterr().out.splitlines()[0].split("=")[1])
    assert lam == pytest.approx(0.7853981634, abs=1e-10)
    rows = list(csv.reader(open(tmp_path / "stable_age.csv")))
    assert rows[0] == ["t", "density"] and len(rows) == 101


@pytest.mark.parametrize("argv", [
    ["constants", "--s", "0"],
    ["constants"],
    ["constants", "--s", "abc"],
    ["nonsense"],
    ["fpp", "--s", "1", "--n", "10", "--replicates", "5"],  # no seed
    ["fpp", "--s", "1", "--n", "1", "--seed", "1"],
    ["fpp", "--s", "50", "--n", "10", "--seed", "1"],
    ["limit", "--s", "1"],
    ["limit", "--s", "1", "--xi", "--seed", "1", "--horizon", "100"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_fpp_csv(tmp_path):
    argv = ["limit", "--s", "1", "--seed", "1", "--fpp-csv", str(tmp_path / "missing.csv")]
    assert main(argv) == EXIT_USAGE


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nbogus = 3\n")
    assert main(["fpp", "--config", str(cfg)]) == EXIT_USAGE
    cfg.write_text("[other]\n")
    assert main(["fpp", "--config", str(cfg)]) == EXIT_USAGE


# -- fpp -------------------------------------------------------------------------
def test_fpp_n2_mean_hopcount_is_one(tmp_path):
    argv = ["fpp", "--s", "1", "--n", "2", "--replicates", "10000", "--seed", "5",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    summ = _json(tmp_path / "summary.json")
    assert summ["per_n"][0]["mean_H"] == 1.0
    rows = list(csv.DictReader(open(tmp_path / "fpp.csv")))
    assert len(rows) == 10000 and tuple(rows[0]) == fpp.OUTCOME_COLUMNS


def test_fpp_config_replay_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["fpp", "--s", "0.7", "--n-grid", "20,50", "--replicates", "40", "--seed", "11",
            "--out", str(a)]
    assert main(argv) == EXIT_OK
    assert main(["fpp", "--config", str(a / "config.ini"), "--out", str(b)]) == EXIT_OK
    assert _read(a / "fpp.csv") == _read(b / "fpp.csv")
    assert _json(a / "summary.json")["per_n"] == _json(b / "summary.json")["per_n"]


def test_fpp_parallelism_invariance(tmp_path):
    base = ["fpp", "--s", "1.3", "--n", "200", "--replicates", "64", "--seed", "3"]
    assert main(base + ["--jobs", "1", "--out", str(tmp_path / "j1")]) == EXIT_OK
    assert main(base + ["--jobs", "8", "--out", str(tmp_path / "j8")]) == EXIT_OK
    assert _read(tmp_path / "j1" / "fpp.csv") == _read(tmp_path / "j8" / "fpp.csv")


def test_fpp_grid_summary_has_slopes(tmp_path):
    argv = ["fpp", "--s", "1", "--n-grid", "100,300,1000", "--replicates", "200", "--seed", "2",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    summ = _json(tmp_path / "summary.json")
    assert set(summ) >= {"slope_mean_H", "slope_var_H", "per_n", "config"}
    q = summ["per_n"][-1]
    assert {"mean_H", "var_H", "weight_mean", "weight_var", "ks_H_normal", "corr_H_weight"} <= set(q)
    assert 0.5 < summ["slope_mean_H"]["slope"] < 1.5


def test_fpp_numerical_failure_flushes_partial_output(tmp_path, monkeypatch):
    real = fpp.run_two_source
    calls = {"k": 0}

    def flaky(*args, **kw):
        calls["k"] += 1
        if calls["k"] > 5:
            raise HazardError("injected")
        return real(*args, **kw)

    monkeypatch.setattr(fpp, "run_two_source", flaky)
    argv = ["fpp", "--s", "1", "--n", "30", "--replicates", "20", "--seed", "1",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_NUMERIC
    rows = list(csv.reader(open(tmp_path / "fpp.csv")))
    assert len(rows) == 1 + 5
    assert "injected" in _json(tmp_path / "summary.json")["error"]


# -- config -----------------------------------------------------------------
@given(
    s=st.floats(min_value=0.05, max_value=20.0),
    n=st.one_of(st.none(), st.integers(min_value=2, max_value=10**6)),
    grid=st.lists(st.integers(min_value=2, max_value=10**6), max_size=4).map(tuple),
    reps=st.integers(min_value=1, max_value=10**6),
    seed=st.integers(min_value=0, max_value=2**63),
    horizon=st.floats(min_value=3e3, max_value=1e6),
    jobs=st.integers(min_value=1, max_value=64),
    flags=st.tuples(st.booleans(), st.booleans()),
    out=st.text(alphabet="abcxyz/_-.0123456789", max_size=20),
)
def test_config_round_trip(s, n, grid, reps, seed, horizon, jobs, flags, out):
    cfg = RunConfig(command="fpp", s=s, n=n, n_grid=grid, replicates=reps, seed=seed,
                    horizon=horizon, jobs=jobs, phi=flags[0], xi=flags[1], out=out)
    text = cfg.to_ini()
    back = RunConfig.from_ini(text)
    assert back.to_ini() == text
    assert back.s == s and back.seed == seed and back.n_grid == grid and back.horizon == horizon


# -- other commands ----------------------------------------------------------
def test_single_command(tmp_path):
    argv = ["single", "--s", "1", "--n", "50", "--replicates", "30", "--seed", "4",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "single.csv")))
    assert len(rows) == 30 and all(int(r["H_n"]) >= 1 for r in rows)


def test_ctbp_command(tmp_path):
    argv = ["ctbp", "--s", "1", "--replicates", "200", "--seed", "4", "--horizon", "3000",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    summ = _json(tmp_path / "summary.json")
    assert summ["target_mean"] == 1.0
    assert abs(summ["W_t"]["mean"] - 1.0) < 4 * summ["W_t"]["std_error"]
    assert len(list(csv.reader(open(tmp_path / "w.csv")))) == 201


def test_limit_phi(tmp_path):
    assert main(["limit", "--s", "1", "--phi", "--out", str(tmp_path)]) == EXIT_OK
    assert _json(tmp_path / "summary.json")["phi"]["sup_error_exponential"] < 1e-3
    rows = list(csv.reader(open(tmp_path / "phi.csv")))
    assert rows[0] == ["u", "phi"]


def test_limit_xi_rows(tmp_path):
    argv = ["limit", "--s", "1", "--xi", "--M", "1000", "--seed", "9", "--horizon", "3000",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "xi.csv")))
    assert len(rows) == 1000
    assert np.isfinite(_json(tmp_path / "summary.json")["xi"]["mean"])


def test_limit_cross_ks_against_fpp_csv(tmp_path):
    f = tmp_path / "f"
    assert main(["fpp", "--s", "1", "--n", "5000", "--replicates", "600", "--seed", "6",
                 "--out", str(f)]) == EXIT_OK
    argv = ["limit", "--s", "1", "--M", "600", "--seed", "7", "--horizon", "3000",
            "--fpp-csv", str(f / "fpp.csv"), "--out", str(tmp_path / "l")]
    assert main(argv) == EXIT_OK
    ks = _json(tmp_path / "l" / "summary.json")["cross_ks"]
    assert ks["fpp_rows"] == 600 and ks["D"] < 0.1


def test_oracle_compare(tmp_path):
    argv = ["oracle-compare", "--s", "2", "--n", "8", "--replicates", "800", "--seed", "1",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    recs = _json(tmp_path / "oracle.json")
    assert len(recs) == 2 and all(r["pass"] for r in recs)
    assert main(["oracle-compare", "--s", "1", "--n", "5000", "--seed", "1",
                 "--replicates", "10"]) == EXIT_USAGE


# -- verify ------------------------------------------------------------------
def _check_schema(report):
    assert set(report) == {"suite", "seed", "lam_factor", "checks", "pass"}
    for rec in report["checks"]:
        assert tuple(sorted(rec)) == tuple(sorted(REPORT_KEYS))
        assert isinstance(rec["test_name"], str) and isinstance(rec["pass"], bool)
        assert rec["statistic"] is None or isinstance(rec["statistic"], (int, float))
        assert rec["p_value"] is None or 0.0 <= rec["p_value"] <= 1.0
        assert {"threshold", "informational"} <= set(rec["config"])


def test_verify_quick_passes(tmp_path, capsys):
    assert main(["verify", "quick", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
    report = _json(tmp_path / "report.json")
    _check_schema(report)
    assert report["pass"] is True and report["seed"] == cli.VERIFY_SEED


def test_verify_quick_detects_perturbed_lambda(tmp_path, capsys):
    rc = main(["verify", "quick", "--perturb-lambda", "1.05", "--out", str(tmp_path)])
    assert rc == EXIT_VERIFY
    report = _json(tmp_path / "report.json")
    _check_schema(report)
    failed = {r["test_name"] for r in report["checks"]
              if not r["pass"] and not r["config"]["informational"]}
    assert any(name.startswith("constants: lambda") for name in failed)
    assert any(name.startswith("quadrature") for name in failed)
    assert "martingale: W ~ Exp(1) at s=1" in failed
