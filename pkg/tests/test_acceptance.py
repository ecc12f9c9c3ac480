"""Acceptance criteria at their stated sample sizes and tolerances.

Each test prints one PASS/FAIL line for its criterion (visible with ``-s`` or
in the ``-v`` log, since printing bypasses capture) and fails if any gating
check in it fails. The whole module takes tens of minutes on one core.
"""
import math

import numpy as np
import pytest
from scipy.special import roots_genlaguerre

from weakfpp import cli, suites
from weakfpp.limits import Disorder, malthusian, stable_age_density
from weakfpp.suites import FULL

SEED = cli.VERIFY_SEED
JOBS = 1

pytestmark = pytest.mark.slow


def _verdict(number, title, checks, capsys):
    gating = [c for c in checks if not c.informational]
    ok = bool(gating) and all(c.passed for c in gating)
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}")
        for c in checks:
            print("    " + c.line())
    failed = [c.name for c in gating if not c.passed]
    assert ok, f"criterion {number} failed: {failed}"


@pytest.fixture(scope="module")
def grid():
    # shared by criteria 5 to 8
    return suites.run_fpp_grid(FULL.grid_s, FULL.grid_n, FULL.grid_m, SEED, JOBS)


def test_criterion_01_constants(capsys):
    checks = suites.check_constants()
    # the stable-age law to 1e-8 again, by a generalized Gauss-Laguerre rule
    for s in (0.5, 1.0, 2.0):
        d = Disorder(s)
        lc = malthusian(d)
        x, wt = roots_genlaguerre(60, 1.0 / s - 1.0)
        t = x / lc.lam
        f = stable_age_density(d, t) / lc.lam / (x ** (1.0 / s - 1.0) * np.exp(-x))
        m0 = float(np.sum(wt * f))
        m1 = float(np.sum(wt * f * t))
        sd = math.sqrt(float(np.sum(wt * f * t * t)) - m1 * m1)
        err = max(abs(m0 - 1), abs(m1 - lc.beta1), abs(sd - lc.beta2))
        checks.append(suites.Check(f"stable-age moments by Laguerre rule at s={s:g}", err,
                                   "max error < 1e-8", err < 1e-8))
    _verdict(1, "analytic constants", checks, capsys)


def test_criterion_02_quadrature(capsys):
    _verdict(2, "quadrature identity", suites.check_quadrature(), capsys)


def test_criterion_03_oracle(capsys):
    _verdict(3, "oracle equivalence", suites.check_oracle(FULL, SEED, JOBS), capsys)


def test_criterion_04_two_vertex_graph(capsys):
    _verdict(4, "exact n=2 case", suites.check_two_vertex_exact(FULL, SEED, JOBS), capsys)


def test_criterion_05_hopcount_slopes(grid, capsys):
    _verdict(5, "hopcount CLT slopes", suites.check_hopcount_slopes(grid), capsys)


def test_criterion_06_hopcount_normality(grid, capsys):
    _verdict(6, "hopcount normality", suites.check_hopcount_normality(grid), capsys)


def test_criterion_07_weight_limit(grid, capsys):
    _verdict(7, "weight limit", suites.check_weight_limit(grid, FULL, SEED, JOBS), capsys)


def test_criterion_08_independence(grid, capsys):
    _verdict(8, "hopcount and weight independence", suites.check_independence(grid), capsys)


def test_criterion_09_martingale(capsys):
    _verdict(9, "martingale limit", suites.check_martingale(FULL, SEED, JOBS), capsys)


def test_criterion_10_phi(capsys):
    _verdict(10, "phi fixed point", suites.check_phi(FULL, SEED, JOBS), capsys)


def test_criterion_11_two_vertex_limits(capsys):
    _verdict(11, "two-vertex limits", suites.check_two_vertex(FULL, SEED, JOBS), capsys)


def test_criterion_12_recursion(capsys):
    _verdict(12, "W recursion fixed point", suites.check_recursion(FULL, SEED), capsys)


def test_criterion_13_properties(tmp_path, capsys):
    checks = suites.check_determinism(SEED, jobs=8)
    base = ["fpp", "--s", "1", "--n-grid", "100,1000", "--replicates", "50", "--seed", str(SEED)]
    codes = [cli.main(base + ["--jobs", str(j), "--out", str(tmp_path / f"j{j}")]) for j in (1, 8)]
    same = (tmp_path / "j1" / "fpp.csv").read_bytes() == (tmp_path / "j8" / "fpp.csv").read_bytes()
    checks.append(suites.Check("cli fpp: jobs=1 vs jobs=8 output files", None, "byte-identical",
                               same and codes == [0, 0]))
    text = (tmp_path / "j1" / "config.ini").read_text()
    again = cli.RunConfig.from_ini(text).to_ini()
    checks.append(suites.Check("config round trip", None, "serialize-parse-serialize idempotent",
                               again == text))
    _verdict(13, "determinism and property checks", checks, capsys)
