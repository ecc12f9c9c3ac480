"""Canned verification checks: Monte Carlo surrogates of the limit theorems.

Every check returns :class:`Check` records. Sample sizes come from a
:class:`Sizes` preset (``FULL`` matches the acceptance targets, ``QUICK`` is
a smoke run). ``lam_factor`` multiplies the Malthusian rate wherever a check
consumes it, which lets a deliberately broken constant be fed through the
whole harness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate

from . import ctbp, fpp, limitlaw, stats
from .limits import Disorder, LimitConstants, malthus_identity, malthusian, stable_age_density
from .runner import map_replicates
from .sampling import RngStream, sample_gumbel

__all__ = [
    "Check",
    "Sizes",
    "FULL",
    "QUICK",
    "DOMAIN",
    "constants_for",
    "fpp_replicate",
    "oracle_replicate",
    "fpp_summary",
    "run_fpp_grid",
    "check_constants",
    "check_quadrature",
    "check_oracle",
    "check_two_vertex_exact",
    "check_hopcount_slopes",
    "check_hopcount_normality",
    "check_weight_limit",
    "check_independence",
    "check_martingale",
    "check_phi",
    "check_two_vertex",
    "check_recursion",
    "check_determinism",
    "run_suite",
]

# stream keys appended after the replicate index, one per experiment family
DOMAIN = {"fpp": 1, "oracle": 2, "single": 3, "ctbp": 4, "xi": 5, "laplace": 6,
          "pair": 7, "recursion": 8}


@dataclass
class Check:
    name: str
    statistic: Optional[float]
    threshold: str
    passed: bool
    p_value: Optional[float] = None
    config: dict = field(default_factory=dict)
    informational: bool = False

    def record(self) -> dict:
        cfg = dict(self.config, threshold=self.threshold, informational=self.informational)
        return stats.test_report(self.name, self.statistic, self.p_value, self.passed, cfg)

    def line(self) -> str:
        tag = "PASS" if self.passed else ("INFO" if self.informational else "FAIL")
        stat = "n/a" if self.statistic is None else f"{self.statistic:.6g}"
        p = "" if self.p_value is None else f" p={self.p_value:.4g}"
        return f"{tag}  {self.name}: statistic={stat}{p} (need {self.threshold})"


@dataclass(frozen=True)
class Sizes:
    oracle_n: tuple = (5, 10, 50)
    oracle_s: tuple = (0.5, 1.0, 2.0)
    oracle_m: int = 10_000
    n2_m: int = 100_000
    grid_s: tuple = (0.5, 1.0, 2.0)
    grid_n: tuple = (1_000, 10_000, 100_000)
    grid_m: int = 2000
    xi_m: int = 5000
    xi_growth: float = 1e4
    w_m: int = 2000
    w_growth: float = 5e3
    laplace_m: int = 5000
    pair_s: tuple = (0.5, 1.0, 2.0)
    pair_m: int = 500
    pair_growth: float = 3e3
    recursion_m: int = 5000
    # windowed pair ratios gate the verdict only in the full suite
    windows_gate: bool = True


FULL = Sizes()
QUICK = Sizes(oracle_n=(5, 10), oracle_m=2000, n2_m=20_000, grid_s=(), grid_n=(), grid_m=0,
              xi_m=0, w_m=400, laplace_m=1000, pair_s=(1.0,), pair_m=60, recursion_m=2000,
              windows_gate=False)


def constants_for(d: Disorder, lam_factor: float = 1.0) -> LimitConstants:
    lc = malthusian(d)
    if lam_factor == 1.0:
        return lc
    lam = lc.lam * lam_factor
    return LimitConstants(lam=lam, beta1=1.0 / (d.s * lam), beta2=1.0 / (lam * math.sqrt(d.s)))


# -- replicate workers (module level so they pickle) -----------------------
def fpp_replicate(n: int, s: float, seed: int, method: str, r: int):
    o = fpp.run_two_source(n, Disorder(s), RngStream(seed, r, (DOMAIN["fpp"], n)), method=method)
    o.activation_times = []
    return o


def oracle_replicate(n: int, s: float, seed: int, r: int):
    return fpp.dijkstra_oracle(n, Disorder(s), RngStream(seed, r, (DOMAIN["oracle"], n)))


def w_replicate(s: float, growth: float, second: float, seed: int, domain: int,
                lam_factor: float, r: int):
    d = Disorder(s)
    lc = constants_for(d, lam_factor)
    rng = RngStream(seed, r, (domain,))
    t1, t2 = math.log(growth) / lc.lam, math.log(growth * second) / lc.lam
    snap = ctbp.grow_until(d, t1, rng, method="generation")
    w1 = ctbp.martingale_estimate(snap, lc)
    snap.advance(t2)
    return w1, ctbp.martingale_estimate(snap, lc)


PAIR_WINDOWS = ((None, None), (0.0, 0.0), (1.0, -1.0), (2.0, 2.0))


def pair_replicate(s: float, growth: float, seed: int, lam_factor: float, r: int):
    d = Disorder(s)
    lc = constants_for(d, lam_factor)
    t = math.log(growth) / lc.lam
    a = ctbp.grow_until(d, t, RngStream(seed, r, (DOMAIN["pair"], 1)), method="generation")
    b = ctbp.grow_until(d, t, RngStream(seed, r, (DOMAIN["pair"], 2)), method="generation")
    sums = ctbp.two_vertex_window_sums(a, b, PAIR_WINDOWS, lc)
    w1, w2 = ctbp.martingale_estimate(a, lc), ctbp.martingale_estimate(b, lc)
    full = sums[0]
    return (math.exp(-2.0 * lc.lam * t) * full / (w1 * w2),) + tuple(x / full for x in sums[1:])


# -- FPP aggregation ------------------------------------------------------
def _var_se(x: np.ndarray) -> float:
    m = x.size
    c = x - x.mean()
    m4 = float(np.mean(c**4))
    v = float(np.var(x, ddof=1))
    return math.sqrt(max(m4 - v * v * (m - 3) / (m - 1), 0.0) / m)


def fpp_summary(outcomes: Sequence, d: Disorder, lc: Optional[LimitConstants] = None) -> dict:
    """Hopcount and recentered-weight summary of one ``(n, s)`` batch."""
    lc = lc or malthusian(d)
    n = outcomes[0].n
    h = np.array([o.hopcount for o in outcomes], dtype=float)
    w = stats.recenter_weight(np.array([o.cost_original for o in outcomes]), n, d, lc)
    out = {"n": n, "s": d.s, "replicates": len(outcomes),
           "mean_H": float(h.mean()), "var_H": float(np.var(h, ddof=1)) if h.size > 1 else 0.0,
           "weight_mean": float(np.mean(w)),
           "weight_var": float(np.var(w, ddof=1)) if w.size > 1 else 0.0,
           "weight_third_central": float(np.mean((w - w.mean()) ** 3))}
    if h.size > 1:
        out["se_mean_H"] = math.sqrt(out["var_H"] / h.size)
    if h.size >= 8:
        out["se_var_H"] = _var_se(h)
        if n >= 3:
            z = stats.standardize_hopcount(h, n, d)
            ks = stats.ks_one_sample(z, stats.normal_cdf)
            out["ks_H_normal"] = {"D": ks.statistic, "p": ks.p_value}
            if np.ptp(z) > 0 and np.ptp(w) > 0:
                out["corr_H_weight"] = stats.correlation(z, w)
    return out


def run_fpp_grid(s_values: Sequence[float], n_values: Sequence[int], m: int, seed: int,
                 jobs: int = 1, method: str = "stream") -> Dict[tuple, list]:
    data = {}
    for s in s_values:
        for n in n_values:
            data[(float(s), int(n))] = map_replicates(partial(fpp_replicate, n, s, seed, method),
                                                      m, jobs)
    return data


# -- checks ---------------------------------------------------------------
def check_constants(lam_factor: float = 1.0) -> List[Check]:
    out = []
    for s, exact, label in ((1.0, 1.0, "1"), (2.0, math.pi / 4, "pi/4"), (0.5, math.sqrt(2), "sqrt 2")):
        lam = constants_for(Disorder(s), lam_factor).lam
        err = abs(lam - exact)
        out.append(Check(f"constants: lambda({s:g}) = {label}", err, "abs error < 1e-10",
                         err < 1e-10, config={"s": s, "lambda": lam}))
    for s in (0.5, 1.0, 2.0):
        d = Disorder(s)
        lc = constants_for(d, lam_factor)
        f = lambda t, k: t**k * stable_age_density(d, t, lc) if t > 0 else 0.0
        knee = 1.0 / lc.lam
        mom = [sum(integrate.quad(f, a, b, args=(k,), epsabs=1e-13, epsrel=1e-12, limit=400)[0]
                   for a, b in ((0.0, knee), (knee, math.inf))) for k in (0, 1, 2)]
        sd = math.sqrt(mom[2] - mom[1] ** 2)
        err = max(abs(mom[0] - 1), abs(mom[1] - lc.beta1), abs(sd - lc.beta2))
        out.append(Check(f"constants: stable-age law s={s:g} has mass 1, mean beta1, sd beta2",
                         err, "max error < 1e-8", err < 1e-8, config={"s": s}))
    return out


def check_quadrature(lam_factor: float = 1.0) -> List[Check]:
    out = []
    for s in (0.25, 0.5, 1.0, 2.0, 4.0):
        d = Disorder(s)
        err = abs(malthus_identity(d, constants_for(d, lam_factor).lam) - 1.0)
        out.append(Check(f"quadrature: int exp(-lam t^s) dt = 1 at s={s:g}", err,
                         "abs error < 1e-8", err < 1e-8, config={"s": s}))
    return out


def check_oracle(sizes: Sizes, seed: int, jobs: int = 1) -> List[Check]:
    out = []
    for n in sizes.oracle_n:
        for s in sizes.oracle_s:
            race = map_replicates(partial(fpp_replicate, n, s, seed, "stream"), sizes.oracle_m, jobs)
            orc = map_replicates(partial(oracle_replicate, n, s, seed), sizes.oracle_m, jobs)
            ks = stats.ks_two_sample([o.cost_original for o in race], [c for c, _ in orc])
            chi = stats.chi_square_homogeneity([o.hopcount for o in race], [h for _, h in orc])
            cfg = {"n": n, "s": s, "replicates": sizes.oracle_m, "seed": seed}
            out.append(Check(f"oracle: weight law n={n} s={s:g}", ks.statistic, "KS p > 0.01",
                             ks.p_value > 0.01, ks.p_value, cfg))
            out.append(Check(f"oracle: hopcount law n={n} s={s:g}", chi.statistic,
                             "chi-square p > 0.01", chi.p_value > 0.01, chi.p_value,
                             dict(cfg, dof=chi.dof)))
    return out


def check_two_vertex_exact(sizes: Sizes, seed: int, jobs: int = 1) -> List[Check]:
    out = []
    for s in (0.5, 1.0, 2.0):
        res = map_replicates(partial(fpp_replicate, 2, s, seed, "stream"), sizes.n2_m, jobs)
        c = np.array([o.cost_original for o in res])
        ks = stats.ks_one_sample(c, lambda x, s=s: -np.expm1(-np.power(x, 1.0 / s)))
        cfg = {"n": 2, "s": s, "replicates": sizes.n2_m, "seed": seed}
        out.append(Check(f"n=2: P(C > x) = exp(-x^(1/s)) at s={s:g}", ks.statistic, "KS p > 0.01",
                         ks.p_value > 0.01, ks.p_value, cfg))
        bad = int(sum(o.hopcount != 1 for o in res))
        out.append(Check(f"n=2: hopcount is 1 at s={s:g}", bad, "0 exceptions", bad == 0, config=cfg))
    return out


def check_hopcount_slopes(data: Dict[tuple, list]) -> List[Check]:
    out = []
    for s in sorted({k[0] for k in data}):
        ns = sorted(n for (ss, n) in data if ss == s)
        if len(ns) < 3:
            continue
        d = Disorder(s)
        summ = [fpp_summary(data[(s, n)], d) for n in ns]
        x = np.log(ns)
        fit_m = stats.slope_fit(x, [q["mean_H"] for q in summ], [q["se_mean_H"] for q in summ])
        fit_v = stats.slope_fit(x, [q["var_H"] for q in summ], [q["se_var_H"] for q in summ])
        cfg = {"s": s, "n_grid": ns, "replicates": summ[0]["replicates"]}
        rel_m = abs(fit_m.slope - s) / s
        rel_v = abs(fit_v.slope - s * s) / (s * s)
        out.append(Check(f"hopcount CLT: slope of mean(H) vs log n = s at s={s:g}", fit_m.slope,
                         f"within 10% of {s:g}", rel_m < 0.10,
                         config=dict(cfg, slope_se=fit_m.slope_se)))
        out.append(Check(f"hopcount CLT: slope of var(H) vs log n = s^2 at s={s:g}", fit_v.slope,
                         f"within 20% of {s * s:g}", rel_v < 0.20,
                         config=dict(cfg, slope_se=fit_v.slope_se)))
    return out


def check_hopcount_normality(data: Dict[tuple, list], n: int = 100_000, s: float = 1.0) -> List[Check]:
    if (s, n) not in data:
        return []
    d = Disorder(s)
    z = stats.standardize_hopcount(np.array([o.hopcount for o in data[(s, n)]]), n, d)
    ks = stats.ks_one_sample(z, stats.normal_cdf)
    return [Check(f"hopcount normality at n={n} s={s:g}", ks.statistic, "KS D < 0.08",
                  ks.statistic < 0.08, ks.p_value, {"n": n, "s": s, "replicates": len(z)})]


def check_weight_limit(data: Dict[tuple, list], sizes: Sizes, seed: int, jobs: int = 1,
                       n: int = 100_000, lam_factor: float = 1.0) -> List[Check]:
    out = []
    for s in (1.0, 2.0):
        if (s, n) not in data or sizes.xi_m == 0:
            continue
        d = Disorder(s)
        lc = constants_for(d, lam_factor)
        c = np.array([o.cost_original for o in data[(s, n)]])
        rec = stats.recenter_weight(c, n, d, lc)
        ws = np.array(map_replicates(partial(w_replicate, s, sizes.xi_growth, 2.0, seed,
                                             DOMAIN["xi"], lam_factor), 2 * sizes.xi_m, jobs))
        rng = RngStream(seed, 0, (DOMAIN["xi"], 99))
        for k, label in ((0, ""), (1, " (second horizon)")):
            pool = ws[:, k]
            xi = [limitlaw.xi2_from(d, -sample_gumbel(rng), pool[2 * i], pool[2 * i + 1], lc)
                  for i in range(sizes.xi_m)]
            ks = stats.ks_two_sample(rec, xi)
            growth = sizes.xi_growth * (1 if k == 0 else 2)
            out.append(Check(f"weight limit vs CTBP 2Xi at n={n} s={s:g}{label}", ks.statistic,
                             "KS D < 0.1", ks.statistic < 0.1, ks.p_value,
                             {"n": n, "s": s, "xi_samples": sizes.xi_m, "growth": growth},
                             informational=k == 1))
        if s == 1.0:
            xi = [limitlaw.xi2_from(d, -sample_gumbel(rng), rng.exponential(), rng.exponential(), lc)
                  for _ in range(sizes.xi_m)]
            ks = stats.ks_two_sample(rec, xi)
            out.append(Check(f"weight limit vs closed form (W ~ Exp(1)) at n={n} s=1",
                             ks.statistic, "KS D < 0.08", ks.statistic < 0.08, ks.p_value,
                             {"n": n, "s": s, "xi_samples": sizes.xi_m}))
    return out


def check_independence(data: Dict[tuple, list], n: int = 100_000, s: float = 1.0) -> List[Check]:
    if (s, n) not in data:
        return []
    d = Disorder(s)
    q = fpp_summary(data[(s, n)], d)
    r = q["corr_H_weight"]
    return [Check(f"independence of hopcount and weight at n={n} s={s:g}", r, "|r| < 0.1",
                  abs(r) < 0.1, config={"n": n, "s": s, "replicates": q["replicates"]})]


def check_martingale(sizes: Sizes, seed: int, jobs: int = 1, lam_factor: float = 1.0) -> List[Check]:
    out = []
    for s in (0.5, 1.0, 2.0):
        ws = np.array(map_replicates(partial(w_replicate, s, sizes.w_growth, 4.0, seed,
                                             DOMAIN["ctbp"], lam_factor), sizes.w_m, jobs))
        for k in (0, 1):
            st = stats.summarize(ws[:, k])
            z = (st.mean - s) / st.std_error
            growth = sizes.w_growth * (1 if k == 0 else 4)
            out.append(Check(f"martingale: E[W] = s at s={s:g}, exp(lam t)={growth:g}", st.mean,
                             "within 3 standard errors", abs(z) < 3,
                             config={"s": s, "replicates": sizes.w_m, "growth": growth,
                                     "std_error": st.std_error, "z": z},
                             informational=k == 1))
        if s == 1.0:
            ks = stats.ks_one_sample(ws[:, 0], lambda x: -np.expm1(-np.maximum(x, 0.0)))
            out.append(Check("martingale: W ~ Exp(1) at s=1", ks.statistic, "KS p > 0.01",
                             ks.p_value > 0.01, ks.p_value,
                             {"s": 1.0, "replicates": sizes.w_m, "growth": sizes.w_growth}))
    return out


def check_phi(sizes: Sizes, seed: int, jobs: int = 1) -> List[Check]:
    out = []
    tab = limitlaw.solve_phi(Disorder(1.0))
    u = np.linspace(0.0, 10.0, 2001)
    err = float(np.max(np.abs(tab(u) - 1.0 / (1.0 + u))))
    out.append(Check("phi fixed point: s=1 equals 1/(1+u) on [0, 10]", err, "sup error < 1e-3",
                     err < 1e-3, config={"iterations": tab.iterations}))
    d = Disorder(2.0)
    tab = limitlaw.solve_phi(d)
    ws = np.array(map_replicates(partial(w_replicate, 2.0, sizes.w_growth, 4.0, seed,
                                         DOMAIN["laplace"], 1.0), sizes.laplace_m, jobs))[:, 0]
    gaps = [abs(float(np.mean(np.exp(-uu * ws))) - tab(uu)) for uu in (0.5, 1.0, 2.0)]
    out.append(Check("phi fixed point: s=2 table vs Monte Carlo Laplace transform", max(gaps),
                     "max gap < 0.02 at u = 0.5, 1, 2", max(gaps) < 0.02,
                     config={"samples": sizes.laplace_m, "growth": sizes.w_growth, "gaps": gaps}))
    return out


def check_two_vertex(sizes: Sizes, seed: int, jobs: int = 1, lam_factor: float = 1.0) -> List[Check]:
    out = []
    for s in sizes.pair_s:
        d = Disorder(s)
        lc = constants_for(d, lam_factor)
        res = np.array(map_replicates(partial(pair_replicate, s, sizes.pair_growth, seed, lam_factor),
                                      sizes.pair_m, jobs))
        cfg = {"s": s, "pairs": sizes.pair_m, "growth": sizes.pair_growth}
        ratio = float(res[:, 0].mean())
        out.append(Check(f"two-vertex limit: mean of exp(-2 lam t) sum / (W1 W2) = lam at s={s:g}",
                         ratio, f"within 10% of {lc.lam:.6g}",
                         abs(ratio - lc.lam) < 0.10 * lc.lam, config=cfg))
        for k, (x, y) in enumerate(PAIR_WINDOWS[1:], start=1):
            target = float(stats.normal_cdf(x) * stats.normal_cdf(y))
            got = float(res[:, k].mean())
            out.append(Check(f"two-vertex windowed ratio at (x, y)=({x:g}, {y:g}) s={s:g}", got,
                             f"within 0.05 of {target:.4f}", abs(got - target) < 0.05,
                             config=cfg, informational=not sizes.windows_gate))
    return out


def check_recursion(sizes: Sizes, seed: int) -> List[Check]:
    d = Disorder(1.0)
    m = sizes.recursion_m
    rng = RngStream(seed, 0, (DOMAIN["recursion"], 1))
    pool = rng.exponentials(m)
    res = limitlaw.w_recursion_check(d, pool, RngStream(seed, 0, (DOMAIN["recursion"], 2)),
                                     w_source=limitlaw.exact_exponential_w)
    neg = limitlaw.w_recursion_check(d, np.zeros(m), RngStream(seed, 0, (DOMAIN["recursion"], 3)),
                                     w_source=limitlaw.exact_exponential_w)
    cfg = {"s": 1.0, "samples": m}
    return [
        Check("W recursion: Exp(1) is a fixed point at s=1", res.ks.statistic, "KS p > 0.01",
              res.ks.p_value > 0.01, res.ks.p_value, cfg),
        Check("W recursion: truncation tail mass", res.tail_mass_mean, "mean < 1e-6",
              res.tail_mass_mean < 1e-6, config=cfg),
        Check("W recursion: all-zero pool is rejected", neg.ks.statistic, "KS p < 0.01",
              neg.ks.p_value < 0.01, neg.ks.p_value, cfg),
    ]


def check_determinism(seed: int, jobs: int = 2) -> List[Check]:
    fn = partial(fpp_replicate, 300, 1.0, seed, "stream")
    rows = lambda res: "\n".join(",".join(fpp.outcome_row(o, seed, r)) for r, o in enumerate(res))
    a = rows(map_replicates(fn, 24, 1))
    b = rows(map_replicates(fn, 24, 1))
    c = rows(map_replicates(fn, 24, jobs))
    return [Check("determinism: identical reruns", None, "byte-identical rows", a == b),
            Check(f"determinism: jobs=1 vs jobs={jobs}", None, "byte-identical rows", a == c)]


def run_suite(sizes: Sizes, seed: int, jobs: int = 1, lam_factor: float = 1.0,
              emit: Optional[Callable[[Check], None]] = None) -> List[Check]:
    """All checks of a preset, in criterion order; ``emit`` sees each as it lands."""
    checks: List[Check] = []

    def add(batch):
        for c in batch:
            checks.append(c)
            if emit:
                emit(c)

    add(check_constants(lam_factor))
    add(check_quadrature(lam_factor))
    add(check_oracle(sizes, seed, jobs))
    add(check_two_vertex_exact(sizes, seed, jobs))
    data = run_fpp_grid(sizes.grid_s, sizes.grid_n, sizes.grid_m, seed, jobs) if sizes.grid_m else {}
    add(check_hopcount_slopes(data))
    add(check_hopcount_normality(data))
    add(check_weight_limit(data, sizes, seed, jobs, lam_factor=lam_factor))
    add(check_independence(data))
    add(check_martingale(sizes, seed, jobs, lam_factor))
    add(check_phi(sizes, seed, jobs))
    add(check_two_vertex(sizes, seed, jobs, lam_factor))
    add(check_recursion(sizes, seed))
    add(check_determinism(seed, max(2, jobs)))
    return checks
