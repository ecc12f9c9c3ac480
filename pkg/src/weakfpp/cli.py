"""Command-line entry point ``weakfpp``.

Every run is reproducible from its ``[run]`` config section, which is
written next to the outputs. Flags override values read with ``--config``.

Exit codes: 0 ok, 1 usage, 2 numerical failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, fields
from functools import partial
from typing import Optional, Sequence

import numpy as np

from . import ctbp, fpp, limitlaw, stats, suites
from .limits import Disorder, SeriesNotConverged, malthusian, stable_age_density
from .runner import iter_replicates, map_replicates
from .sampling import HazardError, RngStream, sample_gumbel

__all__ = ["RunConfig", "main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERIC",
           "EXIT_VERIFY"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
# verify is a fixed experiment, so it has a fixed default seed
VERIFY_SEED = 20240607
NUMERIC_ERRORS = (HazardError, SeriesNotConverged, limitlaw.PhiNotConverged,
                  ctbp.PopulationCapExceeded, ArithmeticError)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a run depends on; serialises to an INI ``[run]`` section."""

    command: str = ""
    s: Optional[float] = None
    n: Optional[int] = None
    n_grid: tuple = ()
    replicates: int = 1
    seed: Optional[int] = None
    horizon: float = 5e3
    out: str = ""
    jobs: int = 1
    method: str = "stream"
    suite: str = "quick"
    phi: bool = False
    xi: bool = False
    fpp_csv: str = ""
    lam_factor: float = 1.0

    def sizes(self) -> tuple:
        if self.n_grid:
            return tuple(self.n_grid)
        return () if self.n is None else (self.n,)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {}
        sec = cp["run"]
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or v == "" or v == ():
                continue
            if f.name == "n_grid":
                sec[f.name] = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                sec[f.name] = repr(v)
            else:
                sec[f.name] = str(v)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(text)
        if "run" not in cp:
            raise UsageError("config file has no [run] section")
        return cls().updated(dict(cp["run"]))

    def updated(self, values: dict) -> "RunConfig":
        """Copy with string or typed ``values`` applied (unknown keys rejected)."""
        known = {f.name: f for f in fields(self)}
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise UsageError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, raw)
        return RunConfig(**kw)


_INT_KEYS = {"n", "replicates", "seed", "jobs"}
_FLOAT_KEYS = {"s", "horizon", "lam_factor"}
_BOOL_KEYS = {"phi", "xi"}


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        if key == "n_grid":
            return tuple(int(x) for x in raw)
        return raw
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if key == "n_grid":
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc
    return raw


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="weakfpp", description="First-passage percolation on the complete graph "
                "with E^s weights: simulators and verification suites.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI file with a [run] section; flags override it")
        sp.add_argument("--s", type=float, help="disorder exponent")
        sp.add_argument("--seed", type=int, help="master seed (required for random runs)")
        sp.add_argument("--replicates", "--M", dest="replicates", type=int)
        sp.add_argument("--out", help="output directory (default: stdout where possible)")
        sp.add_argument("--jobs", type=int, help="worker processes")
        sp.add_argument("--horizon", type=float,
                        help="CTBP horizon as the growth factor exp(lam t), at least 3000")

    sp = sub.add_parser("constants", help="print lambda, beta1, beta2 and a stable-age table")
    sp.add_argument("--config")
    sp.add_argument("--s", type=float)
    sp.add_argument("--out")

    for name, helptext in (("fpp", "two-source race: weight and hopcount per replicate"),
                           ("single", "single-source flow to vertex 2"),
                           ("oracle-compare", "race versus brute-force Dijkstra")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--n", type=int)
        sp.add_argument("--n-grid", dest="n_grid", help="comma-separated graph sizes")
        if name != "single":
            sp.add_argument("--method", choices=("stream", "split", "joint"))

    sp = sub.add_parser("ctbp", help="martingale-limit estimates at two horizons")
    common(sp)

    sp = sub.add_parser("limit", help="phi table, 2Xi samples, optional comparison with an fpp CSV")
    common(sp)
    sp.add_argument("--phi", action="store_true", default=None)
    sp.add_argument("--xi", action="store_true", default=None)
    sp.add_argument("--fpp-csv", dest="fpp_csv")

    sp = sub.add_parser("verify", help="run a canned acceptance suite")
    sp.add_argument("suite", choices=("quick", "full"))
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--out")
    sp.add_argument("--perturb-lambda", dest="lam_factor", type=float,
                    help=argparse.SUPPRESS)
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=ns.command)
    if getattr(ns, "config", None):
        try:
            with open(ns.config) as fh:
                cfg = RunConfig.from_ini(fh.read()).updated({"command": ns.command})
        except OSError as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "command") and v is not None}
    return cfg.updated(flags)


# -- output helpers -------------------------------------------------------
class _Output:
    def __init__(self, cfg: RunConfig):
        self.dir = cfg.out or ""
        if self.dir:
            os.makedirs(self.dir, exist_ok=True)
            with open(os.path.join(self.dir, "config.ini"), "w") as fh:
                fh.write(cfg.to_ini())

    def open(self, name: str):
        if not self.dir:
            return _Borrowed(sys.stdout)
        return open(os.path.join(self.dir, name), "w", newline="")

    def json(self, name: str, obj) -> None:
        text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
        if self.dir:
            with open(os.path.join(self.dir, name), "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)


class _Borrowed:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()
        return False


def _require(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required for {cfg.command}")


def _disorder(cfg: RunConfig) -> Disorder:
    _require(cfg, "s")
    try:
        return Disorder(cfg.s)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _positive(cfg, name, minimum=1):
    v = getattr(cfg, name)
    if v is None or v < minimum:
        raise UsageError(f"--{name} must be at least {minimum}")


def _check_s_range(d: Disorder):
    lo, hi = fpp.S_RANGE
    if not lo <= d.s <= hi:
        raise UsageError(f"s={d.s} outside the supported range [{lo}, {hi}]")


# -- commands -------------------------------------------------------------
def cmd_constants(cfg: RunConfig) -> int:
    d = _disorder(cfg)
    lc = malthusian(d)
    print(f"lambda={lc.lam!r}")
    print(f"beta1={lc.beta1!r}")
    print(f"beta2={lc.beta2!r}")
    out = _Output(cfg)
    ts = np.linspace(0.0, 5.0 * lc.beta1 + 5.0 * lc.beta2, 101)[1:]
    with out.open("stable_age.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "density"])
        for t in ts:
            w.writerow([repr(float(t)), repr(float(stable_age_density(d, t, lc)))])
    return EXIT_OK


def cmd_fpp(cfg: RunConfig) -> int:
    d = _disorder(cfg)
    _check_s_range(d)
    _require(cfg, "seed")
    _positive(cfg, "replicates")
    ns = cfg.sizes()
    if not ns:
        raise UsageError("--n or --n-grid is required")
    if min(ns) < 2:
        raise UsageError("n must be at least 2")
    out = _Output(cfg)
    summaries, error = [], None
    with out.open("fpp.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fpp.OUTCOME_COLUMNS)
        for n in ns:
            batch = []
            try:
                for r, o in enumerate(iter_replicates(
                        partial(suites.fpp_replicate, n, d.s, cfg.seed, cfg.method),
                        cfg.replicates, cfg.jobs)):
                    w.writerow(fpp.outcome_row(o, cfg.seed, r))
                    batch.append(o)
            except NUMERIC_ERRORS as exc:
                error = f"n={n}, after {len(batch)} replicates: {exc}"
                break
            finally:
                fh.flush()
            summaries.append(suites.fpp_summary(batch, d))
    report = {"config": _cfg_dict(cfg), "per_n": summaries}
    if len(summaries) >= 3 and all("se_var_H" in q for q in summaries):
        x = np.log([q["n"] for q in summaries])
        fm = stats.slope_fit(x, [q["mean_H"] for q in summaries], [q["se_mean_H"] for q in summaries])
        fv = stats.slope_fit(x, [q["var_H"] for q in summaries], [q["se_var_H"] for q in summaries])
        report["slope_mean_H"] = {"slope": fm.slope, "intercept": fm.intercept, "slope_se": fm.slope_se}
        report["slope_var_H"] = {"slope": fv.slope, "intercept": fv.intercept, "slope_se": fv.slope_se}
    if error:
        report["error"] = error
    out.json("summary.json", report)
    if error:
        print(f"numerical failure: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _single_replicate(n: int, s: float, seed: int, r: int):
    o = fpp.run_single_source(n, Disorder(s), RngStream(seed, r, (suites.DOMAIN["single"], n)))
    return (o.cost_rescaled, o.cost_original, o.hopcount, o.cluster.size, o.events,
            o.activation_diag)


def cmd_single(cfg: RunConfig) -> int:
    d = _disorder(cfg)
    _check_s_range(d)
    _require(cfg, "seed")
    _positive(cfg, "replicates")
    ns = cfg.sizes()
    if not ns:
        raise UsageError("--n is required")
    out = _Output(cfg)
    f = lambda x: format(float(x), ".17g")
    summary = []
    with out.open("single.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "s", "seed", "replicate", "W_n", "C", "H_n", "cluster_size", "events",
                    "activation_diag"])
        for n in ns:
            res = map_replicates(partial(_single_replicate, n, d.s, cfg.seed), cfg.replicates, cfg.jobs)
            for r, (wr, c, h, k, ev, diag) in enumerate(res):
                w.writerow([n, f(d.s), cfg.seed, r, f(wr), f(c), h, k, ev, diag])
            h = np.array([x[2] for x in res], dtype=float)
            summary.append({"n": n, "mean_H": float(h.mean()),
                            "var_H": float(np.var(h, ddof=1)) if h.size > 1 else 0.0,
                            "mean_cluster": float(np.mean([x[3] for x in res]))})
    out.json("summary.json", {"config": _cfg_dict(cfg), "per_n": summary})
    return EXIT_OK


def _policy(cfg: RunConfig) -> limitlaw.HorizonPolicy:
    try:
        return limitlaw.HorizonPolicy(growth=cfg.horizon)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_ctbp(cfg: RunConfig) -> int:
    d = _disorder(cfg)
    _require(cfg, "seed")
    _positive(cfg, "replicates")
    pol = _policy(cfg)
    lc = malthusian(d)
    t1, t2 = pol.horizons(lc)
    res = map_replicates(partial(suites.w_replicate, d.s, pol.growth, pol.second, cfg.seed,
                                 suites.DOMAIN["ctbp"], 1.0), cfg.replicates, cfg.jobs)
    out = _Output(cfg)
    with out.open("w.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "W_t", "W_t2"])
        for r, (a, b) in enumerate(res):
            w.writerow([r, repr(float(a)), repr(float(b))])
    arr = np.array(res)
    summ = {"config": _cfg_dict(cfg), "t": t1, "t2": t2, "target_mean": d.s}
    if arr.shape[0] >= 2:
        for k, key in ((0, "t"), (1, "t2")):
            st = stats.summarize(arr[:, k])
            summ[f"W_{key}"] = {"mean": st.mean, "variance": st.variance, "std_error": st.std_error}
    out.json("summary.json", summ)
    return EXIT_OK


def _read_recentered(path: str, d: Disorder) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read fpp CSV {path}: {exc}") from exc
    if not rows or "recentered_weight" not in rows[0]:
        raise UsageError(f"{path} is not an fpp CSV")
    return np.array([float(r["recentered_weight"]) for r in rows if float(r["s"]) == d.s])


def cmd_limit(cfg: RunConfig) -> int:
    d = _disorder(cfg)
    if not (cfg.phi or cfg.xi or cfg.fpp_csv):
        raise UsageError("choose at least one of --phi, --xi, --fpp-csv")
    out = _Output(cfg)
    summ = {"config": _cfg_dict(cfg)}
    recentered = _read_recentered(cfg.fpp_csv, d) if cfg.fpp_csv else None
    if cfg.phi:
        tab = limitlaw.solve_phi(d)
        if out.dir:
            tab.to_csv(os.path.join(out.dir, "phi.csv"))
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["u", "phi"])
            for u, v in zip(tab.u_grid, tab.values):
                w.writerow([repr(float(u)), repr(float(v))])
            sys.stdout.write(buf.getvalue())
        summ["phi"] = {"iterations": tab.iterations, "last_change": tab.last_change,
                       "grid_size": int(tab.u_grid.size), "u_max": tab.u_max}
        if d.s == 1.0:
            u = np.linspace(0.0, 10.0, 2001)
            summ["phi"]["sup_error_exponential"] = float(np.max(np.abs(tab(u) - 1 / (1 + u))))
    if cfg.xi or recentered is not None:
        _require(cfg, "seed")
        _positive(cfg, "replicates")
        pol = _policy(cfg)
        ws = map_replicates(partial(suites.w_replicate, d.s, pol.growth, pol.second, cfg.seed,
                                    suites.DOMAIN["xi"], 1.0), 2 * cfg.replicates, cfg.jobs)
        rng = RngStream(cfg.seed, 0, (suites.DOMAIN["xi"], 99))
        lc = malthusian(d)
        samples = []
        for i in range(cfg.replicates):
            w1, w2 = ws[2 * i][0], ws[2 * i + 1][0]
            g = -sample_gumbel(rng)
            samples.append(limitlaw.LimitSample(limitlaw.xi2_from(d, g, w1, w2, lc), g, w1, w2))
        with out.open("xi.csv") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "xi2", "gumbel", "w1", "w2"])
            for r, x in enumerate(samples):
                w.writerow([r] + [repr(float(v)) for v in (x.xi2, x.gumbel, x.w1, x.w2)])
        xi = np.array([x.xi2 for x in samples])
        summ["xi"] = {"count": int(xi.size), "mean": float(xi.mean()), "growth": pol.growth}
        if recentered is not None:
            ks = stats.ks_two_sample(recentered, xi)
            summ["cross_ks"] = {"D": ks.statistic, "p": ks.p_value, "fpp_rows": int(recentered.size)}
    out.json("summary.json", summ)
    return EXIT_OK


def cmd_oracle_compare(cfg: RunConfig) -> int:
    d = _disorder(cfg)
    _check_s_range(d)
    _require(cfg, "seed")
    _positive(cfg, "replicates", minimum=8)
    ns = cfg.sizes()
    if not ns:
        raise UsageError("--n or --n-grid is required")
    if max(ns) > fpp.ORACLE_MAX_N:
        raise UsageError(f"the oracle is limited to n <= {fpp.ORACLE_MAX_N}")
    records = []
    for n in ns:
        sz = suites.Sizes(oracle_n=(n,), oracle_s=(d.s,), oracle_m=cfg.replicates)
        for c in suites.check_oracle(sz, cfg.seed, cfg.jobs):
            records.append(c.record())
    out = _Output(cfg)
    out.json("oracle.json", records)
    return EXIT_OK if all(r["pass"] for r in records) else EXIT_VERIFY


def cmd_verify(cfg: RunConfig) -> int:
    seed = VERIFY_SEED if cfg.seed is None else cfg.seed
    sizes = suites.FULL if cfg.suite == "full" else suites.QUICK
    emit = lambda c: print(c.line(), flush=True)
    checks = suites.run_suite(sizes, seed, max(1, cfg.jobs), cfg.lam_factor, emit)
    report = {"suite": cfg.suite, "seed": seed, "lam_factor": cfg.lam_factor,
              "checks": [c.record() for c in checks]}
    gated = [c for c in checks if not c.informational]
    report["pass"] = all(c.passed for c in gated)
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    failed = [c.name for c in gated if not c.passed]
    print(f"{len(gated) - len(failed)}/{len(gated)} gated checks passed")
    return EXIT_OK if not failed else EXIT_VERIFY


def _cfg_dict(cfg: RunConfig) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(cfg.to_ini())
    return dict(cp["run"])


HANDLERS = {"constants": cmd_constants, "fpp": cmd_fpp, "single": cmd_single, "ctbp": cmd_ctbp,
            "limit": cmd_limit, "oracle-compare": cmd_oracle_compare, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = config_from_args(ns)
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"weakfpp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"weakfpp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
