"""Limit objects: the martingale limit ``W``, its Laplace transform and ``2 Xi``.

``W`` is approximated by ``exp(-lam t) z_t`` at a finite horizon, which is
biased at any finite ``t``; callers report the horizon they used. The
Laplace transform ``phi(u) = E exp(-u W)`` solves

    phi(u) = exp( int_0^inf [phi(u exp(-lam x^s)) - 1] dx ),

the generating-functional form of ``W = sum_i exp(-lam L_i) W_i``. The
collision-weight limit is the first point of a Cox process; conditionally
on ``W1, W2``

    P(Xi > y | W1, W2) = exp(-(1/s) W1 W2 exp(2 lam y)),

so ``2 Xi = (G - log W1 - log W2 - log(1/s)) / lam`` with ``G = log E``,
``E ~ Exp(1)``. This ``G`` is the minimum-type Gumbel, i.e. minus a
standard Gumbel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import interpolate, special

from .ctbp import grow_until, martingale_estimate
from .limits import Disorder, LimitConstants, malthusian
from .sampling import sample_gumbel
from .stats import KsResult, ks_two_sample

__all__ = [
    "HorizonPolicy",
    "LimitSample",
    "PhiTable",
    "PhiNotConverged",
    "WRecursionResult",
    "sample_w",
    "sample_w_two_horizons",
    "exact_exponential_w",
    "table_w",
    "ctbp_w",
    "xi2_from",
    "sample_limit",
    "sample_limits",
    "solve_phi",
    "phi_operator",
    "w_recursion_check",
    "RECURSION_CUTOFF",
]

RECURSION_CUTOFF = 1e-8
MIN_GROWTH = 3e3


class PhiNotConverged(ArithmeticError):
    """The fixed-point iteration for ``phi`` did not settle."""


@dataclass(frozen=True)
class HorizonPolicy:
    """CTBP horizon chosen through the expected growth factor ``exp(lam t)``.

    ``second`` multiplies the growth factor for the companion horizon used
    to measure the finite-``t`` bias.
    """

    growth: float = 5e3
    second: float = 4.0

    def __post_init__(self):
        if not self.growth >= MIN_GROWTH:
            raise ValueError(f"growth factor exp(lam t) must be >= {MIN_GROWTH:g}")
        if not self.second > 1:
            raise ValueError("second-horizon factor must exceed 1")

    def horizon(self, lc: LimitConstants) -> float:
        return math.log(self.growth) / lc.lam

    def horizons(self, lc: LimitConstants) -> tuple:
        return (math.log(self.growth) / lc.lam, math.log(self.growth * self.second) / lc.lam)


@dataclass(frozen=True)
class LimitSample:
    """One draw of ``2 Xi`` with the ingredients that produced it.

    ``gumbel`` is the minimum-type Gumbel value entering the formula.
    """

    xi2: float
    gumbel: float
    w1: float
    w2: float


def sample_w(d: Disorder, policy: HorizonPolicy, rng, method: str = "generation",
             population_cap: Optional[int] = None) -> float:
    """Finite-horizon estimate of ``W`` from a fresh CTBP."""
    lc = malthusian(d)
    kw = {} if population_cap is None else {"population_cap": population_cap}
    snap = grow_until(d, policy.horizon(lc), rng, method=method, **kw)
    return martingale_estimate(snap, lc)


def sample_w_two_horizons(d: Disorder, policy: HorizonPolicy, rng,
                          method: str = "generation") -> tuple:
    """``W`` estimates of one realization at both horizons of ``policy``."""
    lc = malthusian(d)
    t1, t2 = policy.horizons(lc)
    snap = grow_until(d, t1, rng, method=method)
    w1 = martingale_estimate(snap, lc)
    snap.advance(t2)
    return w1, martingale_estimate(snap, lc)


# -- W sources: callables rng -> positive float ---------------------------
def exact_exponential_w(rng) -> float:
    """Exact ``W ~ Exp(1)``, the law of ``W`` at ``s = 1``."""
    return rng.exponential()


def table_w(values: Sequence[float]) -> Callable:
    """Bootstrap source drawing uniformly from a fixed table of ``W`` values."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise ValueError("empty W table")

    def draw(rng) -> float:
        return float(vals[min(int(rng.uniform() * vals.size), vals.size - 1)])

    return draw


def ctbp_w(d: Disorder, policy: Optional[HorizonPolicy] = None,
           method: str = "generation") -> Callable:
    """Source producing a fresh finite-horizon CTBP estimate per draw."""
    policy = policy or HorizonPolicy()

    def draw(rng) -> float:
        return sample_w(d, policy, rng, method)

    return draw


def xi2_from(d: Disorder, g: float, w1: float, w2: float,
             lc: Optional[LimitConstants] = None) -> float:
    """``(g - log w1 - log w2 - log(1/s)) / lam``."""
    if not (w1 > 0 and w2 > 0):
        raise ValueError("W values must be positive")
    lam = (lc or malthusian(d)).lam
    return (g - math.log(w1) - math.log(w2) + math.log(d.s)) / lam


def sample_limit(d: Disorder, rng, w_source: Callable, route: str = "gumbel",
                 gumbel: Optional[float] = None, lc: Optional[LimitConstants] = None) -> LimitSample:
    """One draw of ``2 Xi``.

    ``route="gumbel"`` uses the closed form with ``G = -(standard Gumbel)``;
    ``route="cdf"`` inverts the conditional survival function
    ``exp(-(1/s) w1 w2 exp(lam x))`` of ``x = 2 Xi`` directly. ``gumbel``
    forces the value of ``G`` (for hand checks).
    """
    lc = lc or malthusian(d)
    w1, w2 = w_source(rng), w_source(rng)
    if gumbel is not None:
        g = float(gumbel)
        return LimitSample(xi2_from(d, g, w1, w2, lc), g, w1, w2)
    if route == "gumbel":
        g = -sample_gumbel(rng)
        return LimitSample(xi2_from(d, g, w1, w2, lc), g, w1, w2)
    if route == "cdf":
        e = rng.exponential()
        while e == 0.0:
            e = rng.exponential()
        # e = (1/s) w1 w2 exp(lam x)
        x = math.log(d.s * e / (w1 * w2)) / lc.lam
        return LimitSample(x, math.log(e), w1, w2)
    raise ValueError(f"unknown route {route!r}")


def sample_limits(d: Disorder, rng, w_source: Callable, count: int,
                  route: str = "gumbel") -> list:
    lc = malthusian(d)
    return [sample_limit(d, rng, w_source, route, lc=lc) for _ in range(count)]


# -- phi ------------------------------------------------------------------
@dataclass
class PhiTable:
    """Laplace transform of ``W`` on a grid starting at ``u = 0``.

    Between grid points ``log(-log phi)`` is interpolated monotonically in
    ``log u``; below the first positive node ``-log phi`` is continued
    linearly in ``u``.
    ``psi = -log phi`` is kept alongside for precision near ``u = 0``.
    """

    u_grid: np.ndarray
    values: np.ndarray
    psi: Optional[np.ndarray] = None
    iterations: int = 0
    last_change: float = 0.0

    def __post_init__(self):
        self.u_grid = np.asarray(self.u_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.u_grid.shape != self.values.shape or self.u_grid.size < 3:
            raise ValueError("grid and values must match and hold at least three points")
        if self.u_grid[0] != 0 or np.any(np.diff(self.u_grid) <= 0):
            raise ValueError("u_grid must start at 0 and increase")
        if self.values[0] != 1.0 or np.any(self.values[1:] <= 0) or np.any(self.values[1:] >= 1):
            raise ValueError("phi must equal 1 at u = 0 and lie in (0, 1) beyond")
        if self.psi is None:
            self.psi = -np.log(self.values)
        self.psi = np.asarray(self.psi, dtype=float)

    @property
    def u_max(self) -> float:
        return float(self.u_grid[-1])

    def __call__(self, u):
        return _scalar(np.exp(-_psi_eval(self.u_grid[1:], np.log(self.psi[1:]), u)))

    def is_strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) < 0))

    def is_log_convex(self, tol: float = 1e-9) -> bool:
        """Slopes of ``log phi`` between grid points are nondecreasing."""
        slopes = -np.diff(self.psi) / np.diff(self.u_grid)
        return bool(np.all(np.diff(slopes) >= -tol * np.abs(slopes[1:])))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "phi"])
            for u, v in zip(self.u_grid, self.values):
                w.writerow([repr(float(u)), repr(float(v))])


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def _psi_eval(u_pos: np.ndarray, log_psi: np.ndarray, u) -> np.ndarray:
    """``-log phi`` at ``u`` from its logarithm on the positive nodes ``u_pos``.

    Monotone cubic (PCHIP) in ``log u``; linear in ``u`` below the first
    node and log-log linear beyond the last.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    if np.any(pos):
        lu = np.log(u[pos])
        lnodes = np.log(u_pos)
        inside = np.clip(lu, lnodes[0], lnodes[-1])
        lp = interpolate.pchip_interpolate(lnodes, log_psi, inside)
        # -log phi ~ E[W] u near 0
        lp = np.where(lu < lnodes[0], log_psi[0] + lu - lnodes[0], lp)
        above = lu > lnodes[-1]
        if np.any(above):
            slope = (log_psi[-1] - log_psi[-2]) / (lnodes[-1] - lnodes[-2])
            lp = np.where(above, log_psi[-1] + slope * (lu - lnodes[-1]), lp)
        out[pos] = np.exp(lp)
    return out


def _laguerre(d: Disorder, nodes: int):
    # weight y^(1/s - 1) e^(-y); the integrand is multiplied back by e^y
    return special.roots_genlaguerre(nodes, 1.0 / d.s - 1.0)


def _apply(d, lc, u_pos, log_psi, u, y, w) -> np.ndarray:
    """New ``-log phi`` at ``u`` after one application of the fixed-point map."""
    pref = 1.0 / (d.s * lc.lam ** (1.0 / d.s))
    arg = u[:, None] * np.exp(-y)[None, :]
    psi = _psi_eval(u_pos, log_psi, arg.ravel()).reshape(arg.shape)
    integral = (np.expm1(-psi) * np.exp(y)[None, :]) @ w
    return -pref * integral


def phi_operator(d: Disorder, table: PhiTable, u, nodes: int = 96,
                 lc: Optional[LimitConstants] = None):
    """One application of the fixed-point map to ``table`` at the points ``u``.

    ``exp(int_0^inf [phi(u e^-y) - 1] y^(1/s-1) dy / (s lam^(1/s)))`` by
    generalized Gauss-Laguerre quadrature.
    """
    lc = lc or malthusian(d)
    y, w = _laguerre(d, nodes)
    u_arr = np.asarray(u, dtype=float)
    psi = _apply(d, lc, table.u_grid[1:], np.log(table.psi[1:]), np.atleast_1d(u_arr), y, w)
    return _scalar(np.exp(-psi).reshape(u_arr.shape))


def _slope_at_zero(u: np.ndarray, psi: np.ndarray) -> float:
    # quadratic through the origin and the first two nodes
    u1, u2, p1, p2 = u[0], u[1], psi[0], psi[1]
    return float((p1 * u2**2 - p2 * u1**2) / (u1 * u2 * (u2 - u1)))


def solve_phi(d: Disorder, u_max: float = 50.0, grid_size: int = 128, tol: float = 1e-10,
              max_iter: int = 500, u_min: float = 1e-6, nodes: int = 96) -> PhiTable:
    """Iterate the fixed-point map from ``exp(-s u)`` until the sup-norm change is below ``tol``.

    The equation alone fixes ``phi`` only up to ``u -> c u``; the slope at
    ``u = 0`` is held at ``E[W] = s`` to select the solution.
    """
    if not 0 < u_max <= 50:
        raise ValueError("u_max must lie in (0, 50]")
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    if not tol > 0:
        raise ValueError("tol must be positive")
    lc = malthusian(d)
    u_pos = np.geomspace(u_min, u_max, grid_size - 1)
    y, w = _laguerre(d, nodes)
    psi = d.s * u_pos
    change = math.inf
    for it in range(1, max_iter + 1):
        new = _apply(d, lc, u_pos, np.log(psi), u_pos, y, w)
        if np.any(~(new > 0)) or np.any(~np.isfinite(new)):
            raise PhiNotConverged(f"iterate left (0, 1) at iteration {it}")
        # the map fixes every phi(c u); interpolation bias would drift along
        # that family, so the slope at 0 is held at E[W] = s
        new = _psi_eval(u_pos, np.log(new), u_pos * (d.s / _slope_at_zero(u_pos, new)))
        change = float(np.max(np.abs(np.exp(-new) - np.exp(-psi))))
        psi = new
        if change < tol:
            grid = np.concatenate([[0.0], u_pos])
            full = np.concatenate([[0.0], psi])
            return PhiTable(grid, np.exp(-full), full, it, change)
    raise PhiNotConverged(f"sup-norm change {change:.3g} still above tol={tol:g} "
                          f"after {max_iter} iterations")


# -- W recursion ----------------------------------------------------------
@dataclass(frozen=True)
class WRecursionResult:
    ks: KsResult
    rhs: np.ndarray
    mean_terms: float
    tail_mass_mean: float


def w_recursion_check(d: Disorder, w_samples, rng, w_source: Optional[Callable] = None,
                      size: Optional[int] = None, cutoff: float = RECURSION_CUTOFF,
                      policy: Optional[HorizonPolicy] = None) -> WRecursionResult:
    """Two-sample KS between a ``W`` pool and resampled ``sum_i exp(-lam L_i) W_i``.

    Each right-hand side uses a fresh offspring stream, truncated once
    ``exp(-lam L_i) < cutoff``, and fresh ``W_i`` from ``w_source`` (by
    default new finite-horizon CTBP estimates). The weight mass beyond the
    cutoff is measured on the same streams and reported.
    """
    pool = np.asarray(w_samples, dtype=float).ravel()
    size = pool.size if size is None else int(size)
    lc = malthusian(d)
    src = w_source or ctbp_w(d, policy)
    log_cut = math.log(cutoff)
    # offspring L with exp(-lam L) >= 1e-16 are enough to measure the tail
    gamma_tail = (-math.log(1e-16) / lc.lam) ** (1.0 / d.s)
    gamma_cut = (-log_cut / lc.lam) ** (1.0 / d.s)
    block = max(8, int(gamma_tail * 1.2) + 8)
    rhs = np.empty(size)
    terms = np.empty(size)
    tail = np.empty(size)
    for k in range(size):
        gam = np.cumsum(rng.exponentials(block))
        while gam[-1] < gamma_tail:
            gam = np.concatenate([gam, gam[-1] + np.cumsum(rng.exponentials(block))])
        m = int(np.searchsorted(gam, gamma_cut, side="right"))
        weights = np.exp(-lc.lam * gam ** d.s)
        wi = np.array([src(rng) for _ in range(m)])
        rhs[k] = float(np.dot(weights[:m], wi)) if m else 0.0
        terms[k] = m
        tail[k] = float(weights[m:].sum())
    return WRecursionResult(ks_two_sample(pool, rhs), rhs, float(terms.mean()), float(tail.mean()))
