"""Continuous-time branching process driven by ``L_i = (Y_1 + ... + Y_i)**s``.

Two exact growth engines are provided:

``queue``
    Event-driven. A min-heap holds one pending birth per individual (its
    next offspring time); when a birth fires, the child's first offspring
    and the parent's next one are enqueued. Resuming a snapshot continues
    the identical realization.
``generation``
    Vectorised, one generation at a time. On the Poisson scale
    ``Gamma = L**(1/s)`` each individual's offspring form a unit-rate process,
    so the children born before the horizon are a Poisson number of
    uniform points. Used for bulk sampling of the martingale limit.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .limits import Disorder, LimitConstants, malthusian

__all__ = [
    "Individual",
    "CtbpSnapshot",
    "PopulationCapExceeded",
    "grow_until",
    "martingale_estimate",
    "characteristic_sum",
    "two_vertex_sum",
    "two_vertex_window_sums",
    "generation_window",
    "artificial_activation_diagnostic",
    "DEFAULT_POPULATION_CAP",
]

DEFAULT_POPULATION_CAP = 5_000_000


class PopulationCapExceeded(MemoryError):
    """The population outgrew the configured cap before reaching the horizon."""


@dataclass(frozen=True)
class Individual:
    id: int
    parent_id: Optional[int]
    birth_time: float
    generation: int


class CtbpSnapshot:
    """A branching-process realization frozen at ``horizon``.

    Holds the individuals born by the horizon plus the pending offspring
    state needed to continue growth with :meth:`advance`.
    """

    def __init__(self, d: Disorder, rng, population_cap: int = DEFAULT_POPULATION_CAP,
                 method: str = "queue"):
        if method not in ("queue", "generation"):
            raise ValueError(f"unknown growth method {method!r}")
        self.d = d
        self.rng = rng
        self.population_cap = int(population_cap)
        self.method = method
        self.horizon = 0.0
        if method == "queue":
            self._birth = [0.0]
            self._gen = [0]
            self._parent = [-1]
            first = rng.exponential()
            self._cursor = [first]
            self._heap = [(first ** d.s, 0)]
        else:
            self._birth_a = np.zeros(1)
            self._gen_a = np.zeros(1, dtype=np.int64)
            self._parent_a = np.full(1, -1, dtype=np.int64)
            # offspring realised on [0, coverage] of the Poisson scale
            self._cover = np.zeros(1)
        self._cache = None

    # -- growth -----------------------------------------------------------
    def advance(self, horizon: float) -> "CtbpSnapshot":
        """Grow in place up to ``horizon`` (which may not decrease)."""
        if horizon < self.horizon:
            raise ValueError("cannot move a snapshot backwards in time")
        if self.method == "queue":
            self._advance_queue(horizon)
        else:
            self._advance_generation(horizon)
        self.horizon = float(horizon)
        self._cache = None
        return self

    def _advance_queue(self, horizon: float):
        heap, birth, gen, parent, cursor = self._heap, self._birth, self._gen, self._parent, self._cursor
        s = self.d.s
        exp = self.rng.exponential
        cap = self.population_cap
        push, pop = heapq.heappush, heapq.heappop
        while heap[0][0] <= horizon:
            if len(birth) >= cap:
                raise PopulationCapExceeded(
                    f"population reached cap {cap} before t={horizon}")
            t, p = pop(heap)
            c = len(birth)
            birth.append(t)
            gen.append(gen[p] + 1)
            parent.append(p)
            g = exp()
            cursor.append(g)
            push(heap, (t + g ** s, c))
            cursor[p] += exp()
            push(heap, (birth[p] + cursor[p] ** s, p))

    def _advance_generation(self, horizon: float):
        inv_s, s = 1.0 / self.d.s, self.d.s
        layers_b, layers_g, layers_p, layers_c = [self._birth_a], [self._gen_a], [self._parent_a], []
        fb, fg, fc = self._birth_a, self._gen_a, self._cover
        base, total = 0, len(fb)
        while True:
            reach = (horizon - fb) ** inv_s
            extra = np.maximum(reach - fc, 0.0)
            layers_c.append(reach)
            counts = self.rng.poisson(extra)
            n_new = int(counts.sum())
            if n_new == 0:
                break
            if total + n_new > self.population_cap:
                raise PopulationCapExceeded(
                    f"population would exceed cap {self.population_cap} before t={horizon}")
            idx = np.repeat(np.arange(fb.size), counts)
            gam = fc[idx] + self.rng.uniforms(n_new) * extra[idx]
            fb, fg, fc = fb[idx] + gam ** s, fg[idx] + 1, np.zeros(n_new)
            layers_b.append(fb)
            layers_g.append(fg)
            layers_p.append(base + idx)
            base, total = total, total + n_new
        self._birth_a = np.concatenate(layers_b)
        self._gen_a = np.concatenate(layers_g)
        self._parent_a = np.concatenate(layers_p)
        self._cover = np.concatenate(layers_c)

    # -- accessors --------------------------------------------------------
    def _arrays(self):
        if self._cache is None:
            if self.method == "queue":
                self._cache = (np.asarray(self._birth), np.asarray(self._gen, dtype=np.int64),
                               np.asarray(self._parent, dtype=np.int64))
            else:
                self._cache = (self._birth_a, self._gen_a, self._parent_a)
        return self._cache

    @property
    def birth_times(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def generations(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def parents(self) -> np.ndarray:
        return self._arrays()[2]

    @property
    def population(self) -> int:
        return len(self._birth) if self.method == "queue" else len(self._birth_a)

    @property
    def ages(self) -> np.ndarray:
        return self.horizon - self.birth_times

    @property
    def individuals(self) -> list:
        T, G, P = self._arrays()
        return [Individual(i, None if P[i] < 0 else int(P[i]), float(T[i]), int(G[i]))
                for i in range(len(T))]

    def to_csv(self, path) -> None:
        """Flat record table ``id,parent,T,G`` (root has an empty parent)."""
        T, G, P = self._arrays()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "parent", "T", "G"])
            for i in range(len(T)):
                w.writerow([i, "" if P[i] < 0 else int(P[i]), repr(float(T[i])), int(G[i])])


def grow_until(d: Disorder, horizon: float, rng, population_cap: int = DEFAULT_POPULATION_CAP,
               method: str = "queue") -> CtbpSnapshot:
    """Grow a fresh process from a single root up to ``horizon``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return CtbpSnapshot(d, rng, population_cap, method).advance(horizon)


def martingale_estimate(snap: CtbpSnapshot, lc: LimitConstants) -> float:
    """Finite-horizon estimate ``exp(-lam t) z_t`` of the martingale limit."""
    return math.exp(-lc.lam * snap.horizon) * snap.population


def characteristic_sum(snap: CtbpSnapshot, chi: Callable[[np.ndarray], np.ndarray],
                       a: float = 1.0) -> float:
    """Generation-weighted characteristic ``sum_j a**G(j) chi(t - T_j)``.

    ``chi`` is applied to the array of ages; ``0**0`` counts as 1 so the root
    survives ``a = 0``.
    """
    ages = snap.ages
    vals = np.broadcast_to(np.asarray(chi(ages), dtype=float), ages.shape)
    weights = np.power(float(a), snap.generations.astype(float))
    return float(np.dot(weights, vals))


def generation_window(d: Disorder, t: float, x: Optional[float],
                      lc: Optional[LimitConstants] = None) -> float:
    """Generation cutoff ``lam s t + x s sqrt(lam t)`` (infinite when ``x`` is None)."""
    if x is None or x == math.inf:
        return math.inf
    if x == -math.inf:
        return -math.inf
    lam = (lc or malthusian(d)).lam
    return lam * d.s * t + x * d.s * math.sqrt(lam * t)


def _pair_power_sum(x: np.ndarray, y: np.ndarray, p: float, chunk: int = 4_000_000) -> float:
    """``sum_i sum_j (x_i + y_j)**p`` exactly."""
    if x.size == 0 or y.size == 0:
        return 0.0
    if p == 0:
        return float(x.size * y.size)
    if p > 0 and float(p).is_integer():
        q = int(p)
        total = 0.0
        for k in range(q + 1):
            total += math.comb(q, k) * float(np.sum(x ** k)) * float(np.sum(y ** (q - k)))
        return total
    if x.size > y.size:
        x, y = y, x
    rows = max(1, chunk // y.size)
    total = 0.0
    for i in range(0, x.size, rows):
        total += float(np.sum((x[i:i + rows, None] + y[None, :]) ** p))
    return total


def _check_horizons(snap1: CtbpSnapshot, snap2: CtbpSnapshot):
    if snap1.horizon != snap2.horizon:
        raise ValueError(f"snapshots at different horizons: {snap1.horizon} vs {snap2.horizon}")
    if snap1.d != snap2.d:
        raise ValueError("snapshots use different disorder exponents")


def two_vertex_sum(snap1: CtbpSnapshot, snap2: CtbpSnapshot, gen_window1: Optional[float] = None,
                   gen_window2: Optional[float] = None, lc: Optional[LimitConstants] = None) -> float:
    """Two-vertex characteristic ``sum_i sum_j (age_i + age_j)**(1/s - 1)``.

    A window ``x`` keeps only the individuals with generation
    ``<= lam s t + x s sqrt(lam t)`` on that side.
    """
    _check_horizons(snap1, snap2)
    d, t = snap1.d, snap1.horizon
    lc = lc or malthusian(d)
    c1 = generation_window(d, t, gen_window1, lc)
    c2 = generation_window(d, t, gen_window2, lc)
    x = snap1.ages[snap1.generations <= c1]
    y = snap2.ages[snap2.generations <= c2]
    return _pair_power_sum(x, y, d.p)


def two_vertex_window_sums(snap1: CtbpSnapshot, snap2: CtbpSnapshot,
                           windows: Sequence[tuple], lc: Optional[LimitConstants] = None,
                           chunk: int = 4_000_000) -> list:
    """:func:`two_vertex_sum` for several ``(x, y)`` windows in one pass over the pairs."""
    _check_horizons(snap1, snap2)
    d, t = snap1.d, snap1.horizon
    lc = lc or malthusian(d)
    p = d.p
    ax, ay = snap1.ages, snap2.ages
    gx, gy = snap1.generations, snap2.generations
    row_masks = [gx <= generation_window(d, t, wx, lc) for wx, _ in windows]
    col_masks = [gy <= generation_window(d, t, wy, lc) for _, wy in windows]
    if p == 0 or (p > 0 and float(p).is_integer()):
        return [_pair_power_sum(ax[rm], ay[cm], p) for rm, cm in zip(row_masks, col_masks)]
    cols = np.stack(col_masks, axis=1).astype(float)
    totals = np.zeros(len(windows))
    rows = max(1, chunk // max(1, ay.size))
    for i in range(0, ax.size, rows):
        block = (ax[i:i + rows, None] + ay[None, :]) ** p
        per_row = block @ cols
        for k, rm in enumerate(row_masks):
            totals[k] += float(per_row[rm[i:i + rows], k].sum())
    return totals.tolist()


def artificial_activation_diagnostic(k_sequence: Sequence[int], n: int, rng) -> int:
    """Count of Bernoulli(k_j / n) successes along a sequence of explored-set sizes."""
    count = 0
    for k in k_sequence:
        if rng.uniform() < k / n:
            count += 1
    return count
