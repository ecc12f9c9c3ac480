"""Exact first-passage percolation on the complete graph with ``E**s`` weights.

Time is measured in the rescaled units where each edge weight is
``(n-1)**s E**s``, i.e. an exponential with mean ``n - 1`` raised to the
power ``s``; conversion to the original units happens once, in the outcome.

The shortest-weight graph grows by a competing-risks race. With ``k``
explored vertices and ``U = n - k`` unexplored ones, every explored ``v``
reaches each unexplored vertex with cumulative hazard
``(t - T_v)**(1/s) / (n - 1)``; every pair ``(i, j)`` straddling the two
flow clusters closes with cumulative hazard
``((t - T_i) + (t - T_j))**(1/s) / (n - 1)``, flow running at rate 2 on it.

Three engines sample this race exactly:

``split``
    Growth is the first point of the total growth hazard, found by
    :func:`~weakfpp.sampling.invert_hazard`. Each straddling pair gets its own
    closed-form collision clock when it forms; the collision is the
    earliest clock. Cost per event is O(k).
``stream``
    Growth by thinning: every explored vertex emits the branching-process
    offspring points ``T_v + Gamma_i**s`` (``Gamma`` a unit Poisson process,
    which dominates its ``n - 1`` edges), and each point is kept with
    probability ``U / (n - 1)``. Collisions as in ``split``. O(log k) per
    event; the default.
``joint``
    The textbook form: one inversion of growth + collision hazard, then the
    event type and the pair are picked in proportion to the rates. Cost per
    event is O(|S1| |S2|); used as a cross-check at small ``n``.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .limits import Disorder, malthusian
from .sampling import HazardError, invert_hazard

__all__ = [
    "TwoSourceOutcome",
    "SingleSourceOutcome",
    "ClusterState",
    "run_two_source",
    "run_single_source",
    "dijkstra_oracle",
    "dijkstra_from_weights",
    "OUTCOME_COLUMNS",
    "outcome_row",
    "S_RANGE",
    "ORACLE_MAX_N",
]

S_RANGE = (0.05, 20.0)
ORACLE_MAX_N = 2000

OUTCOME_COLUMNS = ("n", "s", "seed", "replicate", "T12", "W_n", "C", "recentered_weight",
                   "H_n", "G1", "G2", "events", "activation_diag")


@dataclass
class TwoSourceOutcome:
    n: int
    s: float
    T12: float
    cost_rescaled: float
    cost_original: float
    recentered_weight: float
    hopcount: int
    G1: int
    G2: int
    events: int
    activation_diag: int
    activation_times: list = field(default_factory=list, repr=False)


@dataclass
class ClusterState:
    """Explored vertices of one flow cluster, in exploration order."""

    cluster_tag: int
    labels: np.ndarray
    birth_times: np.ndarray
    generations: np.ndarray
    parents: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass
class SingleSourceOutcome:
    n: int
    s: float
    cost_rescaled: float
    cost_original: float
    hopcount: int
    cluster: ClusterState
    activation_diag: int
    events: int


def _check_inputs(n: int, d: Disorder):
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n!r}")
    lo, hi = S_RANGE
    if not lo <= d.s <= hi:
        raise ValueError(f"s={d.s} outside the supported range [{lo}, {hi}]")


def _outcome(n, d, lc, T12, g1, g2, events, diag, diag_times) -> TwoSourceOutcome:
    w = 2.0 * T12
    c = w / (n - 1) ** d.s
    return TwoSourceOutcome(
        n=int(n), s=d.s, T12=T12, cost_rescaled=w, cost_original=c,
        recentered_weight=n ** d.s * c - math.log(n) / lc.lam,
        hopcount=int(g1 + g2 + 1), G1=int(g1), G2=int(g2), events=events,
        activation_diag=diag, activation_times=diag_times,
    )


def _pick_weighted(weights: np.ndarray, u: float) -> int:
    if np.isinf(weights).any():
        # s > 1 and a vertex born at the event time: its rate dominates
        cand = np.flatnonzero(np.isinf(weights))
        return int(cand[min(int(u * cand.size), cand.size - 1)])
    cum = np.cumsum(weights)
    i = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(i, weights.size - 1)


class _Explored:
    """Explored set: birth times, generations, cluster tags, parents, labels."""

    def __init__(self, n: int):
        self.T = np.zeros(n)
        self.G = np.zeros(n, dtype=np.int64)
        self.C = np.zeros(n, dtype=np.int8)
        self.P = np.full(n, -1, dtype=np.int64)
        self.L = np.zeros(n, dtype=np.int64)
        self.k = 0

    def add(self, t, g, c, parent, label) -> int:
        i = self.k
        self.T[i], self.G[i], self.C[i], self.P[i], self.L[i] = t, g, c, parent, label
        self.k += 1
        return i


class _Unexplored:
    """Swap-remove array of unexplored labels for O(1) uniform choice."""

    def __init__(self, labels):
        self.labels = list(labels)

    def __len__(self):
        return len(self.labels)

    def pop_uniform(self, u: float) -> int:
        j = min(int(u * len(self.labels)), len(self.labels) - 1)
        lab = self.labels[j]
        self.labels[j] = self.labels[-1]
        self.labels.pop()
        return lab


def _next_growth(ex: _Explored, U: int, n: int, inv_s: float, t0: float, e: float,
                 step: float) -> float:
    """Time of the next growth event given a unit exponential ``e``."""
    Tk = ex.T[:ex.k]
    base = float(np.sum((t0 - Tk) ** inv_s))
    target = e * (n - 1) / U
    p = inv_s - 1.0

    def cumhaz(t):
        return float(np.sum((t - Tk) ** inv_s)) - base

    def rate(t):
        return inv_s * float(np.sum((t - Tk) ** p))

    t = invert_hazard(cumhaz, t0, target, rate=rate, step=step)
    if t is None:
        raise HazardError("growth hazard is unbounded yet inversion found no event")
    return t


def run_two_source(n: int, d: Disorder, rng, method: str = "stream",
                   debug: bool = False) -> TwoSourceOutcome:
    """Simultaneous flow from vertices 1 and 2 until the clusters collide.

    Returns the collision time, the optimal path weight in both unit systems,
    the hopcount ``G1 + G2 + 1`` and the artificial-activation counter.
    With ``debug`` the hazards are recomputed from scratch at every event and
    compared against the incrementally maintained ones.
    """
    _check_inputs(n, d)
    if method == "split":
        return _two_source_split(n, d, rng, debug)
    if method == "stream":
        return _two_source_stream(n, d, rng)
    if method == "joint":
        return _two_source_joint(n, d, rng, debug)
    raise ValueError(f"unknown method {method!r}")


def _two_source_split(n, d, rng, debug):
    s, inv_s = d.s, 1.0 / d.s
    lc = malthusian(d)
    ex = _Explored(n)
    ex.add(0.0, 0, 1, -1, 1)
    ex.add(0.0, 0, 2, -1, 2)
    members = {1: [0], 2: [1]}
    free = _Unexplored(range(3, n + 1))
    nm1 = n - 1

    # the direct edge 1-2 is the first straddling pair
    best_t = (nm1 * rng.exponential()) ** s / 2.0
    best_pair = (0, 1)
    t0, events, diag, diag_times = 0.0, 0, 0, []

    while True:
        U = len(free)
        if U > 0:
            step = lc.beta1 / math.sqrt(ex.k)
            t_grow = _next_growth(ex, U, n, inv_s, t0, rng.exponential(), step)
        else:
            t_grow = math.inf
        if best_t <= t_grow:
            break

        k = ex.k
        ages = t_grow - ex.T[:k]
        v = _pick_weighted(ages ** (inv_s - 1.0), rng.uniform())
        if debug:
            _debug_growth_rate(ex, t_grow, U, n, inv_s, ages)
        if rng.uniform() < k / n:
            diag += 1
            diag_times.append(t_grow)
        label = free.pop_uniform(rng.uniform())
        tag = int(ex.C[v])
        i = ex.add(t_grow, ex.G[v] + 1, tag, v, label)
        members[tag].append(i)
        events += 1

        other = np.asarray(members[3 - tag])
        # edge (other, new) has survived a flow of length t_grow - T_other
        r = t_grow - ex.T[other]
        w = (r ** inv_s + nm1 * rng.exponentials(other.size)) ** s
        cand = 0.5 * (t_grow + ex.T[other] + w)
        m = int(np.argmin(cand))
        if cand[m] < best_t:
            best_t = float(cand[m])
            best_pair = (int(other[m]), i) if tag == 2 else (i, int(other[m]))
        t0 = t_grow

    i1, i2 = best_pair
    return _outcome(n, d, lc, best_t, ex.G[i1], ex.G[i2], events, diag, diag_times)


def _two_source_stream(n, d, rng):
    s, inv_s = d.s, 1.0 / d.s
    lc = malthusian(d)
    ex = _Explored(n)
    ex.add(0.0, 0, 1, -1, 1)
    ex.add(0.0, 0, 2, -1, 2)
    members = {1: [0], 2: [1]}
    free = _Unexplored(range(3, n + 1))
    nm1 = n - 1
    exp, uni = rng.exponential, rng.uniform
    push, pop = heapq.heappush, heapq.heappop

    best_t = (nm1 * exp()) ** s / 2.0
    best_pair = (0, 1)
    cursor = [exp(), exp()]
    heap = [(cursor[0] ** s, 0), (cursor[1] ** s, 1)]
    heapq.heapify(heap)
    events, diag, diag_times = 0, 0, []

    # heap: next dominating offspring point of every explored vertex
    while True:
        U = len(free)
        tau = heap[0][0] if U > 0 else math.inf
        if best_t <= tau:
            break
        _, v = pop(heap)
        cursor[v] += exp()
        push(heap, (ex.T[v] + cursor[v] ** s, v))
        if uni() * nm1 >= U:
            continue  # point lands on an already explored vertex
        k = ex.k
        if uni() < k / n:
            diag += 1
            diag_times.append(tau)
        label = free.pop_uniform(uni())
        tag = int(ex.C[v])
        i = ex.add(tau, ex.G[v] + 1, tag, v, label)
        members[tag].append(i)
        events += 1
        g = exp()
        cursor.append(g)
        push(heap, (tau + g ** s, i))

        other = np.asarray(members[3 - tag])
        r = tau - ex.T[other]
        w = (r ** inv_s + nm1 * rng.exponentials(other.size)) ** s
        cand = 0.5 * (tau + ex.T[other] + w)
        m = int(np.argmin(cand))
        if cand[m] < best_t:
            best_t = float(cand[m])
            best_pair = (int(other[m]), i) if tag == 2 else (i, int(other[m]))

    i1, i2 = best_pair
    return _outcome(n, d, lc, best_t, ex.G[i1], ex.G[i2], events, diag, diag_times)


def _debug_growth_rate(ex, t, U, n, inv_s, ages):
    fast = U / (n - 1) * inv_s * float(np.sum(ages ** (inv_s - 1.0)))
    slow = 0.0
    for j in range(ex.k):
        slow += (t - ex.T[j]) ** (inv_s - 1.0)
    slow *= U / (n - 1) * inv_s
    if not math.isclose(fast, slow, rel_tol=1e-9):
        raise AssertionError(f"growth rate bookkeeping mismatch: {fast} vs {slow}")


def _two_source_joint(n, d, rng, debug):
    s, inv_s = d.s, 1.0 / d.s
    p = inv_s - 1.0
    lc = malthusian(d)
    ex = _Explored(n)
    ex.add(0.0, 0, 1, -1, 1)
    ex.add(0.0, 0, 2, -1, 2)
    members = {1: [0], 2: [1]}
    free = _Unexplored(range(3, n + 1))
    nm1 = n - 1
    # straddling pairs, kept incrementally: sum of birth times and member indices
    sig = np.zeros(1)
    pi = np.zeros(1, dtype=np.int64)
    pj = np.ones(1, dtype=np.int64)
    t0, events, diag, diag_times = 0.0, 0, 0, []

    while True:
        U = len(free)
        Tk = ex.T[:ex.k]
        base_g = float(np.sum((t0 - Tk) ** inv_s))
        base_c = float(np.sum((2.0 * t0 - sig) ** inv_s))

        def cumhaz(t):
            h = float(np.sum((2.0 * t - sig) ** inv_s)) - base_c
            if U:
                h += U * (float(np.sum((t - Tk) ** inv_s)) - base_g)
            return h / nm1

        def rates(t):
            c = 2.0 * inv_s / nm1 * float(np.sum((2.0 * t - sig) ** p))
            g = U * inv_s / nm1 * float(np.sum((t - Tk) ** p)) if U else 0.0
            return g, c

        step = lc.beta1 / math.sqrt(ex.k)
        t_ev = invert_hazard(cumhaz, t0, rng.exponential(), rate=lambda t: sum(rates(t)), step=step)
        if t_ev is None:
            raise HazardError("race hazard inversion found no event")
        g, c = rates(t_ev)
        if debug:
            _debug_joint_rates(ex, members, t_ev, U, n, inv_s, g, c)
        if not (g + c > 0):
            raise HazardError(f"zero total rate at t={t_ev}")
        if rng.uniform() * (g + c) >= g:
            m = _pick_weighted((2.0 * t_ev - sig) ** p, rng.uniform())
            i1, i2 = int(pi[m]), int(pj[m])
            return _outcome(n, d, lc, t_ev, ex.G[i1], ex.G[i2], events, diag, diag_times)

        k = ex.k
        v = _pick_weighted((t_ev - Tk) ** p, rng.uniform())
        if rng.uniform() < k / n:
            diag += 1
            diag_times.append(t_ev)
        label = free.pop_uniform(rng.uniform())
        tag = int(ex.C[v])
        i = ex.add(t_ev, ex.G[v] + 1, tag, v, label)
        members[tag].append(i)
        events += 1
        other = np.asarray(members[3 - tag])
        sig = np.concatenate([sig, t_ev + ex.T[other]])
        if tag == 1:
            pi = np.concatenate([pi, np.full(other.size, i)])
            pj = np.concatenate([pj, other])
        else:
            pi = np.concatenate([pi, other])
            pj = np.concatenate([pj, np.full(other.size, i)])
        t0 = t_ev


def _debug_joint_rates(ex, members, t, U, n, inv_s, g, c):
    p = inv_s - 1.0
    g_ref = sum((t - ex.T[j]) ** p for j in range(ex.k)) * U * inv_s / (n - 1)
    c_ref = 0.0
    for i in members[1]:
        for j in members[2]:
            c_ref += ((t - ex.T[i]) + (t - ex.T[j])) ** p
    c_ref *= 2.0 * inv_s / (n - 1)
    if not (math.isclose(g, g_ref, rel_tol=1e-9, abs_tol=1e-300)
            and math.isclose(c, c_ref, rel_tol=1e-9, abs_tol=1e-300)):
        raise AssertionError(f"hazard bookkeeping mismatch: g={g} vs {g_ref}, c={c} vs {c_ref}")


def run_single_source(n: int, d: Disorder, rng, target: int = 2) -> SingleSourceOutcome:
    """Grow the flow from vertex 1 alone until ``target`` is explored.

    The path weight is the discovery time of the target and the hopcount is
    its generation.
    """
    _check_inputs(n, d)
    if not (2 <= target <= n):
        raise ValueError(f"target must be a vertex label in 2..{n} other than the source")
    s, inv_s = d.s, 1.0 / d.s
    lc = malthusian(d)
    ex = _Explored(n)
    ex.add(0.0, 0, 1, -1, 1)
    free = _Unexplored(range(2, n + 1))
    t0, events, diag = 0.0, 0, 0
    while True:
        U = len(free)
        step = lc.beta1 / math.sqrt(ex.k)
        t = _next_growth(ex, U, n, inv_s, t0, rng.exponential(), step)
        k = ex.k
        v = _pick_weighted((t - ex.T[:k]) ** (inv_s - 1.0), rng.uniform())
        if rng.uniform() < k / n:
            diag += 1
        label = free.pop_uniform(rng.uniform())
        i = ex.add(t, ex.G[v] + 1, 1, v, label)
        events += 1
        t0 = t
        if label == target:
            k = ex.k
            cluster = ClusterState(1, ex.L[:k].copy(), ex.T[:k].copy(), ex.G[:k].copy(),
                                   ex.P[:k].copy())
            return SingleSourceOutcome(n=n, s=s, cost_rescaled=t, cost_original=t / (n - 1) ** s,
                                       hopcount=int(ex.G[i]), cluster=cluster,
                                       activation_diag=diag, events=events)


def dijkstra_from_weights(w: np.ndarray, source: int = 0, target: int = 1):
    """Dense Dijkstra on a symmetric weight matrix; returns ``(cost, hopcount)``."""
    n = w.shape[0]
    dist = np.full(n, np.inf)
    hops = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[source] = 0.0
    for _ in range(n):
        masked = np.where(done, np.inf, dist)
        u = int(np.argmin(masked))
        if u == target:
            return float(dist[u]), int(hops[u])
        done[u] = True
        cand = dist[u] + w[u]
        better = (cand < dist) & ~done
        dist[better] = cand[better]
        hops[better] = hops[u] + 1
    raise RuntimeError("target unreachable")


def dijkstra_oracle(n: int, d: Disorder, rng):
    """Brute force: sample every edge weight ``E**s`` and run Dijkstra from 1 to 2.

    Returns ``(cost_original, hopcount)``.
    """
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    if n > ORACLE_MAX_N:
        raise MemoryError(f"oracle materialises n(n-1)/2 weights; n={n} > {ORACLE_MAX_N}")
    iu = np.triu_indices(n, 1)
    w = np.zeros((n, n))
    w[iu] = rng.exponentials(iu[0].size) ** d.s
    w = w + w.T
    np.fill_diagonal(w, np.inf)
    return dijkstra_from_weights(w)


def outcome_row(o: TwoSourceOutcome, seed: int, replicate: int) -> list:
    """CSV fields in :data:`OUTCOME_COLUMNS` order, floats at 17 significant digits."""
    f = lambda x: format(float(x), ".17g")
    return [str(o.n), f(o.s), str(seed), str(replicate), f(o.T12), f(o.cost_rescaled),
            f(o.cost_original), f(o.recentered_weight), str(o.hopcount), str(o.G1), str(o.G2),
            str(o.events), str(o.activation_diag)]
