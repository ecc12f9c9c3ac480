"""Reproducible random primitives.

Streams are keyed by ``(seed, stream_id)`` through a counter-based
bit generator, so replicate ``r`` of a run always sees the same draws no
matter which worker process executes it or in which order.
"""
from __future__ import annotations

import math
from collections import deque
from typing import Callable, Iterable, Optional

import numpy as np

from .limits import Disorder

__all__ = [
    "RngStream",
    "ScriptedStream",
    "OffspringStream",
    "next_offspring",
    "sample_residual_edge",
    "residual_edges",
    "invert_hazard",
    "sample_gumbel",
    "HazardError",
]

_BUFFER = 4096


class HazardError(RuntimeError):
    """Raised when a cumulative hazard is evaluated as non-monotone or root-finding fails."""


class RngStream:
    """Single-owner uniform stream for replicate ``stream_id`` under a master ``seed``.

    ``key`` appends further integers to the stream identity, separating
    experiments that share a seed (say the race and the oracle of one
    replicate).

    Scalar draws are served from a prefetched block, which keeps per-event
    overhead low in the event-driven simulators.
    """

    def __init__(self, seed: int, stream_id: int = 0, key: tuple = ()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.key = tuple(int(k) for k in key)
        if not all(0 <= v < 2**64 for v in (self.seed, self.stream_id) + self.key):
            raise ValueError("seed, stream_id and key entries must be 64-bit unsigned integers")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,) + self.key)
        self.generator = np.random.Generator(np.random.Philox(ss))
        self._buf: list = []
        self._pos = 0
        self.draws = 0

    def _refill(self):
        self._buf = self.generator.random(_BUFFER).tolist()
        self._pos = 0

    def uniform(self) -> float:
        """Uniform on [0, 1)."""
        if self._pos >= len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        self.draws += 1
        return u

    def uniforms(self, k: int) -> np.ndarray:
        out = np.empty(k)
        i = 0
        while i < k:
            if self._pos >= len(self._buf):
                self._refill()
            take = min(k - i, len(self._buf) - self._pos)
            out[i:i + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            i += take
        self.draws += k
        return out

    def exponential(self) -> float:
        """Unit exponential ``-log(1 - U)``."""
        return -math.log1p(-self.uniform())

    def exponentials(self, k: int) -> np.ndarray:
        return -np.log1p(-self.uniforms(k))

    def open_uniform(self) -> float:
        """Uniform on (0, 1)."""
        u = self.uniform()
        while u == 0.0:
            u = self.uniform()
        return u

    def poisson(self, mean: np.ndarray) -> np.ndarray:
        # bulk draws go straight to the generator; still a pure function of (seed, stream_id, call order)
        return self.generator.poisson(mean)


class ScriptedStream:
    """Stream that replays fixed values, for hand-checkable cases.

    ``exponentials`` feeds :meth:`exponential`; ``uniforms_`` feeds
    :meth:`uniform`. Once a script runs out, an optional fallback stream is
    used, otherwise ``IndexError`` is raised.
    """

    def __init__(self, exponentials: Iterable[float] = (), uniforms: Iterable[float] = (),
                 fallback: Optional[RngStream] = None):
        self._exp = deque(float(x) for x in exponentials)
        self._uni = deque(float(x) for x in uniforms)
        self.fallback = fallback

    def uniform(self) -> float:
        if self._uni:
            return self._uni.popleft()
        if self.fallback is None:
            raise IndexError("scripted uniforms exhausted")
        return self.fallback.uniform()

    open_uniform = uniform

    def exponential(self) -> float:
        if self._exp:
            return self._exp.popleft()
        if self.fallback is None:
            raise IndexError("scripted exponentials exhausted")
        return self.fallback.exponential()

    def uniforms(self, k: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(k)])

    def exponentials(self, k: int) -> np.ndarray:
        return np.array([self.exponential() for _ in range(k)])


class OffspringStream:
    """Lazy offspring point process ``L_i = (Y_1 + ... + Y_i)**s``.

    Only the running sum is stored, so the infinitely many points cost O(1)
    memory.
    """

    __slots__ = ("s", "cumulative_sum", "emitted_count", "rng")

    def __init__(self, d: Disorder, rng, cumulative_sum: float = 0.0, emitted_count: int = 0):
        self.s = d.s
        self.cumulative_sum = cumulative_sum
        self.emitted_count = emitted_count
        self.rng = rng

    def next(self) -> float:
        self.cumulative_sum += self.rng.exponential()
        self.emitted_count += 1
        return self.cumulative_sum ** self.s


def next_offspring(st: OffspringStream) -> float:
    """Advance ``st`` and return its next offspring time."""
    return st.next()


def sample_residual_edge(d: Disorder, r: float, scale: float, rng) -> float:
    """Draw the surplus ``X ~ (E**s - r | E**s > r)`` with ``E`` of mean ``scale``.

    Inverse transform: ``X = (r**(1/s) + scale * E')**s - r``.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    if not scale > 0:
        raise ValueError("scale must be positive")
    s = d.s
    return (r ** (1.0 / s) + scale * rng.exponential()) ** s - r


def residual_edges(d: Disorder, r: np.ndarray, scale: float, exps: np.ndarray) -> np.ndarray:
    """Vectorised :func:`sample_residual_edge` given the unit exponentials ``exps``.

    Returns the full conditioned weight ``E**s`` (not the surplus).
    """
    s = d.s
    return (np.power(r, 1.0 / s) + scale * exps) ** s


def invert_hazard(
    cumhaz: Callable[[float], float],
    t0: float,
    target: float,
    rate: Optional[Callable[[float], float]] = None,
    step: float = 1.0,
    max_expansions: int = 2000,
    rel_tol: float = 1e-12,
    max_iter: int = 400,
) -> Optional[float]:
    """Smallest ``t >= t0`` with ``cumhaz(t) == target``.

    ``cumhaz`` must be continuous and nondecreasing with ``cumhaz(t0) = 0``.
    A bracket is found by geometric expansion from ``t0 + step``. With a
    ``rate`` (the derivative) the root is polished by safeguarded Newton,
    otherwise by bisection. The search stops once the bracket is narrower
    than ``rel_tol * max(1, |t|)`` and the hazard is within
    ``rel_tol * max(1, target)`` of the target (or the bracket is down to
    adjacent floats). Returns ``None`` when ``cumhaz`` stays below
    ``target`` (the event never happens).
    """
    if not target > 0:
        raise ValueError("target must be positive")
    lo, f_lo = t0, 0.0
    width = step if step > 0 else 1.0
    hi = t0 + width
    f_hi = cumhaz(hi)
    expansions = 0
    while f_hi < target:
        if f_hi < f_lo:
            raise HazardError(f"cumulative hazard decreased between t={lo} and t={hi}")
        lo, f_lo = hi, f_hi
        width *= 2.0
        hi = t0 + width
        expansions += 1
        if expansions > max_expansions or not math.isfinite(hi):
            return None
        prev = f_hi
        f_hi = cumhaz(hi)
        if f_hi < prev:
            raise HazardError(f"cumulative hazard decreased between t={lo} and t={hi}")
        if f_hi == prev and expansions > 60:
            # flat for many doublings: a bounded hazard that never reaches target
            return None
    if f_hi == target:
        return hi

    haz_tol = rel_tol * max(1.0, target)
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        if hi - lo <= rel_tol * max(1.0, abs(hi)):
            # a steep hazard can still be off target; keep halving while the bracket can shrink
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi) or abs(cumhaz(mid) - target) <= haz_tol:
                break
            t = mid
        f = cumhaz(t) - target
        if f == 0.0:
            return t
        if f < 0:
            lo = t
        else:
            hi = t
        nxt = None
        if rate is not None:
            g = rate(t)
            if g > 0 and math.isfinite(g):
                cand = t - f / g
                if lo < cand < hi:
                    nxt = cand
                    if abs(cand - t) <= rel_tol * max(1.0, abs(t)):
                        return cand
        t = nxt if nxt is not None else 0.5 * (lo + hi)
    else:
        raise HazardError("hazard inversion did not converge")
    return 0.5 * (lo + hi)


def sample_gumbel(rng) -> float:
    """Standard (maximum-type) Gumbel draw ``-log(-log U)``."""
    return -math.log(-math.log(rng.open_uniform()))
