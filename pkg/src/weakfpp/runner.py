"""Replicate pool: chunked over processes, results always in replicate order."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterator, Sequence

__all__ = ["map_replicates", "iter_replicates", "chunks"]


def chunks(count: int, jobs: int, per_chunk: int = 0) -> list:
    """Contiguous ``range`` blocks covering ``0..count-1``."""
    if count <= 0:
        return []
    size = per_chunk or max(1, -(-count // (4 * max(1, jobs))))
    return [range(i, min(i + size, count)) for i in range(0, count, size)]


def _run_block(fn: Callable, block: Sequence[int]) -> list:
    return [fn(r) for r in block]


def iter_replicates(fn: Callable[[int], object], count: int, jobs: int = 1,
                    per_chunk: int = 0) -> Iterator:
    """Yield ``fn(r)`` for ``r = 0..count-1`` in order.

    ``fn`` must be picklable (a module-level function or a ``partial`` of
    one) when ``jobs > 1``. Each replicate owns its random stream, so the
    output does not depend on ``jobs``.
    """
    if jobs <= 1:
        for r in range(count):
            yield fn(r)
        return
    blocks = chunks(count, jobs, per_chunk)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_block, fn, b) for b in blocks]
        for fut in futures:
            yield from fut.result()


def map_replicates(fn: Callable[[int], object], count: int, jobs: int = 1,
                   per_chunk: int = 0) -> list:
    return list(iter_replicates(fn, count, jobs, per_chunk))
