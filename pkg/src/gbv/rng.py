"""Counter-based random streams keyed by (seed, stream...)."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for the substream ``stream`` of ``seed``.

    Distinct stream tuples give independent generators, so replication ``r``
    of a run seeded with ``s`` can use ``make_rng(s, r)`` in any process.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def thread_count(threads=None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("GBV_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Sequence, threads=None) -> list:
    """Ordered map; uses worker processes when more than one thread is requested.

    ``fn`` and the items must be picklable in the multi-process case.
    """
    items = list(items)
    n = thread_count(threads)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * n))))
