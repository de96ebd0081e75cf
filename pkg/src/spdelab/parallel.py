"""Replica-chunk scheduling.

Chunks have a fixed size that does not depend on the thread count, and
results are collected in chunk order.  Every reduction therefore sees the
same arrays in the same order, whatever ``SPDELAB_THREADS`` is.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

DEFAULT_CHUNK = 250


def thread_count() -> int:
    raw = os.environ.get("SPDELAB_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def chunks(n_replicas: int, size: int = DEFAULT_CHUNK):
    return [range(s, min(s + size, n_replicas)) for s in range(0, n_replicas, size)]


def map_chunks(fn, n_replicas: int, size: int = DEFAULT_CHUNK, threads: int | None = None):
    """Apply ``fn(range)`` to every chunk; returns results in chunk order."""
    parts = chunks(n_replicas, size)
    threads = min(threads or thread_count(), len(parts)) or 1
    if threads == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parts))
