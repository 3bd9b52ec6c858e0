"""Process pool for utterance-level work.

The worker count comes from ``SYNTHASR_WORKERS`` (default 1, meaning run in
the calling process). Results always come back in input order and every
task derives its randomness from its own seed, so the worker count never
changes the output.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "SYNTHASR_WORKERS"


def worker_count(default=1) -> int:
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def parallel_map(fn, items, workers=None, chunksize=1):
    """``[fn(x) for x in items]``, spread over a process pool when more than
    one worker is configured. ``fn`` must be picklable."""
    items = list(items)
    n = worker_count() if workers is None else workers
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


__all__ = ["WORKERS_ENV", "parallel_map", "worker_count"]
