"""Replicate-level thread pool.

The simulation kernels release the GIL, so threads give real parallelism.
Results come back in replicate order and every replicate owns its random
stream, so outputs do not depend on the thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["THREADS_ENV", "default_threads", "replicate_map"]

THREADS_ENV = "TORCOVER_THREADS"


def default_threads():
    """Thread count from ``TORCOVER_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def replicate_map(fn, n, threads=None):
    """``[fn(0), ..., fn(n - 1)]`` evaluated on ``threads`` workers."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or n < 2:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))
