"""Order-preserving map over worker processes (``THREADS`` caps the pool)."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally spread over processes.

    Results come back in input order, so the output never depends on the
    pool size.
    """
    items = list(items)
    n = default_threads() if threads is None else threads
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
