"""Small shared utilities."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_cap():
    """Worker-parallelism limit: NACAP_THREADS, default available cores."""
    raw = os.environ.get("NACAP_THREADS", "").strip()
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError("NACAP_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items, max_workers=None):
    """Order-preserving map over items with at most max_workers threads.

    Work items must be independent and pure so the worker count can never
    change results.
    """
    items = list(items)
    workers = max_workers or thread_cap()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
