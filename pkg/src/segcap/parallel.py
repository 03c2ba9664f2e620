"""Order-preserving thread fan-out used by metric and decoding loops."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SEGCAP_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, threads: int = 1) -> list:
    """``list(map(fn, items))`` run on up to ``threads`` workers.

    Results come back in input order, so downstream reductions see the same
    sequence whatever the worker count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
