"""Fixed-chunk thread parallelism.

Work is always split into the same chunks regardless of the worker count and
results are combined in chunk order, so the thread count never changes a
number. BLAS is pinned to one thread inside workers for the same reason.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Callable, Sequence

from threadpoolctl import threadpool_limits

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


@contextmanager
def threads(n: int):
    old = _threads
    set_threads(n)
    try:
        yield
    finally:
        set_threads(old)


def chunk_bounds(n: int, chunk: int) -> list[tuple[int, int]]:
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    """``[fn(i, item) for i, item in enumerate(items)]`` on a worker pool."""
    workers = _threads if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(i, item) for i, item in enumerate(items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i, item) for i, item in enumerate(items)]
        return [f.result() for f in futures]


@contextmanager
def single_blas():
    """Pin BLAS to one thread for the duration of a top-level run."""
    with threadpool_limits(limits=1, user_api="blas"):
        yield


def tree_sum(values: list):
    """Pairwise sum in a fixed order."""
    if not values:
        raise ValueError("nothing to sum")
    vals = list(values)
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
