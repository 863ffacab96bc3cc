"""Deterministic data-parallel helpers.

Work is split into fixed-size chunks that do not depend on the worker
count, and BLAS is pinned to one thread while chunks run, so results are
bit-identical for any ``threads`` setting.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

_threads = 1


def set_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads() -> int:
    return _threads


@contextmanager
def threads(n: int):
    prev = _threads
    set_threads(n)
    try:
        yield
    finally:
        set_threads(prev)


def chunk_slices(n: int, chunk: int) -> list[slice]:
    return [slice(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn, n: int, chunk: int) -> list:
    """Apply ``fn(slice)`` over ``range(n)`` in chunks; results in chunk order."""
    slices = chunk_slices(n, chunk)
    with threadpool_limits(limits=1, user_api="blas"):
        if _threads == 1 or len(slices) <= 1:
            return [fn(sl) for sl in slices]
        with ThreadPoolExecutor(max_workers=_threads) as pool:
            return list(pool.map(fn, slices))
