"""Data-parallel map over independent slices with an explicit worker count."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_num_threads = 1
_pool: ThreadPoolExecutor | None = None


def set_num_threads(n: int) -> None:
    global _num_threads, _pool
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    if n != _num_threads and _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None
    _num_threads = int(n)


def get_num_threads() -> int:
    return _num_threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """Apply ``fn`` to every item; results come back in input order.

    Items must be independent: each call writes only to its own outputs.
    """
    global _pool
    items = list(items)
    if _num_threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_num_threads)
    return list(_pool.map(fn, items))


def chunk_bounds(n: int, parts: int) -> List[tuple]:
    """Split ``range(n)`` into at most ``parts`` contiguous near-equal chunks."""
    parts = max(1, min(parts, n))
    base, extra = divmod(n, parts)
    out, start = [], 0
    for i in range(parts):
        stop = start + base + (1 if i < extra else 0)
        out.append((start, stop))
        start = stop
    return out
