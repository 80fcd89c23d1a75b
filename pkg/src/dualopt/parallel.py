"""Bounded worker-pool helper with deterministic result assembly."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(fn: Callable[[T], R], items: Iterable[T], *, workers: int | None = None) -> list[R]:
    """Apply ``fn`` to every item on a thread pool, results in input order.

    ``workers=1`` (or a single item) runs serially. The first exception
    raised by any task propagates; no partial results are returned.
    """
    items = list(items)
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
