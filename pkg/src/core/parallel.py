"""Ordered fan-out over a thread pool."""

from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from src.core.config import get_settings

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(
    fn: Callable[[T], R], items: Iterable[T], max_workers: int | None = None
) -> list[R]:
    """Apply ``fn`` to every item, returning results in input order.

    Runs inline when only one worker is available so single-threaded runs
    avoid the executor entirely.
    """
    items = list(items)
    workers = max_workers or get_settings().worker_count
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))
