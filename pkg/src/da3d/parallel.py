"""Optional thread parallelism for per-bag work, capped by DA3D_THREADS."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    """Worker cap from the DA3D_THREADS env var; defaults to 1 (serial)."""
    raw = os.environ.get("DA3D_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        value = int(raw)
    except ValueError as err:
        raise ValueError(f"DA3D_THREADS must be an integer, got {raw!r}") from err
    return max(1, value)


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map `fn` over `items`, preserving order regardless of worker count.

    Results are merged in submission order, so output is identical for
    any DA3D_THREADS setting.
    """
    materialized: Sequence[T] = list(items)
    workers = worker_count()
    if workers <= 1 or len(materialized) <= 1:
        return [fn(item) for item in materialized]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, materialized))
