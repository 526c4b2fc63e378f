"""Worker pool for chunked, order-preserving evaluation of compiled kernels."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")

THREADS_ENV = "CEMREG_THREADS"
CHUNK = 32


def worker_count() -> int:
    """Workers from ``CEMREG_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}")
    if n == 0:
        n = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    return max(1, n)


def chunk_bounds(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(fn: Callable[[int, int], T], n: int, chunk: int = CHUNK) -> Sequence[T]:
    """Evaluate ``fn(lo, hi)`` over fixed chunks of ``range(n)``; results in chunk order.

    Chunk boundaries do not depend on the worker count, and the kernels
    release the GIL, so threads give real parallelism without changing a bit
    of the output.
    """
    bounds = chunk_bounds(n, chunk)
    workers = min(worker_count(), len(bounds))
    if workers <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
