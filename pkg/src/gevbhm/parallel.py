"""Order-preserving task map; inline when a single worker is requested."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence


def parallel_map(fn: Callable, tasks: Sequence, threads: int = 1) -> list:
    """Apply ``fn`` to every task; results come back in task order.

    Each task must carry its own RNG seed so the result is independent of
    the worker count.
    """
    tasks = list(tasks)
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))
