"""Fixed-size worker pool with order-preserving map.

Tasks are pure functions of their inputs and results come back in input
order, so any worker count produces identical outputs. The simplex kernel
releases the GIL, which lets threads overlap on multi-core machines.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be at least 1")
        self.workers = int(workers)
        self._executor = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        items = list(items)
        if self._executor is None or len(items) <= 1:
            return [fn(it) for it in items]
        return list(self._executor.map(fn, items))

    @property
    def executor(self):
        return self._executor

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
