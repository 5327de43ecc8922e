"""
Slice Worker Pool
Runs independent per-slice tasks (one per alpha node) on a thread pool.

numpy / scipy release the GIL inside the heavy kernels, so threads are enough.
"""
import concurrent.futures
from typing import Callable, List, Optional, TypeVar

from app.config import settings


T = TypeVar("T")


def resolve_threads(threads: Optional[int] = None) -> int:
    return max(1, int(threads or settings.threads))


def map_slices(fn: Callable[[int], T], n_slices: int, threads: Optional[int] = None) -> List[T]:
    """Call fn(i) for i in range(n_slices); results keep slice order."""
    workers = min(resolve_threads(threads), n_slices)
    if workers <= 1:
        return [fn(i) for i in range(n_slices)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, i) for i in range(n_slices)]
        return [f.result() for f in futures]
