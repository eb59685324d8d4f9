import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1, progress: Optional[str] = None) -> List[R]:
    """Map func over items, preserving input order; runs serially when workers <= 1."""
    items = list(items)
    iterator: Iterable[R]
    if workers <= 1 or len(items) <= 1:
        iterator = map(func, items)
        if progress:
            iterator = tqdm(iterator, total=len(items), desc=progress, leave=False)
        return list(iterator)
    logger.debug(f"Dispatching {len(items)} tasks to {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        iterator = pool.map(func, items)
        if progress:
            iterator = tqdm(iterator, total=len(items), desc=progress, leave=False)
        return list(iterator)
