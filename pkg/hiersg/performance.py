"""
Performance Module
Ordered parallel map and operation timing.

Per-image work (inference, validation, matching) is spread over a thread pool;
results always come back in input order so outputs are reproducible.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from functools import wraps
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


@dataclass
class PerformanceMetrics:
    """Performance metrics for monitoring."""
    operation: str
    duration_ms: float
    success: bool
    timestamp: str = ""


def timed(operation_name: Optional[str] = None):
    """Decorator to time function execution."""
    def decorator(func: Callable) -> Callable:
        @wraps(func)
        def wrapper(*args, **kwargs):
            op_name = operation_name or func.__name__
            start = time.perf_counter()
            success = True
            try:
                return func(*args, **kwargs)
            except Exception:
                success = False
                raise
            finally:
                _log_metrics(PerformanceMetrics(
                    operation=op_name,
                    duration_ms=(time.perf_counter() - start) * 1000,
                    success=success,
                    timestamp=datetime.now().isoformat(),
                ))
        return wrapper
    return decorator


def _log_metrics(metrics: PerformanceMetrics):
    logger.info(
        "[PERF] %s: %.2fms (%s)",
        metrics.operation, metrics.duration_ms, 'OK' if metrics.success else 'FAIL'
    )


class ParallelMap:
    """
    Apply a function to many items on a thread pool, keeping input order.

    With max_workers == 1 items run inline on the calling thread. The first
    exception raised by any item propagates to the caller after all
    submitted work has finished.
    """

    def __init__(self, max_workers: int = 1):
        if max_workers < 1:
            raise ValueError("max_workers must be at least 1")
        self.max_workers = max_workers

    def map(self, func: Callable[[T], R], items: Iterable[T],
            progress_callback: Optional[Callable[[int, int], None]] = None) -> List[R]:
        items = list(items)
        total = len(items)
        if self.max_workers == 1 or total <= 1:
            results = []
            for i, item in enumerate(items):
                results.append(func(item))
                if progress_callback:
                    progress_callback(i + 1, total)
            return results

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(func, item) for item in items]
            results = []
            for i, future in enumerate(futures):
                results.append(future.result())
                if progress_callback:
                    progress_callback(i + 1, total)
        return results
