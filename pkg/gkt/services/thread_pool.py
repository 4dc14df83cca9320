"""Process-wide worker pool for per-sample and per-trial fan-out."""
from __future__ import annotations

import atexit
import contextvars
import logging
import os
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar, Union

from gkt.config.constants import THREADS_ENV_VAR
from gkt.errors import ErrorReport

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_pool: Optional[ThreadPoolExecutor] = None
_pool_workers = 0
_pool_lock = threading.Lock()


def parse_worker_count(value: Optional[str], default: int) -> int:
    """Worker count from a GKT_THREADS-style string; bad or missing values give ``default``."""
    if not value:
        return default
    try:
        parsed = int(value)
    except ValueError:
        logger.warning("Invalid value for %s=%r. Using default %s.", THREADS_ENV_VAR, value, default)
        return default
    if parsed < 1:
        logger.warning("%s=%s is less than 1. Using default %s.", THREADS_ENV_VAR, parsed, default)
        return default
    return parsed


def worker_count() -> int:
    return parse_worker_count(os.environ.get(THREADS_ENV_VAR), max(1, os.cpu_count() or 4))


def shared_pool() -> ThreadPoolExecutor:
    """The pool, created on first use so GKT_THREADS may be set after import."""
    global _pool, _pool_workers
    with _pool_lock:
        if _pool is None:
            _pool_workers = worker_count()
            _pool = ThreadPoolExecutor(max_workers=_pool_workers, thread_name_prefix="gkt")
            logger.debug("Started shared pool with %d workers", _pool_workers)
        return _pool


def _shutdown_pool() -> None:
    if _pool is not None:
        _pool.shutdown(wait=False)


def _capture(fn: Callable[[T], R], item: T) -> Union[R, ErrorReport]:
    try:
        return fn(item)
    except Exception as exc:  # shipped back to the submitting thread
        return ErrorReport(exception=exc, traceback=traceback.format_exc())


def map_ordered(fn: Callable[[T], R], items: Iterable[T], *, capture_errors: bool = False) -> List:
    """Run ``fn`` over ``items`` on the shared pool, results in submission order.

    Each task runs in a copy of the caller's context, so active cost meters
    and scopes follow the work into the pool. With ``capture_errors`` a
    failing item yields an :class:`ErrorReport` instead of raising.
    """
    items = list(items)
    if not items:
        return []
    target = (lambda item: _capture(fn, item)) if capture_errors else fn
    if len(items) == 1 or worker_count() == 1:
        return [target(item) for item in items]
    pool = shared_pool()
    futures = [pool.submit(contextvars.copy_context().run, target, item) for item in items]
    return [future.result() for future in futures]


atexit.register(_shutdown_pool)

__all__ = ["map_ordered", "parse_worker_count", "shared_pool", "worker_count"]
