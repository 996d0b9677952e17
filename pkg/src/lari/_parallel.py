from __future__ import annotations

import contextlib
import os

import numba

WORKERS_ENV = "LARI_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        return max(1, int(raw))
    return numba.config.NUMBA_NUM_THREADS


@contextlib.contextmanager
def worker_threads(n: int | None):
    """Temporarily cap the number of numba threads (``None`` leaves it alone)."""
    if n is None:
        yield
        return
    prev = numba.get_num_threads()
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    try:
        yield
    finally:
        numba.set_num_threads(prev)
