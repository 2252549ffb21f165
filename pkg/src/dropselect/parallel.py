"""Thread-count control.

Work is split over independent items whose results land in index-ordered
slots, so output bytes never depend on the thread count.  BLAS pools are
pinned to one thread at CLI startup for the same reason.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, n_items: int, threads: int = 1) -> list:
    """Evaluate fn(i) for i in 0..n_items-1, results ordered by index."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads == 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_items)))


def limit_blas_threads(n: int = 1):
    """Pin numpy's BLAS pools; returns the threadpoolctl controller."""
    import threadpoolctl

    return threadpoolctl.threadpool_limits(limits=n)
