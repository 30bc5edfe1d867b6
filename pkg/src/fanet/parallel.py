"""Order-preserving process-pool map used by batch feature extraction."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(jobs):
    if jobs is None or jobs == 0:
        return os.cpu_count() or 1
    if jobs < 0:
        raise ValueError("jobs must be nonnegative")
    return int(jobs)


def parallel_map(fn, items, jobs=1, chunksize=8):
    """``[fn(x) for x in items]``, spread over ``jobs`` worker processes.

    Results come back in input order, so output is independent of ``jobs``.
    ``fn`` must be picklable (a module-level function).
    """
    items = list(items)
    jobs = min(resolve_jobs(jobs), max(len(items), 1))
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
