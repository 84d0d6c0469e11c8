"""
In-process worker pool and keyed random streams

Batches are simulated by threads; numpy/scipy release the GIL in the
heavy linear algebra. Random streams are keyed by (seed, keys...) so
results never depend on scheduling order or worker count.
"""

import os
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(requested: int | None, n_tasks: int) -> int:
    """
    Number of threads for a stage: min(tasks, requested or cpu count)

    Args:
        requested: Explicit worker count, or None for all cores
        n_tasks: Number of independent tasks

    Returns:
        Worker count >= 1
    """
    available = os.cpu_count() or 1
    wanted = requested if requested and requested > 0 else available
    return max(1, min(wanted, n_tasks))


def parallel_map(func: Callable[[T], R], items: Sequence[T], n_jobs: int | None = None) -> list[R]:
    """
    Apply func to every item on a thread pool; output order matches input order
    """
    items = list(items)
    if not items:
        return []
    workers = resolve_workers(n_jobs, len(items))
    if workers == 1:
        return [func(item) for item in items]
    return Parallel(n_jobs=workers, prefer="threads")(delayed(func)(item) for item in items)


def parallel_iter(func: Callable[[T], R], items: Iterable[T], n_jobs: int | None = None):
    """Like parallel_map but yields results in order as they complete"""
    items = list(items)
    workers = resolve_workers(n_jobs, max(len(items), 1))
    if workers == 1:
        for item in items:
            yield func(item)
        return
    yield from Parallel(n_jobs=workers, prefer="threads", return_as="generator")(
        delayed(func)(item) for item in items
    )


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by seed and integer keys (e.g. batch_id)"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def derive_seed(seed: int, *keys: int) -> int:
    """Integer seed for APIs that take one, keyed like rng_stream"""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1)[0])
