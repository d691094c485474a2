"""Deterministic fan-out of replicate work across processes.

Every replicate draws from its own SeedSequence child, and results are
reduced in replicate-index order, so the worker count never changes the
output bits.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

__all__ = ["replicate_seeds", "indexed_map"]


def replicate_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """One independent RNG substream per replicate index."""
    return np.random.SeedSequence(seed).spawn(n)


def indexed_map(fn, items, jobs: int = 1) -> list:
    """Apply ``fn`` over ``items``, preserving input order in the result.

    ``jobs`` > 1 distributes the calls over worker processes; ``fn`` and the
    items must then be picklable.  The result list is identical to the
    serial one because ordering is by index, not completion time.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
