"""The fan-out helper must be order-stable and process-count invariant."""

import numpy as np
import pytest

from voldist.parallel import indexed_map, replicate_seeds


def draw_one(seed_seq):
    return float(np.random.default_rng(seed_seq).standard_normal())


def square(x):
    return x * x


def boom(x):
    raise ValueError(f"bad item {x}")


def test_indexed_map_preserves_order():
    assert indexed_map(square, range(7)) == [0, 1, 4, 9, 16, 25, 36]


def test_jobs_do_not_change_bits():
    seeds = replicate_seeds(20240817, 16)
    serial = indexed_map(draw_one, seeds, jobs=1)
    pooled = indexed_map(draw_one, seeds, jobs=4)
    assert serial == pooled


def test_replicate_seeds_are_distinct():
    seeds = replicate_seeds(5, 64)
    draws = [draw_one(s) for s in seeds]
    assert len(set(draws)) == 64


def test_worker_errors_propagate():
    with pytest.raises(ValueError, match="bad item"):
        indexed_map(boom, [1], jobs=1)
    with pytest.raises(ValueError, match="bad item"):
        indexed_map(boom, [1, 2], jobs=2)
