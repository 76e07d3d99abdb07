"""Shared helpers for the test suite."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np
import pytest

from slotarbiter import Demand
from slotarbiter.workload import Arrival


def edges_of(batches) -> List[Tuple[int, int, int]]:
    """Flatten batches to a sorted list of (absolute_slot, src, dst)."""
    return sorted(edge for batch in batches for edge in batch.absolute_edges())


def make_trace(
    seed: int,
    count: int,
    num_nodes: int,
    mean_interarrival_ns: float = 1500.0,
    unique_pairs: bool = True,
    size_mean: float = 10.0,
) -> List[Arrival]:
    """Seeded random trace; unique (src, dst) pairs unless told otherwise."""
    rng = np.random.default_rng(seed)
    seen = set()
    trace: List[Arrival] = []
    t = 0.0
    while len(trace) < count:
        src = int(rng.integers(0, num_nodes))
        dst = int(rng.integers(0, num_nodes))
        if src == dst:
            continue
        if unique_pairs:
            if (src, dst) in seen:
                continue
            seen.add((src, dst))
        t += float(rng.exponential(mean_interarrival_ns))
        size = max(1, int(round(rng.normal(size_mean, 3.0))))
        trace.append(Arrival(int(t), src, dst, size))
    return trace


@pytest.fixture
def four_node_trace() -> List[Arrival]:
    """The four-node matching example: order matters, batch width 1."""
    return [
        Arrival(0, 1, 3, 1),
        Arrival(0, 4, 2, 1),
        Arrival(0, 2, 3, 1),
        Arrival(0, 2, 1, 1),
        Arrival(0, 3, 4, 1),
    ]


@pytest.fixture
def four_node_demands(four_node_trace) -> List[Demand]:
    return [Demand(a.src, a.dst, a.size) for a in four_node_trace]


FOUR_NODE_ADMITTED = {(1, 3), (4, 2), (2, 1), (3, 4)}
FOUR_NODE_REMAINDER = (2, 3)
