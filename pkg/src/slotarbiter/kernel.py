"""Single-lane greedy allocation kernel.

The kernel is the unit of work every architecture schedules: demands are
coarse-sorted into LRU priority bins, gated by a relaxing AllowedMask, and
matched against per-node availability bitmaps with an AND + find-first-set
probe.  Two drain modes exist:

* PER_SLOT: a drained demand gets at most one timeslot, then parks in the
  extra bin of the slot it received.  Extra bins drain after the coarse bins
  and their survivors stay inside the kernel until the batch is finished.
  This deliberately keeps the known head-of-pipeline accumulation behaviour
  so the batch-mode improvement is measurable against it.
* BATCH: a drained demand greedily claims consecutive free slots up to the
  batch width, and any survivor flows out immediately; it never re-enters
  this kernel's bins.

Draining enabled coarse bins in ascending index order realizes the mask
relaxation schedule: a bin is never drained before every higher-priority bin
has been, which is exactly what stepping ``relax_mask`` to full over a tenure
produces.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Iterable, Iterator, List, Optional, Tuple

from .model import AdmittedBatch, AllocationMode, BatchBitmaps, Demand


def first_free_slot(src_row: int, dst_row: int) -> Optional[int]:
    """Lowest slot offset free in both rows, or None if none is."""
    joint = src_row & dst_row
    if joint == 0:
        return None
    return (joint & -joint).bit_length() - 1


def bin_index(last_alloc: int, current: int, num_bins: int = 32) -> int:
    """Coarse LRU bin for a demand: larger allocation gap, higher priority.

    bin = (num_bins - 1) - min(gap, num_bins - 1), so a just-allocated demand
    (gap 0) lands in the lowest-priority bin and anything starved for at
    least num_bins - 1 slots lands in bin 0.
    """
    gap = current - last_alloc
    if gap < 0:
        raise ValueError(f"last_alloc {last_alloc} is ahead of current {current}")
    top = num_bins - 1
    return top - min(gap, top)


def relax_mask(mask: int, steps_elapsed: int, tenure_steps: int, num_bins: int = 32) -> int:
    """Relax an AllowedMask: enable bins 0..floor(steps * bins / tenure).

    The result is always a superset of ``mask``, so the mask is monotone over
    a kernel's tenure on a batch.
    """
    if steps_elapsed < 0:
        raise ValueError("steps_elapsed must be >= 0")
    top = min(num_bins - 1, steps_elapsed * num_bins // max(tenure_steps, 1))
    return mask | ((1 << (top + 1)) - 1)


def full_mask(num_bins: int = 32) -> int:
    return (1 << num_bins) - 1


def initial_mask() -> int:
    """Fresh AllowedMask: only the top-priority bin is enabled."""
    return 1


class PriorityBins:
    """Coarse LRU bins plus the per-slot extra bins.

    Each live demand sits in exactly one bin queue; arrival order is kept
    within a bin (stable sort overall).  ``capacity`` bounds each coarse bin,
    None means unbounded.
    """

    def __init__(self, num_bins: int, batch_size: int, capacity: Optional[int] = None) -> None:
        self.num_bins = num_bins
        self.capacity = capacity
        self.coarse: List[Deque[Demand]] = [deque() for _ in range(num_bins)]
        self.extra: List[Deque[Demand]] = [deque() for _ in range(batch_size)]

    def insert(self, demand: Demand, current: int) -> bool:
        """File one demand; False signals bin overflow (caller keeps it)."""
        idx = bin_index(demand.last_alloc, current, self.num_bins)
        if self.capacity is not None and len(self.coarse[idx]) >= self.capacity:
            return False
        self.coarse[idx].append(demand)
        return True

    def is_empty(self) -> bool:
        return not any(self.coarse) and not any(self.extra)

    def live_demands(self) -> Iterator[Demand]:
        for q in self.coarse:
            yield from q
        for q in self.extra:
            yield from q


def sort_into_bins(demands: Iterable[Demand], current: int, bins: PriorityBins) -> List[Demand]:
    """File demands FIFO into their bins; returns the ones refused for space."""
    refused: List[Demand] = []
    for d in demands:
        if not bins.insert(d, current):
            refused.append(d)
    return refused


@dataclass(slots=True)
class AllocationRecord:
    """Per-demand outcome of one sweep, kept for post-hoc cancellation.

    ``residual`` is the surviving demand object (also present in the sweep's
    outflow in BATCH mode, or parked in the extra bins in PER_SLOT mode), or
    None when the demand was fully satisfied.
    """

    src: int
    dst: int
    offsets: List[int]
    prev_last_alloc: int
    residual: Optional[Demand]


@dataclass
class SweepResult:
    """What one drain sweep produced."""

    edges: List[Tuple[int, int, int]] = field(default_factory=list)
    outflow: List[Demand] = field(default_factory=list)
    records: List[AllocationRecord] = field(default_factory=list)
    drained: int = 0
    allocated_slots: int = 0
    spent: int = 0


def allocate_slots(
    bitmaps: BatchBitmaps, demand: Demand, base_slot: int, limit: Optional[int] = None
) -> Tuple[List[int], Optional[Demand]]:
    """Batch-style allocation of one demand against the bitmaps.

    Claims the lowest joint-free offsets, up to the demand's remaining count
    (and ``limit`` if given).  Returns the claimed offsets and the surviving
    demand, or None if it was fully satisfied.
    """
    joint = bitmaps.joint_free(demand.src, demand.dst)
    need = demand.remaining if limit is None else min(demand.remaining, limit)
    offsets: List[int] = []
    while joint and need:
        offset = (joint & -joint).bit_length() - 1
        bitmaps.claim(demand.src, demand.dst, offset)
        offsets.append(offset)
        joint &= joint - 1
        need -= 1
    if not offsets:
        return offsets, demand
    left = demand.remaining - len(offsets)
    if left == 0:
        return offsets, None
    return offsets, Demand(demand.src, demand.dst, left, base_slot + offsets[-1])


def allocate_batch(
    bins: PriorityBins,
    mask: int,
    bitmaps: BatchBitmaps,
    mode: AllocationMode,
    base_slot: int,
) -> SweepResult:
    """Drain the mask-enabled bins greedily against the batch bitmaps.

    Coarse bins drain in ascending index order (the relaxation order); in
    PER_SLOT mode the extra bins then drain in ascending slot order, letting
    a demand hop forward through them and collect further slots.  Demands
    that cannot be allocated flow out in drain order in BATCH mode; in
    PER_SLOT mode a demand that already holds a slot is retained in its extra
    bin instead of flowing out.
    """
    result = SweepResult()
    for idx in range(bins.num_bins):
        if not (mask >> idx) & 1:
            continue
        queue = bins.coarse[idx]
        while queue:
            demand = queue.popleft()
            result.drained += 1
            if mode is AllocationMode.BATCH:
                _allocate_batch_style(bitmaps, demand, base_slot, result)
            else:
                _allocate_one_slot(bins, bitmaps, demand, base_slot, result, from_extra=False)
    if mode is AllocationMode.PER_SLOT:
        _drain_extras(bins, bitmaps, base_slot, result)
    return result


def _allocate_batch_style(
    bitmaps: BatchBitmaps, demand: Demand, base_slot: int, result: SweepResult
) -> None:
    offsets, survivor = allocate_slots(bitmaps, demand, base_slot, bitmaps.batch_size)
    if not offsets:
        result.outflow.append(demand)
        return
    for offset in offsets:
        result.edges.append((offset, demand.src, demand.dst))
    result.allocated_slots += len(offsets)
    result.records.append(
        AllocationRecord(demand.src, demand.dst, offsets, demand.last_alloc, survivor)
    )
    if survivor is None:
        result.spent += 1
    else:
        result.outflow.append(survivor)


def _allocate_one_slot(
    bins: PriorityBins,
    bitmaps: BatchBitmaps,
    demand: Demand,
    base_slot: int,
    result: SweepResult,
    from_extra: bool,
) -> bool:
    """PER_SLOT visit: one slot then park in the extra bin of that slot.

    Returns True when a slot was claimed.  A demand that cannot allocate
    flows out if it came from a coarse bin, and is retained (re-parked) if it
    already holds slots from this batch.
    """
    offset = first_free_slot(bitmaps.src[demand.src], bitmaps.dst[demand.dst])
    if offset is None:
        if not from_extra:
            result.outflow.append(demand)
        return False
    bitmaps.claim(demand.src, demand.dst, offset)
    result.edges.append((offset, demand.src, demand.dst))
    result.allocated_slots += 1
    survivor: Optional[Demand] = None
    if demand.remaining > 1:
        survivor = Demand(demand.src, demand.dst, demand.remaining - 1, base_slot + offset)
        bins.extra[offset].append(survivor)
    else:
        result.spent += 1
    result.records.append(
        AllocationRecord(demand.src, demand.dst, [offset], demand.last_alloc, survivor)
    )
    return True


def _drain_extras(
    bins: PriorityBins, bitmaps: BatchBitmaps, base_slot: int, result: SweepResult
) -> None:
    # A re-allocated demand always lands at a strictly higher offset than the
    # extra bin it came from, so one ascending pass visits every hop.
    parked: List[Tuple[int, Demand]] = []
    for offset in range(len(bins.extra)):
        queue = bins.extra[offset]
        while queue:
            demand = queue.popleft()
            result.drained += 1
            if not _allocate_one_slot(bins, bitmaps, demand, base_slot, result, from_extra=True):
                parked.append((offset, demand))
    for offset, demand in parked:
        bins.extra[offset].append(demand)


class GreedyKernel:
    """Stateful allocation kernel for one execution lane.

    Owns the bins, the bitmaps and the admitted edges for the batch it is
    currently assigned.  ``reset`` rebinds it to a new batch; ``ingest`` files
    incoming demands; ``sweep`` drains everything currently enabled; and
    ``finish`` flushes the retained per-slot survivors and returns the
    AdmittedBatch.  Instances are single-owner and may move between lanes at
    batch boundaries only.
    """

    def __init__(
        self,
        num_nodes: int,
        batch_size: int,
        num_bins: int = 32,
        mode: AllocationMode = AllocationMode.BATCH,
        bin_capacity: Optional[int] = None,
    ) -> None:
        self.num_nodes = num_nodes
        self.batch_size = batch_size
        self.num_bins = num_bins
        self.mode = mode
        self.bin_capacity = bin_capacity
        self.base_slot = 0
        self.bins = PriorityBins(num_bins, batch_size, bin_capacity)
        self.bitmaps = BatchBitmaps(num_nodes, batch_size)
        self.edges: List[Tuple[int, int, int]] = []
        self.drained = 0
        self.allocated_slots = 0
        self.spent = 0

    def reset(self, base_slot: int) -> None:
        """Rebind to a fresh batch: new bitmaps, cleared admissions."""
        assert self.bins.is_empty(), "kernel reset with live demands in bins"
        self.base_slot = base_slot
        self.bitmaps = BatchBitmaps(self.num_nodes, self.batch_size)
        self.edges = []

    def ingest(self, demands: Iterable[Demand]) -> List[Demand]:
        """File demands into the coarse bins; returns any refused for space."""
        return sort_into_bins(demands, self.base_slot, self.bins)

    def sweep(self) -> SweepResult:
        """Drain all bins (fully relaxed mask) against the current batch."""
        result = allocate_batch(
            self.bins, full_mask(self.num_bins), self.bitmaps, self.mode, self.base_slot
        )
        self.edges.extend(result.edges)
        self.drained += result.drained
        self.allocated_slots += result.allocated_slots
        self.spent += result.spent
        return result

    def finish(self) -> Tuple[AdmittedBatch, List[Demand]]:
        """Close the batch: emit admissions and flush retained survivors."""
        leftovers: List[Demand] = []
        for queue in self.bins.extra:
            while queue:
                leftovers.append(queue.popleft())
        for queue in self.bins.coarse:
            while queue:  # only possible if finish is called without a sweep
                leftovers.append(queue.popleft())
        batch = AdmittedBatch(self.base_slot, self.batch_size, tuple(self.edges))
        return batch, leftovers

    def pending_slots(self) -> int:
        """Remaining slot count of every demand still inside the kernel."""
        return sum(d.remaining for d in self.bins.live_demands())
