"""Parallel allocation: every lane works the same batch, then reconcile.

Lanes hold private bitmaps and their own priority bins; incoming demands are
spread round-robin over per-lane conduits and stay in their lane for life.
Because the bitmaps are private, two lanes can admit edges that contend on a
source or destination; the reconciliation stage keeps the lowest-lane claim
for every contended (slot, role, node) and cancels the rest.  Cancelled slots
are restored to their demands, which re-enter the lane's pending set with the
last-allocation key rolled back, so nothing is ever lost.

All lanes advance to the next batch together: a barrier pair in the paced
driver, plain loop order in the deterministic one.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from .conduits import SpscQueue
from .kernel import AllocationRecord, GreedyKernel
from .model import (
    AdmittedBatch,
    AllocationMode,
    Config,
    Demand,
    Metrics,
    RunResult,
)
from .oracle import canonical_order
from .workload import Arrival

BatchSink = Callable[[AdmittedBatch], None]

Edge = Tuple[int, int, int]  # (slot_offset, src, dst)
CancelKey = Tuple[int, int, int, int]  # (lane_id, slot_offset, src, dst)


@dataclass
class LaneAdmission:
    """One lane's fragment for the batch being reconciled."""

    lane_id: int
    base_slot: int
    batch_size: int
    edges: List[Edge]
    records: List[AllocationRecord]


@dataclass
class ReconcileResult:
    final: AdmittedBatch
    cancelled_edges: Set[CancelKey]
    cancelled: List[Tuple[Demand, int]] = field(default_factory=list)


def reconcile(fragments: Sequence[LaneAdmission]) -> ReconcileResult:
    """Cancel contending claims: the lowest lane_id wins each (slot, role, node).

    An edge survives only if it wins both its source claim and its
    destination claim; a consistent fragment set therefore passes through
    unchanged.  Fragments must all target the same base slot.
    """
    if not fragments:
        raise ValueError("reconcile needs at least one fragment")
    base = fragments[0].base_slot
    width = fragments[0].batch_size
    if any(f.base_slot != base for f in fragments):
        raise ValueError("fragments target different base slots")

    src_winner: Dict[Tuple[int, int], int] = {}
    dst_winner: Dict[Tuple[int, int], int] = {}
    for frag in fragments:
        for offset, src, dst in frag.edges:
            key_s = (offset, src)
            key_d = (offset, dst)
            if key_s not in src_winner or frag.lane_id < src_winner[key_s]:
                src_winner[key_s] = frag.lane_id
            if key_d not in dst_winner or frag.lane_id < dst_winner[key_d]:
                dst_winner[key_d] = frag.lane_id

    final: List[Edge] = []
    cancelled: Set[CancelKey] = set()
    for frag in sorted(fragments, key=lambda f: f.lane_id):
        for offset, src, dst in frag.edges:
            if (
                src_winner[(offset, src)] == frag.lane_id
                and dst_winner[(offset, dst)] == frag.lane_id
            ):
                final.append((offset, src, dst))
            else:
                cancelled.add((frag.lane_id, offset, src, dst))

    return ReconcileResult(AdmittedBatch(base, width, tuple(final)), cancelled)


def apply_cancellations(
    lane_id: int,
    base_slot: int,
    records: Sequence[AllocationRecord],
    cancelled_edges: Set[CancelKey],
) -> Tuple[List[Demand], List[Tuple[Demand, int]], int, int]:
    """Rebuild a lane's surviving demands after reconciliation.

    For each allocation record the kept offsets decide the demand's rolled
    state: remaining grows by the revoked count, last_alloc points to the
    last kept slot (or rolls back to its pre-batch value when everything was
    revoked).  Returns (requeue, cancelled_pairs, revoked_slots, kept_slots).
    """
    requeue: List[Demand] = []
    cancelled_pairs: List[Tuple[Demand, int]] = []
    revoked_total = 0
    kept_total = 0
    for rec in records:
        kept = [o for o in rec.offsets if (lane_id, o, rec.src, rec.dst) not in cancelled_edges]
        revoked = len(rec.offsets) - len(kept)
        revoked_total += revoked
        kept_total += len(kept)
        residual = rec.residual.remaining if rec.residual is not None else 0
        remaining = residual + revoked
        if remaining == 0:
            continue
        last_alloc = base_slot + max(kept) if kept else rec.prev_last_alloc
        demand = Demand(rec.src, rec.dst, remaining, last_alloc)
        requeue.append(demand)
        if revoked:
            cancelled_pairs.append((demand, revoked))
    return requeue, cancelled_pairs, revoked_total, kept_total


class Lane:
    """One allocation lane: private kernel, private pending set.

    The lane defers its batch-mode survivors to ``absorb``: they are rebuilt
    from the allocation records once reconciliation has decided which slots
    actually stood, so a demand is never live twice.
    """

    def __init__(self, lane_id: int, cfg: Config) -> None:
        self.lane_id = lane_id
        self.cfg = cfg
        self.kernel = GreedyKernel(
            cfg.num_nodes, cfg.batch_size, cfg.num_priority_bins, AllocationMode.BATCH
        )
        self.pending: List[Demand] = []
        self.last_records: List[AllocationRecord] = []
        self.allocated_slots = 0
        self.drained = 0
        self.cancelled_slots = 0

    def allocate(self, base_slot: int, fresh: Sequence[Demand]) -> LaneAdmission:
        self.pending.extend(fresh)
        self.kernel.reset(base_slot)
        ordered = canonical_order(self.pending, base_slot, self.cfg.num_priority_bins)
        refused = self.kernel.ingest(ordered)
        assert not refused, "lane bins are unbounded"
        result = self.kernel.sweep()
        self.drained += result.drained
        survivors = {id(rec.residual) for rec in result.records if rec.residual is not None}
        self.pending = [d for d in result.outflow if id(d) not in survivors]
        self.last_records = result.records
        return LaneAdmission(self.lane_id, base_slot, self.cfg.batch_size, result.edges, result.records)

    def absorb(self, cancelled_edges: Set[CancelKey], base_slot: int) -> List[Tuple[Demand, int]]:
        requeue, cancelled_pairs, revoked, kept = apply_cancellations(
            self.lane_id, base_slot, self.last_records, cancelled_edges
        )
        self.pending.extend(requeue)
        self.allocated_slots += kept
        self.cancelled_slots += revoked
        self.last_records = []
        return cancelled_pairs

    def pending_slots(self) -> int:
        return sum(d.remaining for d in self.pending) + self.kernel.pending_slots()


def run_parallel_deterministic(
    cfg: Config,
    arrivals: Sequence[Arrival],
    max_batches: int = 100_000,
    sink: Optional[BatchSink] = None,
) -> RunResult:
    """Single-thread replay: lanes allocate one batch each round, then reconcile."""
    lanes = [Lane(i, cfg) for i in range(cfg.lanes)]
    batches: List[AdmittedBatch] = []
    collect = sink is None
    emit = batches.append if collect else sink

    ordered = sorted(range(len(arrivals)), key=lambda i: arrivals[i].arrival_ns)
    cursor = 0
    rr = 0
    metrics = Metrics()
    slot_ns = cfg.slot_ns
    base = 1

    for _ in range(max_batches):
        release_ns = (base - 1) * slot_ns
        fresh: List[List[Demand]] = [[] for _ in lanes]
        while cursor < len(ordered) and arrivals[ordered[cursor]].arrival_ns <= release_ns:
            a = arrivals[ordered[cursor]]
            demand = Demand(a.src, a.dst, a.size)
            fresh[rr % len(lanes)].append(demand)
            rr += 1
            metrics.demanded_slots += demand.remaining
            cursor += 1
        # nothing is ever dropped, so live work is exactly the running gap
        if metrics.demanded_slots == metrics.allocated_slots and cursor >= len(ordered):
            break

        fragments = [lane.allocate(base, fresh[i]) for i, lane in enumerate(lanes)]
        result = reconcile(fragments)
        for lane in lanes:
            result.cancelled.extend(lane.absorb(result.cancelled_edges, base))
        emit(result.final)
        metrics.allocated_slots += len(result.final.edges)
        base += cfg.batch_size

    metrics.cancelled_then_reissued = sum(lane.cancelled_slots for lane in lanes)
    metrics.pending_slots = sum(lane.pending_slots() for lane in lanes)
    metrics.lane_counters = {
        "drained": [lane.drained for lane in lanes],
        "allocated": [lane.allocated_slots for lane in lanes],
        "cancelled": [lane.cancelled_slots for lane in lanes],
    }
    return RunResult(metrics, batches)


#: Per-lane live-demand ceiling in paced mode; the conduit backs up (and the
#: generator reports overload) instead of the pending set growing unbounded.
_PENDING_HIGH_WATER = 8192


class _ParallelLaneThread(threading.Thread):
    def __init__(self, lane: Lane, machine: "ParallelMachine") -> None:
        super().__init__(name=f"par-lane-{lane.lane_id}", daemon=True)
        self.lane = lane
        self.machine = machine

    def run(self) -> None:
        m = self.machine
        lane = self.lane
        conduit = m.conduits[lane.lane_id]
        while not m.stop_event.is_set():
            fresh = []
            while len(lane.pending) + len(fresh) < _PENDING_HIGH_WATER:
                demand = conduit.try_take()
                if demand is None:
                    break
                fresh.append(demand)
            fragment = lane.allocate(m.base_slot, fresh)
            m.fragments[lane.lane_id] = fragment
            if not m.wait(m.submit_barrier):
                break
            # reconciler runs between the two barriers
            if not m.wait(m.resume_barrier):
                break
            lane.absorb(m.last_cancelled, fragment.base_slot)


class _ReconcilerThread(threading.Thread):
    def __init__(self, machine: "ParallelMachine") -> None:
        super().__init__(name="par-reconcile", daemon=True)
        self.machine = machine

    def run(self) -> None:
        m = self.machine
        while not m.stop_event.is_set():
            if not m.wait(m.submit_barrier):
                break
            result = reconcile([f for f in m.fragments if f is not None])
            m.last_cancelled = result.cancelled_edges
            with m.sink_lock:
                m.sink(result.final)
            m.emitted_batches += 1
            m.emitted_slots += len(result.final.edges)
            m.base_slot += m.cfg.batch_size
            if not m.wait(m.resume_barrier):
                break


class ParallelMachine:
    """Paced parallel driver: lane threads plus one reconciliation thread."""

    def __init__(self, cfg: Config, sink: BatchSink) -> None:
        self.cfg = cfg
        self.sink = sink
        self.sink_lock = threading.Lock()
        self.stop_event = threading.Event()
        self.conduits = [SpscQueue(cfg.mailbox_depth) for _ in range(cfg.lanes)]
        self.lanes = [Lane(i, cfg) for i in range(cfg.lanes)]
        self.fragments: List[Optional[LaneAdmission]] = [None] * cfg.lanes
        self.last_cancelled: Set[CancelKey] = set()
        self.base_slot = 1
        self.emitted_batches = 0
        self.emitted_slots = 0
        parties = cfg.lanes + 1
        self.submit_barrier = threading.Barrier(parties)
        self.resume_barrier = threading.Barrier(parties)
        self.threads: List[threading.Thread] = [
            _ParallelLaneThread(lane, self) for lane in self.lanes
        ]
        self.threads.append(_ReconcilerThread(self))
        self._rr = 0

    def wait(self, barrier: threading.Barrier) -> bool:
        """Barrier wait that honours shutdown; False means stop now."""
        try:
            barrier.wait()
            return True
        except threading.BrokenBarrierError:
            return False

    def push(self, demand: Demand) -> bool:
        ok = self.conduits[self._rr % self.cfg.lanes].try_put(demand)
        if ok:
            self._rr += 1
        return ok

    def allocated_slots(self) -> int:
        return sum(lane.allocated_slots for lane in self.lanes)

    def start(self) -> None:
        for t in self.threads:
            t.start()

    def stop_and_join(self) -> None:
        self.stop_event.set()
        self.submit_barrier.abort()
        self.resume_barrier.abort()
        for t in self.threads:
            t.join()

    def pending_slots(self) -> int:
        pending = sum(lane.pending_slots() for lane in self.lanes)
        for conduit in self.conduits:
            pending += sum(d.remaining for d in conduit.drain())
        # a batch cut off between allocate and absorb leaves its records
        # unresolved: those slots fall back to pending work
        for lane in self.lanes:
            for rec in lane.last_records:
                pending += len(rec.offsets)
                if rec.residual is not None:
                    pending += rec.residual.remaining
        return pending

    def lane_counters(self) -> dict:
        return {
            "drained": [lane.drained for lane in self.lanes],
            "allocated": [lane.allocated_slots for lane in self.lanes],
            "cancelled": [lane.cancelled_slots for lane in self.lanes],
            "emitted_batches": self.emitted_batches,
        }
