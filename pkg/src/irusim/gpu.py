"""SIMT memory-path model: warp coalescing, L1/L2 caches, NoC, MSHRs and a
simplified deterministic cycle engine.

Timing is an explicit event model with fixed latencies, not a pipeline
simulation. Each L1 (per SM) and each L2 slice (per memory partition)
services one transaction per cycle; everything else is a latency constant
from LatencyTable. Warps are generators that yield WarpAccess objects and
resume when the access is serviced; a reorder unit (irusim.iru) can be
attached and advances one cycle at a time under the same clock.
"""

from __future__ import annotations

import heapq
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Optional

from .metrics import MetricsCounters

KIND_LOAD = "load"
KIND_STORE = "store"
KIND_ATOMIC_ADD = "atomic_add"
KIND_ATOMIC_MIN = "atomic_min"
KIND_IRU_REQUEST = "iru_request"

ATOMIC_KINDS = (KIND_ATOMIC_ADD, KIND_ATOMIC_MIN)


class SimulationError(RuntimeError):
    pass


class BudgetExceededError(SimulationError):
    """Max-cycle guard fired; carries a progress snapshot."""

    def __init__(self, msg, snapshot):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass(frozen=True)
class LatencyTable:
    """Fixed service latencies, in cycles."""

    l1_hit: int = 30
    l2_hit: int = 190
    dram: int = 350
    noc_per_hop: int = 10
    iru_pipeline: int = 4

    def __post_init__(self):
        if min(self.l1_hit, self.l2_hit, self.dram,
               self.noc_per_hop, self.iru_pipeline) <= 0:
            raise ValueError("latencies must be positive")
        if not (self.l1_hit <= self.l2_hit <= self.dram):
            raise ValueError("expected l1_hit <= l2_hit <= dram")


@dataclass(frozen=True)
class GpuConfig:
    """GTX-980-like default geometry (16 SMs, 4 memory partitions)."""

    num_sms: int = 16
    warp_size: int = 32
    max_threads_per_sm: int = 2048
    line_size: int = 128
    l1_size: int = 32768
    l2_total: int = 2097152
    num_mem_partitions: int = 4
    l1_assoc: int = 4
    l2_assoc: int = 16
    mshr_per_l1: int = 32
    interleave_lines: int = 1
    latency: LatencyTable = field(default_factory=LatencyTable)
    # NoC payload constants, declared so reports are reproducible
    noc_header_bytes: int = 8
    store_payload_bytes: int = 32
    # per-partition, per-direction NoC port bandwidth; transfers queue on
    # the port but keep the fixed noc_per_hop delivery latency
    noc_bytes_per_cycle: int = 8
    max_cycles: int = 500_000_000

    def __post_init__(self):
        for name in ("num_sms", "warp_size", "max_threads_per_sm",
                     "line_size", "l1_size", "l2_total",
                     "num_mem_partitions", "l1_assoc", "l2_assoc",
                     "mshr_per_l1", "interleave_lines",
                     "noc_bytes_per_cycle"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.l2_total % self.num_mem_partitions:
            raise ValueError("l2_total must divide evenly across partitions")
        if self.warp_size & (self.warp_size - 1):
            raise ValueError("warp_size must be a power of two")

    @property
    def warps_per_sm(self) -> int:
        return self.max_threads_per_sm // self.warp_size


@dataclass
class WarpAccess:
    """One warp-level memory instruction.

    lane_addresses has warp_size slots; None marks an inactive lane. For
    iru_request accesses the addresses are unused (the reply carries the
    data)."""

    sm_id: int
    warp_id: int
    kind: str
    lane_addresses: list
    tag: str = ""

    @property
    def active_mask(self) -> int:
        mask = 0
        for i, a in enumerate(self.lane_addresses):
            if a is not None:
                mask |= 1 << i
        return mask

    @property
    def active_count(self) -> int:
        return sum(1 for a in self.lane_addresses if a is not None)


@dataclass(frozen=True)
class MemoryTransaction:
    """A line-aligned request produced by coalescing one warp access."""

    block_address: int
    sm_id: int
    warp_id: int
    kind: str


def coalesce_warp_access(access: WarpAccess, line_size: int) -> list:
    """Merge active lanes into one transaction per distinct cache line,
    sorted by block address."""
    blocks = sorted({(a // line_size) * line_size
                     for a in access.lane_addresses if a is not None})
    if not blocks:
        raise ValueError("empty warp access")
    return [MemoryTransaction(b, access.sm_id, access.warp_id, access.kind)
            for b in blocks]


def partition_of_address(block_address: int, cfg: GpuConfig) -> int:
    """Line-interleaved mapping of a block address to a memory partition."""
    return ((block_address // (cfg.line_size * cfg.interleave_lines))
            % cfg.num_mem_partitions)


class Cache:
    """Set-associative LRU cache over line-aligned block addresses.

    Tracks a dirty bit per line for write-back accounting; the caller
    decides allocation policy per access."""

    def __init__(self, size_bytes: int, line_size: int, assoc: int):
        num_lines = max(1, size_bytes // line_size)
        self.assoc = min(assoc, num_lines)
        self.num_sets = max(1, num_lines // self.assoc)
        self.line_size = line_size
        self.sets = [OrderedDict() for _ in range(self.num_sets)]

    def _set_of(self, block: int) -> OrderedDict:
        return self.sets[(block // self.line_size) % self.num_sets]

    def access(self, block: int, write: bool = False,
               allocate: bool = True):
        """Returns (hit, evicted_dirty). LRU update on hit; on miss the
        line is allocated (LRU victim evicted) unless allocate=False."""
        s = self._set_of(block)
        if block in s:
            s.move_to_end(block)
            if write:
                s[block] = True
            return True, False
        evicted_dirty = False
        if allocate:
            if len(s) >= self.assoc:
                _, dirty = s.popitem(last=False)
                evicted_dirty = dirty
            s[block] = write
        return False, evicted_dirty


class WarpProgram:
    """A resident warp: a generator of WarpAccess objects.

    The engine resumes the generator with the service result (an IruReply
    for iru_request accesses, None otherwise)."""

    __slots__ = ("sm_id", "warp_id", "gen", "outstanding", "done",
                 "_last_done_cycle")

    def __init__(self, sm_id: int, warp_id: int, gen):
        self.sm_id = sm_id
        self.warp_id = warp_id
        self.gen = gen
        self.outstanding = 0
        self.done = False
        self._last_done_cycle = 0


class GpuSimulator:
    """Owns the full memory-side state for one deterministic run.

    run_kernel may be called repeatedly; the clock, caches and counters
    persist across kernels of the same run."""

    def __init__(self, cfg: GpuConfig, counters: Optional[MetricsCounters] = None):
        self.cfg = cfg
        self.counters = counters if counters is not None else MetricsCounters()
        self.clock = 0
        self.l1 = [Cache(cfg.l1_size, cfg.line_size, cfg.l1_assoc)
                   for _ in range(cfg.num_sms)]
        slice_size = cfg.l2_total // cfg.num_mem_partitions
        self.l2 = [Cache(slice_size, cfg.line_size, cfg.l2_assoc)
                   for _ in range(cfg.num_mem_partitions)]
        self.l1_free = [0] * cfg.num_sms
        self.l2_free = [0] * cfg.num_mem_partitions
        self.noc_out_free = [0] * cfg.num_mem_partitions  # SM -> MP ports
        self.noc_in_free = [0] * cfg.num_mem_partitions   # MP -> SM ports
        self.sm_issue_free = [0] * cfg.num_sms
        self.mshr_inflight = [0] * cfg.num_sms
        self.mshr_waiting = [deque() for _ in range(cfg.num_sms)]
        self.sm_iru_rr = [0] * cfg.num_sms
        self.iru = None
        self._heap = []
        self._seq = 0
        self._active_warps = 0
        self._sm_pending = [deque() for _ in range(cfg.num_sms)]
        self._sm_resident = [0] * cfg.num_sms

    # -- event plumbing ----------------------------------------------------

    def _at(self, cycle: int, fn, *args):
        self._seq += 1
        heapq.heappush(self._heap, (cycle, self._seq, fn, args))

    # -- cache/NoC paths ---------------------------------------------------

    def _noc_port(self, partition: int, now: int, nbytes: int,
                  to_partition: bool) -> int:
        """Queue one transfer on a partition's NoC port; returns the cycle
        the transfer departs (delivery adds noc_per_hop on top)."""
        free = self.noc_out_free if to_partition else self.noc_in_free
        begin = max(now, free[partition])
        free[partition] = begin + -(-nbytes // self.cfg.noc_bytes_per_cycle)
        return begin

    def l2_access(self, partition: int, block: int, now: int,
                  write: bool, source: str) -> int:
        """Serialize one transaction through an L2 slice; returns the cycle
        its data is ready. source is one of 'l1', 'atomic', 'iru'."""
        if partition_of_address(block, self.cfg) != partition:
            raise SimulationError(
                f"wrong partition: block {block:#x} routed to {partition}")
        c = self.counters
        start = max(now, self.l2_free[partition])
        self.l2_free[partition] = start + 1
        c.bump(c.l2_accesses, partition)
        c.bump({"l1": c.l2_from_l1, "atomic": c.l2_from_atomic,
                "iru": c.l2_from_iru}[source], partition)
        hit, evicted_dirty = self.l2[partition].access(block, write=write)
        done = start + self.cfg.latency.l2_hit
        if not hit:
            c.bump(c.l2_misses, partition)
            c.dram_accesses += 1
            done += self.cfg.latency.dram
        if evicted_dirty:
            c.dram_writes += 1
        return done

    def dram_fetch(self, now: int) -> int:
        """L2-bypass path for reorder-unit prefetches."""
        self.counters.dram_accesses += 1
        return now + self.cfg.latency.dram

    def _l1_load_txn(self, warp: WarpProgram, block: int, now: int,
                     count_stats: bool = True):
        """Run one load transaction through L1 (and below on a miss)."""
        cfg, lat, c = self.cfg, self.cfg.latency, self.counters
        sm = warp.sm_id
        service = max(now, self.l1_free[sm])
        self.l1_free[sm] = service + 1
        if count_stats:
            c.bump(c.l1_accesses, sm)
        hit, _ = self.l1[sm].access(block, write=False)
        if hit:
            self._at(service + lat.l1_hit, self._txn_done, warp)
            return
        if count_stats:
            c.bump(c.l1_misses, sm)
        self._miss_to_l2(warp, block, service)

    def _miss_to_l2(self, warp: WarpProgram, block: int, service: int):
        """Acquire an MSHR and fetch the line through the owning L2 slice;
        while all MSHRs are in flight the miss waits in FIFO order and is
        re-issued the cycle an MSHR frees up."""
        cfg, lat, c = self.cfg, self.cfg.latency, self.counters
        sm = warp.sm_id
        if self.mshr_inflight[sm] >= cfg.mshr_per_l1:
            c.mshr_stalls += 1
            self.mshr_waiting[sm].append((warp, block))
            return
        self.mshr_inflight[sm] += 1
        p = partition_of_address(block, cfg)
        c.noc_sm_to_mp_bytes += cfg.noc_header_bytes
        sent = self._noc_port(p, service + lat.l1_hit,
                              cfg.noc_header_bytes, to_partition=True)
        l2_done = self.l2_access(p, block, sent + lat.noc_per_hop,
                                 write=False, source="l1")
        c.noc_mp_to_sm_bytes += cfg.line_size + cfg.noc_header_bytes
        back = self._noc_port(p, l2_done,
                              cfg.line_size + cfg.noc_header_bytes,
                              to_partition=False)
        complete = back + lat.noc_per_hop
        self._at(complete, self._mshr_release, sm)
        self._at(complete, self._txn_done, warp)

    def _mshr_release(self, sm: int):
        self.mshr_inflight[sm] -= 1
        if self.mshr_waiting[sm]:
            # miss stats were already counted on the first attempt
            warp, block = self.mshr_waiting[sm].popleft()
            self._miss_to_l2(warp, block, self.clock)

    def _txn_done(self, warp: WarpProgram):
        warp.outstanding -= 1
        if warp.outstanding == 0:
            self._advance_warp(warp, self.clock, None)

    # -- access dispatch ---------------------------------------------------

    def _dispatch(self, warp: WarpProgram, access: WarpAccess, issue: int):
        cfg, lat, c = self.cfg, self.cfg.latency, self.counters
        kind = access.kind

        if kind == KIND_IRU_REQUEST:
            if self.iru is None:
                raise SimulationError("iru_request issued with no IRU configured")
            c.bump(c.tag_instructions, access.tag)
            part = self.sm_iru_rr[warp.sm_id] % cfg.num_mem_partitions
            self.sm_iru_rr[warp.sm_id] += 1
            c.noc_sm_to_mp_bytes += cfg.noc_header_bytes
            sent = self._noc_port(part, issue, cfg.noc_header_bytes,
                                  to_partition=True)
            self._at(sent + lat.noc_per_hop, self._iru_enqueue, warp, part)
            return

        txns = coalesce_warp_access(access, cfg.line_size)
        c.bump(c.tag_instructions, access.tag)
        c.bump(c.tag_transactions, access.tag, len(txns))

        if kind == KIND_LOAD:
            warp.outstanding = len(txns)
            for t in txns:
                self._l1_load_txn(warp, t.block_address, issue)
        elif kind == KIND_STORE:
            # Write-through no-allocate L1: every store forwards to L2, so
            # it is counted as an L1 miss regardless of line presence.
            warp.outstanding = 1
            last = issue
            for t in txns:
                sm = warp.sm_id
                service = max(issue, self.l1_free[sm])
                self.l1_free[sm] = service + 1
                c.bump(c.l1_accesses, sm)
                c.bump(c.l1_misses, sm)
                self.l1[sm].access(t.block_address, write=True, allocate=False)
                p = partition_of_address(t.block_address, cfg)
                nbytes = cfg.noc_header_bytes + cfg.store_payload_bytes
                c.noc_sm_to_mp_bytes += nbytes
                sent = self._noc_port(p, service + lat.l1_hit, nbytes,
                                      to_partition=True)
                self.l2_access(p, t.block_address, sent + lat.noc_per_hop,
                               write=True, source="l1")
                last = max(last, service + lat.l1_hit)
            # fire-and-forget: the warp does not wait for the L2 write
            self._at(last, self._txn_done, warp)
        elif kind in ATOMIC_KINDS:
            # atomics bypass L1 entirely and are serviced at the partitions
            warp.outstanding = len(txns)
            for t in txns:
                p = partition_of_address(t.block_address, cfg)
                nbytes = cfg.noc_header_bytes + cfg.store_payload_bytes
                c.noc_sm_to_mp_bytes += nbytes
                sent = self._noc_port(p, issue, nbytes, to_partition=True)
                l2_done = self.l2_access(p, t.block_address,
                                         sent + lat.noc_per_hop,
                                         write=True, source="atomic")
                c.noc_mp_to_sm_bytes += cfg.noc_header_bytes
                back = self._noc_port(p, l2_done, cfg.noc_header_bytes,
                                      to_partition=False)
                self._at(back + lat.noc_per_hop, self._txn_done, warp)
        else:
            raise SimulationError(f"unknown access kind {kind!r}")

    def _iru_enqueue(self, warp: WarpProgram, partition: int):
        # a full buffer parks the warp inside the unit; no retry event
        if not self.iru.enqueue_request(warp, partition, self.clock):
            self.counters.mshr_stalls += 1

    def deliver_iru_reply(self, warp: WarpProgram, reply, cycle: int,
                          partition: int):
        """Called by the reorder unit when a request is replied; the reply
        leaves through the serving partition's NoC port."""
        cfg, lat = self.cfg, self.cfg.latency
        nbytes = reply.reply_count * (cfg.line_size + cfg.noc_header_bytes)
        self.counters.noc_mp_to_sm_bytes += nbytes
        sent = self._noc_port(partition, cycle + lat.iru_pipeline, nbytes,
                              to_partition=False)
        self._at(sent + lat.noc_per_hop, self._advance_warp_ev, warp, reply)

    def _advance_warp_ev(self, warp: WarpProgram, result):
        self._advance_warp(warp, self.clock, result)

    def _advance_warp(self, warp: WarpProgram, cycle: int, result):
        # only called on started warps, so send() is always legal
        try:
            access = warp.gen.send(result)
        except StopIteration:
            self._retire_warp(warp)
            return
        warp._last_done_cycle = cycle
        sm = warp.sm_id
        issue = max(cycle, self.sm_issue_free[sm])
        self.sm_issue_free[sm] = issue + 1
        self._dispatch(warp, access, issue)

    def _start_warp(self, warp: WarpProgram, cycle: int):
        try:
            access = next(warp.gen)
        except StopIteration:
            self._retire_warp(warp)
            return
        sm = warp.sm_id
        issue = max(cycle, self.sm_issue_free[sm])
        self.sm_issue_free[sm] = issue + 1
        self._dispatch(warp, access, issue)

    def _retire_warp(self, warp: WarpProgram):
        warp.done = True
        self._active_warps -= 1
        sm = warp.sm_id
        self._sm_resident[sm] -= 1
        if self._sm_pending[sm]:
            nxt = self._sm_pending[sm].popleft()
            self._sm_resident[sm] += 1
            self._start_warp(nxt, self.clock)

    # -- main loop ----------------------------------------------------------

    def run_kernel(self, warps: list):
        """Execute one kernel (a list of WarpProgram) to completion."""
        limit = self.cfg.warps_per_sm
        self._active_warps += len(warps)
        for w in warps:
            if self._sm_resident[w.sm_id] < limit:
                self._sm_resident[w.sm_id] += 1
                self._start_warp(w, self.clock)
            else:
                self._sm_pending[w.sm_id].append(w)
        self._run()
        self.counters.cycles = self.clock
        return self.counters

    def _pending_work(self) -> bool:
        if self._active_warps > 0:
            return True
        return self.iru is not None and not self.iru.idle()

    def _run(self):
        while self._pending_work():
            progressed = False
            while self._heap and self._heap[0][0] <= self.clock:
                _, _, fn, args = heapq.heappop(self._heap)
                fn(*args)
                progressed = True
            if progressed:
                continue
            if self.iru is not None and self.iru.has_cycle_work():
                self.clock += 1
                self.iru.step(self.clock)
            elif self._heap:
                self.clock = self._heap[0][0]
            else:
                raise SimulationError(
                    f"deadlock at cycle {self.clock}: "
                    f"{self._active_warps} warps pending, no events")
            if self.clock > self.cfg.max_cycles:
                raise BudgetExceededError(
                    f"max-cycle budget {self.cfg.max_cycles} exceeded",
                    snapshot={
                        "clock": self.clock,
                        "active_warps": self._active_warps,
                        "l1_accesses": self.counters.total_l1_accesses,
                        "l2_accesses": self.counters.total_l2_accesses,
                    })
