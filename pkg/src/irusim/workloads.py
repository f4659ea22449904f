"""BFS, SSSP and PageRank expressed as warp-level memory event streams.

Each algorithm runs in two modes over the same graph: "baseline" issues the
irregular gathers directly, "iru" routes the index stream through the
reorder unit. Functional state (levels, distances, ranks) is computed in a
canonical sequential order independent of timing, so outputs are invariant
under any latency table or timeout; the simulated streams only drive the
counters.

Warp programs are generators yielding WarpAccess; an iru_request yield
receives the IruReply, everything else receives None.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import CsrGraph
from .gpu import (GpuConfig, GpuSimulator, WarpAccess, WarpProgram,
                  KIND_LOAD, KIND_STORE, KIND_ATOMIC_ADD, KIND_ATOMIC_MIN,
                  KIND_IRU_REQUEST)
from .iru import IruConfig, IruUnit, FILTER_COMPARE_MIN, FILTER_FLOAT_ADD
from .metrics import MetricsCounters

MODE_BASELINE = "baseline"
MODE_IRU = "iru"

UNREACHED = -1


class WorkloadError(ValueError):
    pass


class AddressMap:
    """Named, disjoint, line-aligned simulated array ranges."""

    def __init__(self, line_size: int = 128):
        self.line_size = line_size
        self.arrays = {}
        self._next = 0

    def add(self, name: str, elem_width: int, length: int) -> int:
        if name in self.arrays:
            raise WorkloadError(f"array {name!r} already mapped")
        base = self._next
        self.arrays[name] = (base, elem_width, length)
        end = base + elem_width * max(length, 1)
        self._next = ((end + self.line_size - 1)
                      // self.line_size) * self.line_size
        return base

    def base(self, name: str) -> int:
        return self.arrays[name][0]

    def addr(self, name: str, i: int) -> int:
        base, width, length = self.arrays[name]
        if not 0 <= i < length:
            raise WorkloadError(f"{name}[{i}] outside mapped length {length}")
        return base + i * width

    def contains(self, address: int) -> bool:
        for base, width, length in self.arrays.values():
            if base <= address < base + width * length:
                return True
        return False


@dataclass
class WorkloadResult:
    algorithm: str
    mode: str
    output: np.ndarray
    counters: MetricsCounters

    def transactions_per_instruction(self, tag: str = "gather"):
        return self.counters.transactions_per_instruction(tag)


class _WarpAlloc:
    """Hands out (sm, warp_id) pairs, warps spread round-robin over SMs."""

    def __init__(self, num_sms: int):
        self.num_sms = num_sms
        self.next_id = 0

    def take(self):
        wid = self.next_id
        self.next_id += 1
        return wid % self.num_sms, wid


def _pad(addrs: list, warp_size: int) -> list:
    return list(addrs) + [None] * (warp_size - len(addrs))


def load_iru(sm_id: int, warp_id: int, warp_size: int,
             tag: str = "iru_request"):
    """Device-side reordered load: yields one request access and returns
    the reply (use with `yield from`). Lanes past reply.enabled_count are
    disabled and must skip the dependent gather."""
    reply = yield WarpAccess(sm_id, warp_id, KIND_IRU_REQUEST,
                             [None] * warp_size, tag)
    return reply


def software_filter_baseline(frontier, am: AddressMap, status_name: str,
                             alloc: _WarpAlloc, warp_size: int):
    """Lookup-based dedupe with its memory cost counted.

    Returns (filtered, warps, status_reads, status_writes); reads/writes are
    per-lane counts, warps are the WarpPrograms charging them."""
    frontier = [int(v) for v in frontier]
    seen = set()
    filtered = []
    warps = []
    reads = len(frontier)
    writes = 0
    for lo in range(0, len(frontier), warp_size):
        chunk = frontier[lo:lo + warp_size]
        fresh = []
        for v in chunk:
            if v not in seen:
                seen.add(v)
                fresh.append(v)
                filtered.append(v)
        writes += len(fresh)
        sm, wid = alloc.take()

        def gen(sm=sm, wid=wid, chunk=chunk, fresh=fresh):
            yield WarpAccess(sm, wid, KIND_LOAD,
                             _pad([am.addr(status_name, v) for v in chunk],
                                  warp_size), "filter_status_read")
            if fresh:
                yield WarpAccess(sm, wid, KIND_STORE,
                                 _pad([am.addr(status_name, v)
                                       for v in fresh], warp_size),
                                 "filter_status_write")

        warps.append(WarpProgram(sm, wid, gen()))
    return filtered, warps, reads, writes


# ---------------------------------------------------------------------------
# sequential references (independent oracles)
# ---------------------------------------------------------------------------

def reference_bfs(g: CsrGraph, source: int) -> np.ndarray:
    levels = np.full(g.num_nodes, UNREACHED, dtype=np.int64)
    levels[source] = 0
    frontier = [source]
    level = 1
    while frontier:
        nxt = []
        for u in frontier:
            for v in g.neighbors(u):
                if levels[v] == UNREACHED:
                    levels[v] = level
                    nxt.append(int(v))
        frontier = nxt
        level += 1
    return levels


def reference_sssp(g: CsrGraph, source: int) -> np.ndarray:
    """Dijkstra with a binary heap."""
    g = g.with_unit_weights()
    dist = np.full(g.num_nodes, np.inf, dtype=np.float64)
    dist[source] = 0.0
    pq = [(0.0, source)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u]:
            continue
        start, end = g.row_offsets[u], g.row_offsets[u + 1]
        for k in range(start, end):
            v = int(g.col_indices[k])
            nd = d + float(g.weights[k])
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(pq, (nd, v))
    return dist


def reference_pagerank(g: CsrGraph, iterations: int,
                       damping: float) -> np.ndarray:
    n = g.num_nodes
    deg = np.diff(g.row_offsets).astype(np.float64)
    src = np.repeat(np.arange(n), np.diff(g.row_offsets))
    dst = g.col_indices
    ranks = np.full(n, 1.0 / n, dtype=np.float64)
    for _ in range(iterations):
        acc = np.zeros(n, dtype=np.float64)
        contrib = ranks[src] / deg[src]
        np.add.at(acc, dst, contrib)
        ranks = (1.0 - damping) / n + damping * acc
    return ranks


# ---------------------------------------------------------------------------
# shared kernel builders
# ---------------------------------------------------------------------------

def _chunked(values, warp_size):
    for lo in range(0, len(values), warp_size):
        yield lo, values[lo:lo + warp_size]


def _simple_load_warp(alloc, am, name, positions, tag, ws):
    sm, wid = alloc.take()

    def gen():
        yield WarpAccess(sm, wid, KIND_LOAD,
                         _pad([am.addr(name, int(p)) for p in positions], ws),
                         tag)

    return WarpProgram(sm, wid, gen())


def _expand_warps(g, frontier, am, alloc, ws, store_name,
                  extra_arrays=()):
    """Frontier expansion: row-offset loads per frontier node, then
    col-index loads plus frontier-buffer stores per edge position.
    extra_arrays lists (src_name, dst_name) pairs copied alongside.
    Returns (warps, edge_positions)."""
    warps = []
    for _, chunk in _chunked(frontier, ws):
        sm, wid = alloc.take()

        def gen(sm=sm, wid=wid, chunk=list(chunk)):
            yield WarpAccess(sm, wid, KIND_LOAD,
                             _pad([am.addr("row_offsets", int(u))
                                   for u in chunk], ws), "row_offsets")
            yield WarpAccess(sm, wid, KIND_LOAD,
                             _pad([am.addr("row_offsets", int(u) + 1)
                                   for u in chunk], ws), "row_offsets")

        warps.append(WarpProgram(sm, wid, gen()))
    ro = g.row_offsets
    pos = np.concatenate(
        [np.arange(ro[u], ro[u + 1]) for u in frontier]) if len(frontier) \
        else np.empty(0, dtype=np.int64)
    for lo, chunk in _chunked(pos, ws):
        sm, wid = alloc.take()

        def gen(sm=sm, wid=wid, lo=lo, chunk=list(chunk)):
            yield WarpAccess(sm, wid, KIND_LOAD,
                             _pad([am.addr("col_indices", int(p))
                                   for p in chunk], ws), "edge_expand")
            out = list(range(lo, lo + len(chunk)))
            yield WarpAccess(sm, wid, KIND_STORE,
                             _pad([am.addr(store_name, o) for o in out], ws),
                             "frontier_store")
            for src_name, dst_name in extra_arrays:
                yield WarpAccess(sm, wid, KIND_LOAD,
                                 _pad([am.addr(src_name, int(p))
                                       for p in chunk], ws), "edge_expand")
                yield WarpAccess(sm, wid, KIND_STORE,
                                 _pad([am.addr(dst_name, o) for o in out],
                                      ws), "frontier_store")

        warps.append(WarpProgram(sm, wid, gen()))
    return warps, pos


def _attach_iru(sim, am, target_name, target_width, indices_name, indices,
                secondary_name=None, secondary=None, filter_op="none",
                return_positions=False, iru_params=None,
                record_delivered=False):
    kwargs = dict(
        target_base=am.base(target_name),
        target_elem_width=target_width,
        indices_base=am.base(indices_name),
        num_elements=len(indices),
        secondary_base=(am.base(secondary_name)
                        if secondary_name is not None else None),
        filter_op=filter_op,
        return_positions=return_positions,
        partitions=sim.cfg.num_mem_partitions,
        elems_per_entry=sim.cfg.warp_size)
    kwargs.update(iru_params or {})
    return IruUnit(IruConfig(**kwargs), sim, indices, secondary,
                   record_delivered=record_delivered)


def _num_requests(n, ws):
    return -(-n // ws) if n else 0


# ---------------------------------------------------------------------------
# BFS
# ---------------------------------------------------------------------------

def bfs_run(g: CsrGraph, source: int, mode: str, cfg: Optional[GpuConfig] = None,
            iru_params: Optional[dict] = None) -> WorkloadResult:
    """Level-synchronous frontier BFS. The instrumented irregular access is
    the per-edge label gather (tag "gather")."""
    if cfg is None:
        cfg = GpuConfig()
    if not 0 <= source < g.num_nodes:
        raise WorkloadError(f"source {source} out of range")
    ws = cfg.warp_size
    am = AddressMap(cfg.line_size)
    am.add("row_offsets", 4, g.num_nodes + 1)
    am.add("col_indices", 4, max(g.num_edges, 1))
    am.add("labels", 4, g.num_nodes)
    am.add("edge_frontier", 4, max(g.num_edges, 1))
    sim = GpuSimulator(cfg)
    alloc = _WarpAlloc(cfg.num_sms)

    levels = np.full(g.num_nodes, UNREACHED, dtype=np.int64)
    levels[source] = 0
    frontier = np.array([source], dtype=np.int64)
    level = 1
    while len(frontier):
        sim.iru = None
        expand, pos = _expand_warps(g, frontier, am, alloc, ws,
                                    "edge_frontier")
        sim.run_kernel(expand)
        ef = g.col_indices[pos]
        # canonical functional step: first unvisited occurrence wins
        mask = levels[ef] == UNREACHED
        cand = ef[mask]
        if len(cand):
            uniq, first = np.unique(cand, return_index=True)
            new = uniq[np.argsort(first)]
            first_occurrence = np.zeros(len(ef), dtype=bool)
            first_occurrence[np.nonzero(mask)[0][np.sort(first)]] = True
        else:
            new = cand
            first_occurrence = np.zeros(len(ef), dtype=bool)
        levels[new] = level

        warps = []
        if mode == MODE_BASELINE:
            for lo, chunk in _chunked(ef, ws):
                sm, wid = alloc.take()
                stores = [int(v) for v, f in
                          zip(chunk, first_occurrence[lo:lo + len(chunk)])
                          if f]

                def gen(sm=sm, wid=wid, lo=lo, chunk=list(chunk),
                        stores=stores):
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("edge_frontier", lo + i)
                              for i in range(len(chunk))], ws),
                        "frontier_load")
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("labels", int(v)) for v in chunk], ws),
                        "gather")
                    if stores:
                        yield WarpAccess(
                            sm, wid, KIND_STORE,
                            _pad([am.addr("labels", v) for v in stores], ws),
                            "label_store")

                warps.append(WarpProgram(sm, wid, gen()))
        elif len(ef):
            _attach_iru(sim, am, "labels", 4, "edge_frontier", ef,
                        filter_op=FILTER_COMPARE_MIN, iru_params=iru_params)
            new_set = set(int(v) for v in new)
            stored = set()
            for _ in range(_num_requests(len(ef), ws)):
                sm, wid = alloc.take()

                def gen(sm=sm, wid=wid):
                    reply = yield from load_iru(sm, wid, ws)
                    enabled = reply.elements
                    if enabled:
                        yield WarpAccess(
                            sm, wid, KIND_LOAD,
                            _pad([am.addr("labels", e.index)
                                  for e in enabled], ws), "gather")
                        stores = []
                        for e in enabled:
                            if e.index in new_set and e.index not in stored:
                                stored.add(e.index)
                                stores.append(e.index)
                        if stores:
                            yield WarpAccess(
                                sm, wid, KIND_STORE,
                                _pad([am.addr("labels", v) for v in stores],
                                     ws), "label_store")

                warps.append(WarpProgram(sm, wid, gen()))
        sim.run_kernel(warps)
        sim.iru = None
        frontier = new
        level += 1
    sim.counters.cycles = sim.clock
    return WorkloadResult("bfs", mode, levels, sim.counters)


# ---------------------------------------------------------------------------
# SSSP
# ---------------------------------------------------------------------------

def sssp_run(g: CsrGraph, source: int, mode: str,
             cfg: Optional[GpuConfig] = None,
             iru_params: Optional[dict] = None) -> WorkloadResult:
    """Worklist (Bellman-Ford style) relaxation with atomic-min updates.

    In iru mode the tentative distance rides the secondary array and
    duplicate nodes merge keeping the smaller distance; the original
    position fetches auxiliary per-edge data."""
    if cfg is None:
        cfg = GpuConfig()
    g = g.with_unit_weights()
    if np.any(g.weights < 0):
        raise WorkloadError("negative edge weight")
    if not 0 <= source < g.num_nodes:
        raise WorkloadError(f"source {source} out of range")
    ws = cfg.warp_size
    am = AddressMap(cfg.line_size)
    am.add("row_offsets", 4, g.num_nodes + 1)
    am.add("col_indices", 4, max(g.num_edges, 1))
    am.add("weights", 4, max(g.num_edges, 1))
    am.add("dist", 4, g.num_nodes)
    am.add("edge_frontier", 4, max(g.num_edges, 1))
    am.add("cand_dist", 4, max(g.num_edges, 1))
    am.add("aux", 4, max(g.num_edges, 1))
    am.add("status", 4, g.num_nodes)
    sim = GpuSimulator(cfg)
    alloc = _WarpAlloc(cfg.num_sms)

    dist = np.full(g.num_nodes, np.inf, dtype=np.float64)
    dist[source] = 0.0
    worklist = np.array([source], dtype=np.int64)
    while len(worklist):
        sim.iru = None
        expand, pos = _expand_warps(g, worklist, am, alloc, ws,
                                    "edge_frontier",
                                    extra_arrays=(("weights", "cand_dist"),))
        sim.run_kernel(expand)
        cand_v = g.col_indices[pos]
        degs = (g.row_offsets[worklist + 1]
                - g.row_offsets[worklist]).astype(np.int64)
        cand_nd = np.repeat(dist[worklist], degs) + g.weights[pos]
        # canonical relaxation: order-insensitive min
        dist_new = dist.copy()
        np.minimum.at(dist_new, cand_v, cand_nd)
        improved = np.nonzero(dist_new < dist)[0]
        dist = dist_new

        warps = []
        if mode == MODE_BASELINE:
            for lo, chunk in _chunked(cand_v, ws):
                sm, wid = alloc.take()

                def gen(sm=sm, wid=wid, lo=lo, chunk=list(chunk)):
                    n = len(chunk)
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("edge_frontier", lo + i)
                              for i in range(n)], ws), "frontier_load")
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("cand_dist", lo + i)
                              for i in range(n)], ws), "frontier_load")
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("aux", lo + i) for i in range(n)], ws),
                        "aux_load")
                    yield WarpAccess(
                        sm, wid, KIND_ATOMIC_MIN,
                        _pad([am.addr("dist", int(v)) for v in chunk], ws),
                        "relax_atomic")

                warps.append(WarpProgram(sm, wid, gen()))
            # software dedupe of the candidate stream, memory cost counted
            _, fwarps, _, _ = software_filter_baseline(
                cand_v, am, "status", alloc, ws)
            warps.extend(fwarps)
        elif len(cand_v):
            _attach_iru(sim, am, "dist", 4, "edge_frontier", cand_v,
                        secondary_name="cand_dist", secondary=list(cand_nd),
                        filter_op=FILTER_COMPARE_MIN, return_positions=True,
                        iru_params=iru_params)
            for _ in range(_num_requests(len(cand_v), ws)):
                sm, wid = alloc.take()

                def gen(sm=sm, wid=wid):
                    reply = yield from load_iru(sm, wid, ws)
                    enabled = reply.elements
                    if enabled:
                        yield WarpAccess(
                            sm, wid, KIND_LOAD,
                            _pad([am.addr("aux", e.original_position)
                                  for e in enabled], ws), "aux_load")
                        yield WarpAccess(
                            sm, wid, KIND_ATOMIC_MIN,
                            _pad([am.addr("dist", e.index)
                                  for e in enabled], ws), "relax_atomic")

                warps.append(WarpProgram(sm, wid, gen()))
        sim.run_kernel(warps)
        sim.iru = None
        worklist = improved
    sim.counters.cycles = sim.clock
    return WorkloadResult("sssp", mode, dist, sim.counters)


# ---------------------------------------------------------------------------
# PageRank
# ---------------------------------------------------------------------------

def pagerank_run(g: CsrGraph, iterations: int = 3, damping: float = 0.85,
                 mode: str = MODE_BASELINE, cfg: Optional[GpuConfig] = None,
                 iru_params: Optional[dict] = None) -> WorkloadResult:
    """Push-style PageRank over a fixed iteration count.

    Every edge contributes rank[src]/out_degree(src) to its destination via
    atomic adds; in iru mode duplicate destinations pre-sum inside the
    reorder unit so merged-out lanes issue no atomic."""
    if cfg is None:
        cfg = GpuConfig()
    if iterations < 1:
        raise WorkloadError("iterations must be >= 1")
    ws = cfg.warp_size
    n = g.num_nodes
    am = AddressMap(cfg.line_size)
    am.add("row_offsets", 4, n + 1)
    am.add("col_indices", 4, max(g.num_edges, 1))
    am.add("ranks", 4, n)
    am.add("rank_acc", 4, n)
    am.add("contrib", 4, max(g.num_edges, 1))
    sim = GpuSimulator(cfg)
    alloc = _WarpAlloc(cfg.num_sms)

    deg = np.diff(g.row_offsets).astype(np.float64)
    src = np.repeat(np.arange(n), np.diff(g.row_offsets))
    dst = g.col_indices
    ranks = np.full(n, 1.0 / n, dtype=np.float64)
    for _ in range(iterations):
        contrib = ranks[src] / deg[src] if g.num_edges else \
            np.empty(0, dtype=np.float64)
        acc = np.zeros(n, dtype=np.float64)
        np.add.at(acc, dst, contrib)

        # contribution pass, identical in both modes
        warps = []
        sim.iru = None
        for lo, chunk in _chunked(src, ws):
            sm, wid = alloc.take()

            def gen(sm=sm, wid=wid, lo=lo, chunk=list(chunk)):
                yield WarpAccess(
                    sm, wid, KIND_LOAD,
                    _pad([am.addr("ranks", int(u)) for u in chunk], ws),
                    "contrib_compute")
                yield WarpAccess(
                    sm, wid, KIND_STORE,
                    _pad([am.addr("contrib", lo + i)
                          for i in range(len(chunk))], ws), "contrib_store")

            warps.append(WarpProgram(sm, wid, gen()))
        sim.run_kernel(warps)

        warps = []
        if mode == MODE_BASELINE:
            for lo, chunk in _chunked(dst, ws):
                sm, wid = alloc.take()

                def gen(sm=sm, wid=wid, lo=lo, chunk=list(chunk)):
                    n_ = len(chunk)
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("col_indices", lo + i)
                              for i in range(n_)], ws), "frontier_load")
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("contrib", lo + i)
                              for i in range(n_)], ws), "frontier_load")
                    yield WarpAccess(
                        sm, wid, KIND_ATOMIC_ADD,
                        _pad([am.addr("rank_acc", int(v)) for v in chunk],
                             ws), "rank_atomic")

                warps.append(WarpProgram(sm, wid, gen()))
        elif g.num_edges:
            _attach_iru(sim, am, "rank_acc", 4, "col_indices", dst,
                        secondary_name="contrib", secondary=list(contrib),
                        filter_op=FILTER_FLOAT_ADD, iru_params=iru_params)
            for _ in range(_num_requests(g.num_edges, ws)):
                sm, wid = alloc.take()

                def gen(sm=sm, wid=wid):
                    reply = yield from load_iru(sm, wid, ws)
                    enabled = reply.elements
                    if enabled:
                        yield WarpAccess(
                            sm, wid, KIND_ATOMIC_ADD,
                            _pad([am.addr("rank_acc", e.index)
                                  for e in enabled], ws), "rank_atomic")

                warps.append(WarpProgram(sm, wid, gen()))
        sim.run_kernel(warps)
        sim.iru = None

        # rank update pass, identical in both modes
        warps = []
        for lo, chunk in _chunked(np.arange(n), ws):
            sm, wid = alloc.take()

            def gen(sm=sm, wid=wid, chunk=list(chunk)):
                yield WarpAccess(
                    sm, wid, KIND_LOAD,
                    _pad([am.addr("rank_acc", int(u)) for u in chunk], ws),
                    "rank_update")
                yield WarpAccess(
                    sm, wid, KIND_STORE,
                    _pad([am.addr("ranks", int(u)) for u in chunk], ws),
                    "rank_update")

            warps.append(WarpProgram(sm, wid, gen()))
        sim.run_kernel(warps)
        ranks = (1.0 - damping) / n + damping * acc
    sim.counters.cycles = sim.clock
    return WorkloadResult("pagerank", mode, ranks, sim.counters)


# ---------------------------------------------------------------------------
# gather microbenchmark (used for property and construction tests)
# ---------------------------------------------------------------------------

def run_gather_microbench(indices, num_targets: int, mode: str,
                          cfg: Optional[GpuConfig] = None,
                          iru_params: Optional[dict] = None,
                          secondary=None, filter_op: str = "none",
                          record_delivered: bool = True):
    """Load an index array and gather target[index] for each element,
    either directly or through the reorder unit.

    Returns (counters, iru_unit_or_None)."""
    if cfg is None:
        cfg = GpuConfig()
    ws = cfg.warp_size
    indices = [int(i) for i in indices]
    am = AddressMap(cfg.line_size)
    am.add("target", 4, max(num_targets, 1))
    am.add("indices", 4, max(len(indices), 1))
    if secondary is not None:
        am.add("secondary", 4, max(len(secondary), 1))
    sim = GpuSimulator(cfg)
    alloc = _WarpAlloc(cfg.num_sms)
    warps = []
    unit = None
    if mode == MODE_BASELINE:
        for lo, chunk in _chunked(indices, ws):
            sm, wid = alloc.take()

            def gen(sm=sm, wid=wid, lo=lo, chunk=list(chunk)):
                yield WarpAccess(
                    sm, wid, KIND_LOAD,
                    _pad([am.addr("indices", lo + i)
                          for i in range(len(chunk))], ws), "frontier_load")
                yield WarpAccess(
                    sm, wid, KIND_LOAD,
                    _pad([am.addr("target", v) for v in chunk], ws),
                    "gather")

            warps.append(WarpProgram(sm, wid, gen()))
    else:
        if indices:
            unit = _attach_iru(
                sim, am, "target", 4, "indices", indices,
                secondary_name="secondary" if secondary is not None else None,
                secondary=secondary, filter_op=filter_op,
                iru_params=iru_params, record_delivered=record_delivered)
        for _ in range(_num_requests(len(indices), ws)):
            sm, wid = alloc.take()

            def gen(sm=sm, wid=wid):
                reply = yield from load_iru(sm, wid, ws)
                enabled = reply.elements
                if enabled:
                    yield WarpAccess(
                        sm, wid, KIND_LOAD,
                        _pad([am.addr("target", e.index) for e in enabled],
                             ws), "gather")

            warps.append(WarpProgram(sm, wid, gen()))
    sim.run_kernel(warps)
    sim.counters.cycles = sim.clock
    return sim.counters, unit
