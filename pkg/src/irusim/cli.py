"""Command line front end: load or generate a graph, run an algorithm in
one or both modes, write counter and comparison reports.

Exit codes: 0 success, 1 simulation failure, 2 bad arguments or config.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import graph as graphmod
from .graph import GraphError, csr_from_edge_list, validate_csr
from .gpu import GpuConfig, LatencyTable, SimulationError
from .metrics import compare, emit_csv, emit_json
from .workloads import (MODE_BASELINE, MODE_IRU, WorkloadError,
                        bfs_run, sssp_run, pagerank_run)

ALGORITHMS = ("bfs", "sssp", "pr")

GPU_CONFIG_KEYS = {
    "num_sms": int, "warp_size": int, "max_threads_per_sm": int,
    "line_size": int, "l1_size": int, "l2_total": int,
    "num_mem_partitions": int, "l1_assoc": int, "l2_assoc": int,
    "mshr_per_l1": int, "interleave_lines": int, "max_cycles": int,
}
LATENCY_KEYS = {
    "l1_hit": int, "l2_hit": int, "dram": int, "noc_per_hop": int,
    "iru_pipeline": int,
}
IRU_CONFIG_KEYS = {
    "num_sets_global": int, "banks_per_partition": int,
    "max_inflight_prefetch": int, "timeout_cycles": int,
    "hash_fn": str, "hash_constant": int, "bypass_l2": bool,
    "request_buffer_entries": int, "ring_buffer_entries": int,
}


class CliError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {s!r}")


def load_config_file(path):
    """Read an INI config with [gpu], [latency] and [iru] sections; unknown
    sections or keys are rejected. Returns (gpu_kwargs, latency_kwargs,
    iru_kwargs)."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise CliError(f"config file not found: {path}")
    tables = {"gpu": GPU_CONFIG_KEYS, "latency": LATENCY_KEYS,
              "iru": IRU_CONFIG_KEYS}
    out = {"gpu": {}, "latency": {}, "iru": {}}
    for section in cp.sections():
        if section not in tables:
            raise CliError(f"{path}: unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in tables[section]:
                raise CliError(f"{path}: unknown key {key!r} in [{section}]")
            typ = tables[section][key]
            try:
                if typ is bool:
                    out[section][key] = _parse_bool(raw)
                elif typ is int:
                    out[section][key] = int(raw)
                else:
                    out[section][key] = raw
            except ValueError:
                raise CliError(f"{path}: bad value for {section}.{key}: "
                               f"{raw!r}")
    return out["gpu"], out["latency"], out["iru"]


def parse_generate_spec(spec: str, seed: int):
    """Turn "rmat:scale=14,ef=16" or "grid:64x64" into an EdgeList plus a
    short graph name."""
    if ":" not in spec:
        raise CliError(f"bad --generate spec {spec!r} (expected kind:params)")
    kind, params = spec.split(":", 1)
    if kind == "rmat":
        kv = {}
        for item in params.split(","):
            if "=" not in item:
                raise CliError(f"bad rmat parameter {item!r}")
            k, v = item.split("=", 1)
            kv[k.strip()] = v.strip()
        unknown = set(kv) - {"scale", "ef"}
        if unknown:
            raise CliError(f"unknown rmat parameters: {sorted(unknown)}")
        try:
            scale = int(kv["scale"])
            ef = int(kv.get("ef", "16"))
        except (KeyError, ValueError):
            raise CliError(f"rmat needs integer scale (and optional ef): "
                           f"{spec!r}")
        edges = graphmod.generate_rmat(scale, ef, seed=seed)
        return edges, (1 << scale), f"rmat-s{scale}-ef{ef}-seed{seed}"
    if kind == "grid":
        try:
            w, h = (int(t) for t in params.lower().split("x"))
        except ValueError:
            raise CliError(f"bad grid spec {spec!r} (expected grid:WxH)")
        edges = graphmod.generate_grid(w, h)
        return edges, w * h, f"grid-{w}x{h}"
    raise CliError(f"unknown generator kind {kind!r}")


def load_graph_file(path):
    name = os.path.basename(path)
    try:
        if path.endswith(".mtx"):
            edges = graphmod.load_matrix_market(path)
        else:
            edges = graphmod.load_edge_list(path)
    except OSError as e:
        raise CliError(f"cannot read graph file {path}: {e}")
    return edges, edges.max_node() + 1, name


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="irusim",
        description="Deterministic memory-hierarchy simulator for irregular "
                    "graph workloads, with an optional in-memory index "
                    "reorder unit.")
    p.add_argument("--algo", choices=ALGORITHMS, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph", help="edge-list or .mtx MatrixMarket file")
    src.add_argument("--generate",
                     help="synthetic graph: rmat:scale=N[,ef=M] or grid:WxH")
    p.add_argument("--seed", type=int, default=0,
                   help="generator seed (default 0)")
    p.add_argument("--source", type=int, default=0,
                   help="bfs/sssp source node (default 0)")
    p.add_argument("--iterations", type=int, default=3,
                   help="pagerank iterations (default 3)")
    p.add_argument("--damping", type=float, default=0.85)
    p.add_argument("--modes", default="baseline,iru",
                   help="comma list from {baseline,iru} (default both)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--run-id", default=None,
                   help="report run id (default derived from the arguments)")
    p.add_argument("--config", help="INI file with [gpu]/[latency]/[iru]")
    p.add_argument("--timeout-cycles", type=int, default=None,
                   help="reorder-unit reply timeout; 0 disables the timeout")
    p.add_argument("--hash", choices=("dispersion", "identity_mod"),
                   default=None)
    p.add_argument("--max-cycles", type=int, default=None)
    p.add_argument("--dedupe-edges", action="store_true",
                   help="drop duplicate (src, dst) pairs at CSR build")
    p.add_argument("--validate-only", action="store_true",
                   help="build and validate the graph, run nothing")
    return p


def _run_one(algo, g, mode, args, cfg, iru_params):
    if algo == "bfs":
        return bfs_run(g, args.source, mode, cfg, iru_params)
    if algo == "sssp":
        return sssp_run(g, args.source, mode, cfg, iru_params)
    return pagerank_run(g, args.iterations, args.damping, mode, cfg,
                        iru_params)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        gpu_kw, lat_kw, iru_params = ({}, {}, {})
        if args.config:
            gpu_kw, lat_kw, iru_params = load_config_file(args.config)
        if args.max_cycles is not None:
            gpu_kw["max_cycles"] = args.max_cycles
        if args.timeout_cycles is not None:
            iru_params["timeout_cycles"] = (args.timeout_cycles
                                            if args.timeout_cycles > 0
                                            else None)
        if args.hash is not None:
            iru_params["hash_fn"] = args.hash

        if args.graph:
            edges, num_nodes, gname = load_graph_file(args.graph)
        else:
            edges, num_nodes, gname = parse_generate_spec(args.generate,
                                                          args.seed)
        g = csr_from_edge_list(edges, num_nodes, dedupe=args.dedupe_edges)
        problems = validate_csr(g)
        if problems:
            for msg in problems:
                print(f"invalid graph: {msg}", file=sys.stderr)
            return 2
        if args.validate_only:
            print(f"{gname}: {g.num_nodes} nodes, {g.num_edges} edges, "
                  f"valid")
            return 0

        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        for m in modes:
            if m not in (MODE_BASELINE, MODE_IRU):
                raise CliError(f"unknown mode {m!r}")
        if not modes:
            raise CliError("no modes selected")

        cfg = GpuConfig(latency=LatencyTable(**lat_kw), **gpu_kw)
        run_id = args.run_id or f"{args.algo}-{gname}"
        os.makedirs(args.out, exist_ok=True)

        results = {}
        for mode in modes:
            res = _run_one(args.algo, g, mode, args, cfg,
                           iru_params if mode == MODE_IRU else None)
            results[mode] = res
            rows = res.counters.to_rows()
            stem = os.path.join(args.out, f"{run_id}-{mode}")
            emit_csv(stem + ".csv", rows, run_id, args.algo, gname, mode)
            emit_json(stem + ".json", rows, run_id, args.algo, gname, mode)
            print(f"{args.algo} {gname} {mode}: cycles={res.counters.cycles} "
                  f"l1={res.counters.total_l1_accesses} "
                  f"l2={res.counters.total_l2_accesses} "
                  f"noc_bytes={res.counters.total_noc_bytes}")

        if MODE_BASELINE in results and MODE_IRU in results:
            rep = compare(results[MODE_BASELINE].counters,
                          results[MODE_IRU].counters)
            rows = rep.to_rows()
            stem = os.path.join(args.out, f"{run_id}-compare")
            emit_csv(stem + ".csv", rows, run_id, args.algo, gname, "compare")
            emit_json(stem + ".json", rows, run_id, args.algo, gname,
                      "compare")
            sp = rep.speedup
            print(f"{args.algo} {gname} compare: "
                  f"speedup={sp:.4f}" if sp is not None else
                  f"{args.algo} {gname} compare: speedup undefined")
        return 0
    except (CliError, GraphError, WorkloadError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SimulationError as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
