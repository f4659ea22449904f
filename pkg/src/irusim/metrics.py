"""Run counters, normalized comparison reports and CSV/JSON emission.

Normalization direction: access/traffic ratios are reordered/baseline
(lower is better), speedup is baseline/reordered (higher is better). Both
directions are spelled out in the emitted metric names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

SCHEMA_VERSION = 1

CSV_HEADER = "run_id,algorithm,graph,mode,metric,value"

IRU_COUNTER_NAMES = (
    "inserted", "collocated_conflicts", "filter_merged", "replies_instant",
    "replies_timeout", "replies_drain", "ring_messages", "prefetch_lines",
)


@dataclass
class MetricsCounters:
    """Per-run counters accumulated by the cycle engine."""

    l1_accesses: dict = field(default_factory=dict)   # sm -> count
    l1_misses: dict = field(default_factory=dict)     # sm -> count
    l2_accesses: dict = field(default_factory=dict)   # partition -> count
    l2_misses: dict = field(default_factory=dict)
    l2_from_l1: dict = field(default_factory=dict)    # routing breakdown
    l2_from_atomic: dict = field(default_factory=dict)
    l2_from_iru: dict = field(default_factory=dict)
    dram_accesses: int = 0
    dram_writes: int = 0
    noc_sm_to_mp_bytes: int = 0
    noc_mp_to_sm_bytes: int = 0
    mshr_stalls: int = 0
    cycles: int = 0
    tag_instructions: dict = field(default_factory=dict)  # tag -> warp instrs
    tag_transactions: dict = field(default_factory=dict)  # tag -> transactions
    iru_partitions: list = field(default_factory=list)    # list of dicts

    def bump(self, counter: dict, key, n: int = 1):
        counter[key] = counter.get(key, 0) + n

    @property
    def total_l1_accesses(self) -> int:
        return sum(self.l1_accesses.values())

    @property
    def total_l1_misses(self) -> int:
        return sum(self.l1_misses.values())

    @property
    def total_l2_accesses(self) -> int:
        return sum(self.l2_accesses.values())

    @property
    def total_l2_misses(self) -> int:
        return sum(self.l2_misses.values())

    @property
    def total_noc_bytes(self) -> int:
        return self.noc_sm_to_mp_bytes + self.noc_mp_to_sm_bytes

    def iru_total(self, name: str) -> int:
        return sum(p.get(name, 0) for p in self.iru_partitions)

    def transactions_per_instruction(self, tag: str) -> Optional[float]:
        n = self.tag_instructions.get(tag, 0)
        if n == 0:
            return None
        return self.tag_transactions.get(tag, 0) / n

    def filtered_fraction(self) -> Optional[float]:
        inserted = self.iru_total("inserted")
        if inserted == 0:
            return None
        return self.iru_total("filter_merged") / inserted

    def to_rows(self) -> list:
        """Flatten into deterministic (metric, value) rows."""
        rows = [
            ("l1_accesses", self.total_l1_accesses),
            ("l1_misses", self.total_l1_misses),
            ("l2_accesses", self.total_l2_accesses),
            ("l2_misses", self.total_l2_misses),
            ("dram_accesses", self.dram_accesses),
            ("dram_writes", self.dram_writes),
            ("noc_sm_to_mp_bytes", self.noc_sm_to_mp_bytes),
            ("noc_mp_to_sm_bytes", self.noc_mp_to_sm_bytes),
            ("noc_bytes", self.total_noc_bytes),
            ("mshr_stalls", self.mshr_stalls),
            ("cycles", self.cycles),
        ]
        for tag in sorted(self.tag_instructions):
            rows.append((f"instructions[{tag}]", self.tag_instructions[tag]))
            rows.append((f"transactions[{tag}]",
                         self.tag_transactions.get(tag, 0)))
            rows.append((f"transactions_per_instruction[{tag}]",
                         self.transactions_per_instruction(tag)))
        for name in IRU_COUNTER_NAMES:
            rows.append((f"iru_{name}", self.iru_total(name)))
        for pid, part in enumerate(self.iru_partitions):
            for name in IRU_COUNTER_NAMES:
                rows.append((f"iru_{name}[p{pid}]", part.get(name, 0)))
        rows.append(("iru_filtered_fraction", self.filtered_fraction()))
        return rows


class ReportError(ValueError):
    """Mismatched or unusable run pairs."""


@dataclass
class ComparisonReport:
    """Reordered-vs-baseline summary for one (algorithm, graph) cell.

    Ratios are reordered/baseline; speedup is baseline/reordered. None marks
    an undefined ratio (zero baseline denominator).
    """

    normalized_l1_accesses: Optional[float]
    normalized_l2_accesses: Optional[float]
    normalized_noc_bytes: Optional[float]
    baseline_transactions_per_instruction: Optional[float]
    iru_transactions_per_instruction: Optional[float]
    filtered_fraction: Optional[float]
    speedup: Optional[float]

    def to_rows(self) -> list:
        return [
            ("normalized_l1_accesses(iru/baseline)", self.normalized_l1_accesses),
            ("normalized_l2_accesses(iru/baseline)", self.normalized_l2_accesses),
            ("normalized_noc_bytes(iru/baseline)", self.normalized_noc_bytes),
            ("baseline_transactions_per_instruction",
             self.baseline_transactions_per_instruction),
            ("iru_transactions_per_instruction",
             self.iru_transactions_per_instruction),
            ("filtered_fraction", self.filtered_fraction),
            ("speedup(baseline/iru)", self.speedup),
        ]


def _ratio(num, den) -> Optional[float]:
    if den is None or den == 0 or num is None:
        return None
    return num / den


def compare(baseline: MetricsCounters, iru: MetricsCounters,
            tag: str = "gather") -> ComparisonReport:
    """Compute the normalized metrics of a baseline/reordered run pair.

    Both counters must come from the same workload, graph and seed; the
    caller owns that pairing (see cli.run)."""
    return ComparisonReport(
        normalized_l1_accesses=_ratio(iru.total_l1_accesses,
                                      baseline.total_l1_accesses),
        normalized_l2_accesses=_ratio(iru.total_l2_accesses,
                                      baseline.total_l2_accesses),
        normalized_noc_bytes=_ratio(iru.total_noc_bytes,
                                    baseline.total_noc_bytes),
        baseline_transactions_per_instruction=(
            baseline.transactions_per_instruction(tag)),
        iru_transactions_per_instruction=(
            iru.transactions_per_instruction(tag)),
        filtered_fraction=iru.filtered_fraction(),
        speedup=_ratio(baseline.cycles, iru.cycles),
    )


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return f"{v:.9g}"


def _json_value(v):
    if v is None or isinstance(v, int):
        return v
    return float(f"{v:.9g}")


def emit_csv(path, rows, run_id: str, algorithm: str, graph: str, mode: str):
    """Write (metric, value) rows under the fixed documented header.

    Output is byte-identical for identical inputs; undefined values are
    empty fields."""
    try:
        with open(path, "w", newline="") as f:
            f.write(CSV_HEADER + "\n")
            for metric, value in rows:
                f.write(f"{run_id},{algorithm},{graph},{mode},{metric},"
                        f"{_fmt_value(value)}\n")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e}") from e


def emit_json(path, rows, run_id: str, algorithm: str, graph: str, mode: str):
    """Write the same rows as a versioned JSON document (nulls for
    undefined values, floats at 9 significant digits)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id,
        "algorithm": algorithm,
        "graph": graph,
        "mode": mode,
        "metrics": {metric: _json_value(value) for metric, value in rows},
    }
    try:
        with open(path, "w", newline="") as f:
            json.dump(doc, f, indent=2, allow_nan=False)
            f.write("\n")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e}") from e


def load_json(path) -> dict:
    with open(path) as f:
        return json.load(f)
