"""Graph ingestion, synthetic generation and CSR construction.

All functions here are pure: loaders and generators return an EdgeList,
csr_from_edge_list turns it into an immutable CsrGraph. Node ids are capped
at 2^24 because the reorder unit carries 24-bit indices; oversized graphs
are rejected at construction time instead of failing later.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MAX_NODES = 1 << 24


class GraphError(ValueError):
    """Malformed graph file or invalid construction arguments."""


@dataclass
class EdgeList:
    """Plain (src, dst, weight) triples; weight is None for unweighted edges.

    Duplicates and self-loops are preserved; CSR construction decides what
    to do with them.
    """

    edges: list = field(default_factory=list)

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def max_node(self) -> int:
        return max((max(s, d) for s, d, _ in self.edges), default=-1)


@dataclass(frozen=True)
class CsrGraph:
    """Compressed sparse row graph.

    row_offsets has num_nodes + 1 entries; col_indices[row_offsets[u]:
    row_offsets[u + 1]] are u's out-neighbors. weights, when present, is
    parallel to col_indices.
    """

    num_nodes: int
    num_edges: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.num_nodes >= MAX_NODES:
            raise GraphError(
                f"graph has {self.num_nodes} nodes, exceeding the 24-bit "
                f"index limit of {MAX_NODES - 1}"
            )

    def neighbors(self, u: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[u]:self.row_offsets[u + 1]]

    def out_degree(self, u: int) -> int:
        return int(self.row_offsets[u + 1] - self.row_offsets[u])

    def with_unit_weights(self) -> "CsrGraph":
        """Return a weighted copy; weightless edges get weight 1."""
        if self.weights is not None:
            return self
        return CsrGraph(
            self.num_nodes, self.num_edges, self.row_offsets,
            self.col_indices, np.ones(self.num_edges, dtype=np.int64),
        )


def load_matrix_market(path) -> EdgeList:
    """Parse a MatrixMarket coordinate file into an EdgeList.

    Ids are converted from 1-based to 0-based; symmetric matrices expand
    off-diagonal entries to both directions; pattern matrices yield
    weightless edges.
    """
    with open(path) as f:
        header = f.readline()
        if not header.startswith("%%MatrixMarket"):
            raise GraphError(f"{path}: line 1: missing MatrixMarket header")
        parts = header.split()
        if len(parts) < 5 or parts[1] != "matrix" or parts[2] != "coordinate":
            raise GraphError(f"{path}: line 1: malformed header {header!r}")
        fmt, symmetry = parts[3], parts[4]
        if fmt not in ("pattern", "real", "integer"):
            raise GraphError(f"{path}: line 1: unsupported field {fmt!r}")
        if symmetry not in ("general", "symmetric"):
            raise GraphError(f"{path}: line 1: unsupported symmetry {symmetry!r}")

        rows = cols = nnz = None
        edges = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            toks = line.split()
            if rows is None:
                try:
                    rows, cols, nnz = int(toks[0]), int(toks[1]), int(toks[2])
                except (ValueError, IndexError):
                    raise GraphError(f"{path}: line {lineno}: bad size line {line!r}")
                continue
            try:
                i, j = int(toks[0]), int(toks[1])
            except (ValueError, IndexError):
                raise GraphError(
                    f"{path}: line {lineno}: non-integer coordinates {line!r}")
            if not (1 <= i <= rows and 1 <= j <= cols):
                raise GraphError(
                    f"{path}: line {lineno}: coordinate out of bounds "
                    f"({i}, {j}) in {rows}x{cols}")
            w = None
            if fmt != "pattern":
                if len(toks) < 3:
                    raise GraphError(f"{path}: line {lineno}: missing value")
                w = _parse_number(toks[2], path, lineno)
            edges.append((i - 1, j - 1, w))
            if symmetry == "symmetric" and i != j:
                edges.append((j - 1, i - 1, w))
        if rows is None:
            raise GraphError(f"{path}: missing size line")
        return EdgeList(edges)


def load_edge_list(path) -> EdgeList:
    """Parse a whitespace edge-list file: "src dst [weight]", '#' comments."""
    edges = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) not in (2, 3):
                raise GraphError(
                    f"{path}: line {lineno}: expected 'src dst [weight]'")
            try:
                s, d = int(toks[0]), int(toks[1])
            except ValueError:
                raise GraphError(
                    f"{path}: line {lineno}: non-numeric node id in {line!r}")
            if s < 0 or d < 0:
                raise GraphError(f"{path}: line {lineno}: negative node id")
            w = _parse_number(toks[2], path, lineno) if len(toks) == 3 else None
            edges.append((s, d, w))
    return EdgeList(edges)


def _parse_number(tok: str, path, lineno: int):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        raise GraphError(f"{path}: line {lineno}: non-numeric value {tok!r}")


def generate_rmat(scale: int, edge_factor: int, a: float = 0.57,
                  b: float = 0.19, c: float = 0.19, seed: int = 0) -> EdgeList:
    """Recursive-quadrant (R-MAT) generator: 2^scale nodes,
    edge_factor * 2^scale directed edges. Deterministic given seed."""
    if scale > 24:
        raise GraphError("scale > 24 exceeds the 24-bit node limit")
    if min(a, b, c) < 0 or a + b + c > 1.0:
        raise GraphError("quadrant probabilities must be nonnegative and sum <= 1")
    rng = random.Random(seed)
    n = 1 << scale
    ab = a + b
    abc = a + b + c
    edges = []
    for _ in range(edge_factor * n):
        src = dst = 0
        for _ in range(scale):
            r = rng.random()
            src <<= 1
            dst <<= 1
            if r < a:
                pass
            elif r < ab:
                dst |= 1
            elif r < abc:
                src |= 1
            else:
                src |= 1
                dst |= 1
        edges.append((src, dst, None))
    return EdgeList(edges)


def generate_grid(width: int, height: int) -> EdgeList:
    """4-neighbor bidirectional lattice; node id = y * width + x."""
    if width < 1 or height < 1:
        raise GraphError("grid dimensions must be >= 1")
    if width * height >= MAX_NODES:
        raise GraphError("grid exceeds the 24-bit node limit")
    edges = []
    for y in range(height):
        for x in range(width):
            u = y * width + x
            if x + 1 < width:
                v = u + 1
                edges.append((u, v, None))
                edges.append((v, u, None))
            if y + 1 < height:
                v = u + width
                edges.append((u, v, None))
                edges.append((v, u, None))
    return EdgeList(edges)


def csr_from_edge_list(edges: EdgeList, num_nodes: int,
                       dedupe: bool = False) -> CsrGraph:
    """Counting-sort edges by source into CSR form.

    Stable: within a row, destinations keep input order. With dedupe=True,
    duplicate (src, dst) pairs collapse keeping the first weight.
    """
    rows = [[] for _ in range(num_nodes)]
    has_weights = None
    for k, (s, d, w) in enumerate(edges):
        if s >= num_nodes or d >= num_nodes or s < 0 or d < 0:
            raise GraphError(f"edge {k}: id ({s}, {d}) out of range for "
                             f"num_nodes={num_nodes}")
        weighted = w is not None
        if has_weights is None:
            has_weights = weighted
        elif has_weights != weighted:
            raise GraphError(f"edge {k}: mixed weighted and unweighted edges")
        rows[s].append((d, w))
    if dedupe:
        for u in range(num_nodes):
            seen = set()
            kept = []
            for d, w in rows[u]:
                if d not in seen:
                    seen.add(d)
                    kept.append((d, w))
            rows[u] = kept
    num_edges = sum(len(r) for r in rows)
    row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    col_indices = np.zeros(num_edges, dtype=np.int64)
    weights = np.zeros(num_edges, dtype=np.float64) if has_weights else None
    pos = 0
    for u in range(num_nodes):
        for d, w in rows[u]:
            col_indices[pos] = d
            if weights is not None:
                weights[pos] = w
            pos += 1
        row_offsets[u + 1] = pos
    return CsrGraph(num_nodes, num_edges, row_offsets, col_indices, weights)


def validate_csr(g: CsrGraph) -> list:
    """Check every CsrGraph invariant; returns a report (empty iff valid)."""
    report = []
    ro = g.row_offsets
    if len(ro) != g.num_nodes + 1:
        report.append(f"row_offsets length {len(ro)} != num_nodes+1 "
                      f"({g.num_nodes + 1})")
        return report
    if ro[0] != 0:
        report.append(f"row_offsets[0] = {ro[0]}, expected 0")
    if ro[g.num_nodes] != g.num_edges:
        report.append(f"row_offsets[-1] = {ro[g.num_nodes]}, expected "
                      f"num_edges = {g.num_edges}")
    for i in range(1, len(ro)):
        if ro[i] < ro[i - 1]:
            report.append(f"row_offsets nonmonotonic at {i}")
            break
    if len(g.col_indices) != g.num_edges:
        report.append(f"col_indices length {len(g.col_indices)} != "
                      f"num_edges {g.num_edges}")
    bad = np.nonzero((g.col_indices < 0) | (g.col_indices >= g.num_nodes))[0]
    if len(bad):
        report.append(f"col index out of range at position {int(bad[0])} "
                      f"(value {int(g.col_indices[bad[0]])})")
    if g.num_nodes >= MAX_NODES:
        report.append(f"num_nodes {g.num_nodes} exceeds 24-bit limit")
    if g.weights is not None and len(g.weights) != g.num_edges:
        report.append(f"weights length {len(g.weights)} != num_edges "
                      f"{g.num_edges}")
    return report
