"""Cycle-approximate SIMT GPU memory simulator with an index reorder unit.

Subpackages:
    graph     -- CSR graphs, loaders and synthetic generators
    gpu       -- warp coalescing, caches, NoC and the cycle engine
    iru       -- the per-partition index reorder unit model
    workloads -- BFS / SSSP / PageRank in baseline and reordered variants
    metrics   -- counters, comparison reports, CSV/JSON emission
    cli       -- experiment driver
"""

__version__ = "0.1.0"
