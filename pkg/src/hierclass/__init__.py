"""Hierarchical multi-label text classification over pooled token embeddings.

Library layout:

- ``ontology``: taxonomy parsing, ancestor expansion, child masks, index maps
- ``corpus``: page ingestion, stratified splits, interleaved slice schedule
- ``encoder``: deterministic hash encoder, EMB1 embedding files, pooling
- ``heads``: linear / multi-level / GRU classifier heads with analytic gradients
- ``trainer``: losses, Adam, warmup schedule, training loop, gradient checks
- ``decision``: score-to-label-set strategies and threshold tuning
- ``metrics``: micro/macro P-R-F1, per-label tables, error taxonomy
- ``synthetic``: separable synthetic corpus generator for desk-scale runs
- ``cli``: command-line entry point wiring the above
"""

from hierclass.ontology import (
    Ontology,
    ancestors,
    child_mask,
    expand_gold,
    load_ene,
    parse_ontology,
)

__all__ = [
    "Ontology",
    "ancestors",
    "child_mask",
    "expand_gold",
    "load_ene",
    "parse_ontology",
]

__version__ = "0.1.0"
