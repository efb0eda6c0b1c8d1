"""Demographic inference over following graphs.

The package covers the full pipeline: edge-list ingestion into an immutable
undirected graph, bulk-synchronous label propagation (with exponential-decay
and two-channel accumulator variants), ensemble propagation features,
neighbor-sentence embeddings, shallow classifiers, a planted-partition
synthetic-data harness, and a CLI that orchestrates experiments.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DivergenceError, ValidationError
from .graph import Graph, load_edge_list

__all__ = [
    "ConfigError",
    "DivergenceError",
    "Graph",
    "ValidationError",
    "load_edge_list",
    "__version__",
]
