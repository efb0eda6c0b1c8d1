"""Immutable undirected graphs over interned node names.

Edges come from whitespace-separated text files (``<src><TAB><dst>`` per
line, ``#`` comments allowed).  Node names are interned to dense indices in
order of first appearance, self-loops and duplicate edges are dropped, and
adjacency is stored in compressed sparse row form: an offset array plus one
flat neighbor array sorted within each row.  A loaded graph is therefore
fully determined by the input file.

``DirectedEdges`` keeps the raw follow direction; it feeds sentence
generation and the out-degree activity filter, both of which need the
directed view that the undirected ``Graph`` deliberately discards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EdgeListParseError, EmptyGraphError, ValidationError

__all__ = [
    "DirectedEdges",
    "Graph",
    "load_directed_edges",
    "load_edge_list",
    "write_edge_list",
    "write_node_map",
]


def _csr_from_arcs(n: int, src: np.ndarray, dst: np.ndarray):
    """Deduplicate directed arcs and pack them into CSR arrays."""
    if len(src) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    keys = np.unique(src.astype(np.int64) * np.int64(n) + dst.astype(np.int64))
    src_u = keys // n
    dst_u = keys % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src_u, minlength=n), out=indptr[1:])
    return indptr, dst_u


@dataclass
class Graph:
    """Undirected graph in CSR form.

    ``names[i]`` is the external name of dense index ``i``; ``indices``
    holds every directed arc (each undirected edge appears twice), grouped
    by source via ``indptr`` and sorted within each group.  Instances are
    immutable after construction and safe to share across workers.
    """

    names: list[str]
    indptr: np.ndarray
    indices: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False)
    _arc_sources: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.names)}
        if len(self._index) != len(self.names):
            raise ValidationError("duplicate node names in interning table")
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def build(cls, names: Sequence[str], pairs: Iterable[tuple[int, int]],
              mirror: bool = True) -> "Graph":
        """Build a graph from index pairs.

        Self-loops and duplicates are dropped.  With ``mirror`` the reverse
        of every pair is added; otherwise the pair set must already be
        symmetric and a ``ValidationError`` is raised if it is not.
        """
        n = len(names)
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ValidationError("edge endpoint out of range")
        arr = arr[arr[:, 0] != arr[:, 1]]
        if mirror:
            arr = np.concatenate([arr, arr[:, ::-1]]) if arr.size else arr
        indptr, indices = _csr_from_arcs(n, arr[:, 0], arr[:, 1])
        g = cls(list(names), indptr, indices)
        if not mirror:
            fwd = g.indptr, g.indices
            rev_ptr, rev_idx = _csr_from_arcs(n, arr[:, 1], arr[:, 0])
            if not (np.array_equal(fwd[0], rev_ptr) and np.array_equal(fwd[1], rev_idx)):
                raise ValidationError(
                    "edge list is not symmetric; load with symmetrize=True")
        return g

    @property
    def node_count(self) -> int:
        return len(self.names)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def arc_sources(self) -> np.ndarray:
        """Source index of every stored arc, aligned with ``indices``."""
        if self._arc_sources is None:
            src = np.repeat(np.arange(self.node_count, dtype=np.int64), self.degrees)
            src.setflags(write=False)
            self._arc_sources = src
        return self._arc_sources

    def neighbors(self, v: int) -> np.ndarray:
        """Sorted neighbor indices of ``v`` (an O(1) CSR slice)."""
        if not 0 <= v < self.node_count:
            raise IndexError(f"node index {v} out of range [0, {self.node_count})")
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        if not 0 <= v < self.node_count:
            raise IndexError(f"node index {v} out of range [0, {self.node_count})")
        return int(self.indptr[v + 1] - self.indptr[v])

    def index_of(self, name: str) -> int:
        return self._index[name]

    def name_of(self, v: int) -> str:
        return self.names[v]

    def __contains__(self, name: str) -> bool:
        return name in self._index


@dataclass
class DirectedEdges:
    """Raw directed follow relation, deduplicated, self-loops dropped."""

    names: list[str]
    out_indptr: np.ndarray
    out_indices: np.ndarray
    in_indptr: np.ndarray
    in_indices: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.names)}

    @property
    def node_count(self) -> int:
        return len(self.names)

    def out_neighbors(self, v: int) -> np.ndarray:
        return self.out_indices[self.out_indptr[v]:self.out_indptr[v + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        return self.in_indices[self.in_indptr[v]:self.in_indptr[v + 1]]

    def out_degree(self, v: int) -> int:
        return int(self.out_indptr[v + 1] - self.out_indptr[v])

    def index_of(self, name: str) -> int:
        return self._index[name]


def _parse_edge_lines(path) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 2:
                raise EdgeListParseError(
                    path, line_no, f"expected 2 tokens, got {len(tokens)}")
            pairs.append((tokens[0], tokens[1]))
    if not pairs:
        raise EmptyGraphError(f"no edges found in {path}")
    return pairs


def _intern(pairs: Iterable[tuple[str, str]]):
    """Assign dense indices in order of first appearance (source first)."""
    names: list[str] = []
    index: dict[str, int] = {}
    for u, v in pairs:
        for token in (u, v):
            if token not in index:
                index[token] = len(names)
                names.append(token)
    return names, index


def load_edge_list(path, min_degree: int = 0, symmetrize: bool = True) -> Graph:
    """Load an undirected graph from a directed edge-list file.

    ``min_degree`` drops nodes whose raw out-degree (count of distinct
    non-self follow targets) is below the threshold, together with all
    their incident edges, before the graph is made undirected.  Nodes that
    appear only as targets have out-degree 0 and are dropped whenever the
    filter is on.

    With ``symmetrize`` (the default) the reverse of every surviving edge
    is added; ``symmetrize=False`` expects a file that already lists both
    directions and fails if it does not.
    """
    if min_degree < 0:
        raise ValidationError(f"min_degree must be >= 0, got {min_degree}")
    pairs = _parse_edge_lines(path)
    if min_degree > 0:
        follows: dict[str, set[str]] = {}
        for u, v in pairs:
            if u != v:
                follows.setdefault(u, set()).add(v)
        kept = {name for name, targets in follows.items() if len(targets) >= min_degree}
        pairs = [(u, v) for u, v in pairs if u in kept and v in kept]
        if not pairs:
            raise EmptyGraphError(
                f"min_degree={min_degree} filter removed every edge of {path}")
    names, index = _intern(pairs)
    return Graph.build(names, [(index[u], index[v]) for u, v in pairs],
                       mirror=symmetrize)


def load_directed_edges(path) -> DirectedEdges:
    """Load the raw directed follow relation from an edge-list file."""
    pairs = _parse_edge_lines(path)
    names, index = _intern(pairs)
    n = len(names)
    arr = np.asarray([(index[u], index[v]) for u, v in pairs], dtype=np.int64)
    arr = arr[arr[:, 0] != arr[:, 1]]
    out_ptr, out_idx = _csr_from_arcs(n, arr[:, 0], arr[:, 1])
    in_ptr, in_idx = _csr_from_arcs(n, arr[:, 1], arr[:, 0])
    return DirectedEdges(names, out_ptr, out_idx, in_ptr, in_idx)


def write_edge_list(g: Graph, path) -> None:
    """Write each undirected edge once, ordered by dense index pair."""
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(g.node_count):
            for v in g.neighbors(u):
                if v > u:
                    fh.write(f"{g.names[u]}\t{g.names[v]}\n")


def write_node_map(g: Graph, path) -> None:
    """Write the interning table, one ``<dense-index><TAB><name>`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(g.names):
            fh.write(f"{i}\t{name}\n")
