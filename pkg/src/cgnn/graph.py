"""Graph containers and the normalized/regularized propagation operators.

The symmetric normalization S = D^(-1/2) Adj D^(-1/2) keeps the spectrum
in [-1, 1]; the regularized operator A = diag(alpha) (gamma I + (1-gamma) S)
shrinks it into [0, max(alpha)] so that A - I is a stable drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Invalid graph structure or graph-file contents."""


@dataclass
class Graph:
    """Simple undirected graph: 0-based node indices, each edge stored once as (u, v) with u < v."""

    num_nodes: int
    edges: list[tuple[int, int]]

    def __post_init__(self) -> None:
        if self.num_nodes < 0:
            raise GraphError(f"num_nodes must be nonnegative, got {self.num_nodes}")
        seen = set()
        canon = []
        for u, v in self.edges:
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise GraphError(
                    f"edge ({u}, {v}) out of range for {self.num_nodes} nodes"
                )
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add(key)
            canon.append(key)
        self.edges = sorted(canon)

    @classmethod
    def from_edges(cls, num_nodes: int, pairs, *, allow_duplicates: bool = True) -> "Graph":
        """Build a Graph from raw (possibly bidirectional / repeated) pairs.

        Symmetrizes and deduplicates; self-loops always raise.
        """
        seen = set()
        for u, v in pairs:
            u, v = int(u), int(v)
            if u == v:
                raise GraphError(f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen and not allow_duplicates:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add(key)
        return cls(num_nodes=num_nodes, edges=sorted(seen))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


def load_edge_list(path: str | Path, num_nodes: int | None = None) -> Graph:
    """Read an edge-list file: one edge per line, two 0-based ints separated by one tab.

    If num_nodes is None it is inferred as max index + 1.
    """
    edges = []
    max_idx = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: non-integer index in {line!r}") from exc
            if u < 0 or v < 0:
                raise GraphError(f"{path}:{lineno}: negative index in {line!r}")
            edges.append((u, v))
            max_idx = max(max_idx, u, v)
    n = num_nodes if num_nodes is not None else max_idx + 1
    return Graph.from_edges(n, edges)


@dataclass
class SymNormAdj:
    """Symmetric-normalized adjacency stored as canonical (row, col, value) triples.

    Triples are sorted by (row, col); entry (i, j) = 1/sqrt(d_i d_j) iff the
    edge exists. Degree-0 nodes get all-zero rows/columns (0^(-1/2) taken as 0).
    Treat as immutable after construction.
    """

    num_nodes: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    _csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def to_csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.vals, (self.rows, self.cols)),
                shape=(self.num_nodes, self.num_nodes),
            )
        return self._csr

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_nodes, self.num_nodes))
        dense[self.rows, self.cols] = self.vals
        return dense

    def matmul(self, h: np.ndarray) -> np.ndarray:
        return self.to_csr() @ h


def build_sym_norm(graph: Graph) -> SymNormAdj:
    """D^(-1/2) Adj D^(-1/2) for a validated simple graph."""
    deg = graph.degrees().astype(float)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])

    m = len(graph.edges)
    rows = np.empty(2 * m, dtype=np.int64)
    cols = np.empty(2 * m, dtype=np.int64)
    for k, (u, v) in enumerate(graph.edges):
        rows[2 * k], cols[2 * k] = u, v
        rows[2 * k + 1], cols[2 * k + 1] = v, u
    vals = inv_sqrt[rows] * inv_sqrt[cols]

    order = np.lexsort((cols, rows))
    return SymNormAdj(
        num_nodes=graph.num_nodes,
        rows=rows[order],
        cols=cols[order],
        vals=vals[order],
    )


@dataclass
class PropagationOperator:
    """A = diag(alpha) (gamma I + (1 - gamma) S): per-node diffusion rates alpha
    in (0,1), self-loop weight gamma in (0,1).

    Spectral radius is at most max(alpha); with scalar alpha and gamma = 1/2
    this is exactly (alpha/2)(I + S).
    """

    base: SymNormAdj
    alpha: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim == 0:
            self.alpha = np.full(self.base.num_nodes, float(self.alpha))
        if self.alpha.shape != (self.base.num_nodes,):
            raise GraphError(
                f"alpha has shape {self.alpha.shape}, expected ({self.base.num_nodes},)"
            )
        if np.any(self.alpha <= 0.0) or np.any(self.alpha >= 1.0):
            raise GraphError("alpha entries must lie strictly in (0, 1)")
        if not (0.0 < self.gamma < 1.0):
            raise GraphError(f"gamma must lie strictly in (0, 1), got {self.gamma}")

    @property
    def num_nodes(self) -> int:
        return self.base.num_nodes

    def neighbor_mix(self, h: np.ndarray) -> np.ndarray:
        """(gamma I + (1 - gamma) S) h — the operator without the alpha scaling."""
        self._check_rows(h)
        return self.gamma * h + (1.0 - self.gamma) * self.base.matmul(h)

    def apply(self, h: np.ndarray) -> np.ndarray:
        """A h without materializing A."""
        return self.alpha[:, None] * self.neighbor_mix(h)

    def apply_transpose(self, h: np.ndarray) -> np.ndarray:
        """A^T h; uses S = S^T, so A^T = (gamma I + (1 - gamma) S) diag(alpha)."""
        self._check_rows(h)
        scaled = self.alpha[:, None] * h
        return self.gamma * scaled + (1.0 - self.gamma) * self.base.matmul(scaled)

    def to_dense(self) -> np.ndarray:
        n = self.num_nodes
        mix = self.gamma * np.eye(n) + (1.0 - self.gamma) * self.base.to_dense()
        return self.alpha[:, None] * mix

    def _check_rows(self, h: np.ndarray) -> None:
        if h.ndim != 2 or h.shape[0] != self.num_nodes:
            raise GraphError(
                f"state has shape {h.shape}, expected ({self.num_nodes}, width)"
            )


def regularize(s: SymNormAdj, alpha, gamma: float) -> PropagationOperator:
    """Attach diffusion rates and a self-loop weight to a normalized adjacency."""
    return PropagationOperator(base=s, alpha=np.asarray(alpha, dtype=float), gamma=float(gamma))
