"""Sparse symmetric graph algebra.

Graphs are stored as symmetric CSR adjacency matrices with an empty
diagonal. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

SYMMETRY_TOL = 1e-10


class GraphError(ValueError):
    """Raised when an adjacency matrix violates the graph invariants."""


def _canonical(mat) -> sp.csr_matrix:
    mat = sp.csr_matrix(mat, dtype=np.float64)
    mat.eliminate_zeros()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph over nodes ``0..n-1``.

    ``adj`` is symmetric, nonnegative and has no stored diagonal entries.
    Use :meth:`from_edges` or :meth:`from_matrix` rather than the raw
    constructor unless the matrix is already canonical.
    """

    adj: sp.csr_matrix

    def __post_init__(self):
        adj = self.adj
        if adj.shape[0] != adj.shape[1]:
            raise GraphError(f"adjacency must be square, got {adj.shape}")
        if adj.shape[0] < 1:
            raise GraphError("graph needs at least one node")
        if adj.nnz:
            if adj.data.min() < 0:
                raise GraphError("edge weights must be nonnegative")
            if not np.all(np.isfinite(adj.data)):
                raise GraphError("edge weights must be finite")
            if np.any(adj.diagonal() != 0):
                raise GraphError("self-loops are not allowed")
            asym = abs(adj - adj.T)
            if asym.nnz and asym.max() > SYMMETRY_TOL:
                raise GraphError("adjacency is not symmetric")

    @classmethod
    def from_matrix(cls, mat, strip_self_loops: bool = True) -> Graph:
        mat = _canonical(mat)
        if strip_self_loops:
            mat.setdiag(0)
            mat = _canonical(mat)
        return cls(mat)

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> Graph:
        """Build from ``(i, j)`` pairs.

        Self-loops are dropped. Repeated unweighted pairs collapse to a single
        unit edge; repeated weighted pairs have their weights summed.
        """
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphError("edge endpoint out of range")
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
        keep = edges[:, 0] != edges[:, 1]
        edges, w = edges[keep], w[keep]
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        upper = _canonical(sp.coo_matrix((w, (lo, hi)), shape=(n, n)))
        if weights is None:
            upper.data[:] = 1.0
        return cls(_canonical(upper + upper.T))

    @classmethod
    def empty(cls, n: int) -> Graph:
        return cls(sp.csr_matrix((n, n), dtype=np.float64))

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def num_edges(self) -> int:
        return sp.triu(self.adj, k=1).nnz

    def edges(self) -> np.ndarray:
        """Upper-triangle edge list as an ``(E, 2)`` array sorted by ``(i, j)``."""
        upper = sp.triu(self.adj, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)

    def entries(self):
        """Yield ``(i, j, w)`` with ``i < j``."""
        upper = sp.triu(self.adj, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        for idx in order:
            yield int(upper.row[idx]), int(upper.col[idx]), float(upper.data[idx])

    def weight(self, i: int, j: int) -> float:
        return float(self.adj[i, j])

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adj.sum(axis=1)).ravel()

    def permute(self, perm) -> Graph:
        """Relabel nodes so that old node ``perm[i]`` becomes node ``i``."""
        perm = np.asarray(perm)
        return Graph(_canonical(self.adj[perm][:, perm]))

    def __eq__(self, other):
        if not isinstance(other, Graph) or other.n != self.n:
            return NotImplemented if not isinstance(other, Graph) else False
        diff = self.adj != other.adj
        return diff.nnz == 0


@dataclass(frozen=True, eq=False)
class Laplacian:
    matrix: sp.csr_matrix
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass(frozen=True, eq=False)
class PropagationMatrix:
    """Renormalized GCN operator ``D~^{-1/2} (W + I) D~^{-1/2}``."""

    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_laplacian(g: Graph) -> Laplacian:
    deg = g.degrees()
    mat = _canonical(sp.diags(deg) - g.adj)
    return Laplacian(mat, deg)


def renormalize(g: Graph) -> PropagationMatrix:
    w_tilde = g.adj + sp.identity(g.n, format="csr")
    d_tilde = np.asarray(w_tilde.sum(axis=1)).ravel()
    scale = sp.diags(1.0 / np.sqrt(d_tilde))
    return PropagationMatrix(_canonical(scale @ w_tilde @ scale))


def cosine_similarity_graph(features, threshold: float = 0.8, inclusive: bool = True,
                            block_size: int = 1024) -> Graph:
    """Unit-weight graph joining nodes whose feature cosine similarity passes ``threshold``.

    ``inclusive`` selects ``>=`` (default) or ``>``. Rows with zero norm get
    no edges. Similarities are computed ``block_size`` rows at a time so
    Pubmed-sized inputs never materialize the full ``n x n`` matrix.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    x = sp.csr_matrix(features, dtype=np.float64)
    n = x.shape[0]
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    inv = np.zeros_like(norms)
    nz = norms > 0
    inv[nz] = 1.0 / norms[nz]
    xn = sp.diags(inv) @ x
    xt = xn.T.tocsc()
    rows, cols = [], []
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        # strict upper triangle only; symmetrized below
        sim = np.triu((xn[start:stop] @ xt).toarray(), k=start + 1)
        hit = sim >= threshold if inclusive else sim > threshold
        r, c = np.nonzero(hit)
        rows.append(r + start)
        cols.append(c)
    r = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    upper = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n)).tocsr()
    return Graph(_canonical(upper + upper.T))


def remove_test_structure(g: Graph, test_mask, fraction: float, seed: int) -> Graph:
    """Delete a seeded random ``floor(fraction * E_test)`` of the edges touching test nodes.

    ``E_test`` counts undirected edges with at least one endpoint in
    ``test_mask`` (a boolean mask or an index collection).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return g
    mask = np.zeros(g.n, dtype=bool)
    test_mask = np.asarray(test_mask)
    if test_mask.dtype == bool:
        mask[:] = test_mask
    else:
        mask[test_mask.astype(np.int64)] = True
    edges = g.edges()
    eligible = np.flatnonzero(mask[edges[:, 0]] | mask[edges[:, 1]])
    count = int(np.floor(fraction * len(eligible)))
    if count == 0:
        return g
    rng = np.random.default_rng(seed)
    drop = edges[rng.choice(eligible, size=count, replace=False)]
    cut = sp.coo_matrix((np.ones(count), (drop[:, 0], drop[:, 1])), shape=g.adj.shape).tocsr()
    cut = (cut + cut.T) > 0
    kept = g.adj - g.adj.multiply(cut)
    return Graph(_canonical(kept))
