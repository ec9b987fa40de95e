"""Multi-view structure fusion.

Each view contributes a Laplacian ``L_i`` and its bottom-``k`` spectral
embedding ``Y_i``. The fused embedding ``Y`` and the convex weights
``beta`` are found by alternating two sub-problems:

* with ``beta`` fixed, ``Y`` spans the bottom-``k`` eigenspace of
  ``M = sum_i beta_i L_i - alpha * sum_i Y_i Y_i^T``;
* with ``Y`` fixed, ``beta`` minimizes ``(sum_i beta_i a_i - alpha c)^2``
  over the probability simplex, where ``a_i = tr(Y^T L_i Y)`` and
  ``c = sum_i ||Y^T Y_i||_F^2``.

The fused adjacency is ``sum_i beta_i W_i``. Propagation fusion uses the
matrix product of the view adjacencies instead, and structure
propagation fusion adds the two.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .graph import Graph, Laplacian, build_laplacian
from .spectral import (
    DENSE_CUTOFF,
    DimensionError,
    LowRankUpdate,
    SpectralEmbedding,
    smallest_eigenpairs,
    spectral_embedding,
)

log = logging.getLogger(__name__)

ALPHA_BOUNDS = (1e-4, 10.0)
SIMPLEX_TOL = 1e-10


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5
    alpha_mode: str = "fixed"  # or "optimized"
    iterations: int = 5
    k: int | None = None  # None: resolved to the dataset's class count by callers
    loss_mode: str = "full"  # or "commonality_only"
    ridge_eps: float = 1e-8
    pf_scale_mode: str = "max_normalize"  # or "raw"
    dense_cutoff: int = DENSE_CUTOFF
    qp_max_iter: int = 10_000
    qp_tol: float = 1e-10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.ridge_eps < 0:
            raise ValueError("ridge_eps must be >= 0")
        if self.alpha_mode not in ("fixed", "optimized"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.loss_mode not in ("full", "commonality_only"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.pf_scale_mode not in ("max_normalize", "raw"):
            raise ValueError(f"unknown pf_scale_mode {self.pf_scale_mode!r}")


@dataclass(frozen=True, eq=False)
class FusionWeights:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ValueError("beta must be a nonempty vector")
        if beta.min() < -1e-12 or abs(beta.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"beta is not on the simplex: {beta}")
        object.__setattr__(self, "beta", np.clip(beta, 0.0, None))

    @classmethod
    def uniform(cls, m: int) -> FusionWeights:
        return cls(np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return self.beta.size


@dataclass(frozen=True)
class LossRecord:
    specificity: float
    commonality: float
    objective: float


@dataclass(frozen=True, eq=False)
class FusionResult:
    W: Graph
    weights: FusionWeights
    alpha: float
    Y: SpectralEmbedding
    loss_trace: list = field(default_factory=list)


def _laplacian_matrix(lap):
    return lap.matrix if isinstance(lap, Laplacian) else lap


def _check_views(laplacians, view_embeddings=None, beta=None):
    if not laplacians:
        raise DimensionError("need at least one view")
    n = _laplacian_matrix(laplacians[0]).shape[0]
    for lap in laplacians:
        if _laplacian_matrix(lap).shape != (n, n):
            raise DimensionError("views disagree on the node count")
    if view_embeddings is not None and len(view_embeddings) != len(laplacians):
        raise DimensionError("one embedding per view is required")
    if beta is not None and len(beta) != len(laplacians):
        raise DimensionError(f"got {len(beta)} weights for {len(laplacians)} views")


def _beta_array(beta) -> np.ndarray:
    return beta.beta if isinstance(beta, FusionWeights) else np.asarray(beta, dtype=np.float64)


def _vectors(y) -> np.ndarray:
    return y.vectors if isinstance(y, SpectralEmbedding) else np.asarray(y, dtype=np.float64)


def view_traces(Y, laplacians) -> np.ndarray:
    """``a_i = tr(Y^T L_i Y)`` for every view."""
    y = _vectors(Y)
    return np.array([float(np.sum(y * (_laplacian_matrix(lap) @ y))) for lap in laplacians])


def view_overlap(Y, view_embeddings) -> float:
    """``c = sum_i tr(Y Y^T Y_i Y_i^T) = sum_i ||Y^T Y_i||_F^2``."""
    y = _vectors(Y)
    return float(sum(np.sum((y.T @ _vectors(yi)) ** 2) for yi in view_embeddings))


def specificity_loss(Y, laplacians, beta) -> float:
    b = _beta_array(beta)
    _check_views(laplacians, beta=b)
    if _vectors(Y).shape[0] != _laplacian_matrix(laplacians[0]).shape[0]:
        raise DimensionError("embedding and Laplacians disagree on the node count")
    return float(b @ view_traces(Y, laplacians))


def commonality_loss(Y, view_embeddings) -> float:
    """Summed squared Grassmann distance to each view, less the constant ``k m``."""
    y = _vectors(Y)
    for yi in view_embeddings:
        if _vectors(yi).shape != y.shape:
            raise DimensionError(f"shape mismatch: {_vectors(yi).shape} vs {y.shape}")
    return -view_overlap(y, view_embeddings)


def fusion_operator(beta, alpha: float, laplacians, view_embeddings,
                    loss_mode: str = "full") -> LowRankUpdate:
    """``M = sum_i beta_i L_i - alpha sum_i Y_i Y_i^T`` in sparse-plus-low-rank form."""
    b = _beta_array(beta)
    _check_views(laplacians, view_embeddings, b)
    n = _laplacian_matrix(laplacians[0]).shape[0]
    if loss_mode == "commonality_only":
        base = sp.csr_matrix((n, n))
    else:
        base = sp.csr_matrix(sum(bi * _laplacian_matrix(lap) for bi, lap in zip(b, laplacians)))
    factor = np.hstack([_vectors(yi) for yi in view_embeddings])
    return LowRankUpdate(base, factor, -float(alpha))


def fuse_embedding(beta, alpha: float, laplacians, view_embeddings, k: int,
                   loss_mode: str = "full", dense_cutoff: int = DENSE_CUTOFF) -> SpectralEmbedding:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    op = fusion_operator(beta, alpha, laplacians, view_embeddings, loss_mode)
    return smallest_eigenpairs(op, k, dense_cutoff=dense_cutoff)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{x : x >= 0, sum(x) = 1}`` (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def weight_objective(beta, alpha: float, traces, overlap: float, ridge_eps: float = 0.0) -> float:
    b = np.asarray(beta, dtype=np.float64)
    r = float(traces @ b) - alpha * overlap
    return r * r + ridge_eps * float(np.sum((b - 1.0 / b.size) ** 2))


def _solve_weights(traces, overlap, alpha, ridge_eps, optimize_alpha, max_iter, tol):
    m = traces.size
    beta = np.full(m, 1.0 / m)
    if m == 1 and not optimize_alpha:
        return beta, alpha
    center = np.full(m, 1.0 / m)
    # separate Lipschitz steps per block; the traces and the overlap can
    # differ by orders of magnitude, so a shared step would stall beta
    lip = 2.0 * float(traces @ traces) + 2.0 * ridge_eps
    step = 1.0 / lip if lip > 0 else 1.0
    alpha_step = 1.0 / (2.0 * overlap * overlap) if overlap > 0 else 0.0
    lo, hi = ALPHA_BOUNDS
    for _ in range(max_iter):
        r = float(traces @ beta) - alpha * overlap
        grad = 2.0 * r * traces + 2.0 * ridge_eps * (beta - center)
        new_beta = project_simplex(beta - step * grad)
        new_alpha = alpha
        if optimize_alpha:
            # block-coordinate: the alpha step sees the updated beta
            r = float(traces @ new_beta) - alpha * overlap
            new_alpha = float(np.clip(alpha + alpha_step * 2.0 * r * overlap, lo, hi))
        moved = max(np.max(np.abs(new_beta - beta)), abs(new_alpha - alpha))
        beta, alpha = new_beta, new_alpha
        if moved <= tol:
            break
    return beta, alpha


def optimize_weights(Y, laplacians, view_embeddings, alpha: float, ridge_eps: float = 1e-8,
                     max_iter: int = 10_000, tol: float = 1e-10) -> FusionWeights:
    """Projected gradient descent for the weight sub-problem with ``alpha`` held fixed."""
    _check_views(laplacians, view_embeddings)
    traces = view_traces(Y, laplacians)
    overlap = view_overlap(Y, view_embeddings)
    beta, _ = _solve_weights(traces, overlap, alpha, ridge_eps, False, max_iter, tol)
    return FusionWeights(_renormalize(beta))


def optimize_weights_and_alpha(Y, laplacians, view_embeddings, alpha: float,
                               ridge_eps: float = 1e-8, max_iter: int = 10_000,
                               tol: float = 1e-10):
    """Joint projected descent over ``beta`` on the simplex and ``alpha`` in ``ALPHA_BOUNDS``."""
    _check_views(laplacians, view_embeddings)
    traces = view_traces(Y, laplacians)
    overlap = view_overlap(Y, view_embeddings)
    beta, alpha = _solve_weights(traces, overlap, alpha, ridge_eps, True, max_iter, tol)
    return FusionWeights(_renormalize(beta)), alpha


def _renormalize(beta):
    beta = np.clip(beta, 0.0, None)
    return beta / beta.sum()


def _check_graphs(graphs):
    if not graphs:
        raise ValueError("need at least one graph")
    n = graphs[0].n
    for g in graphs:
        if g.n != n:
            raise DimensionError(f"graphs disagree on the node count ({g.n} vs {n})")


def combine(graphs, weights) -> Graph:
    """Convex combination ``sum_i beta_i W_i``.

    Identical inputs come back unchanged whatever the weights.
    """
    b = _beta_array(weights)
    first = graphs[0]
    if all(g is first or g == first for g in graphs[1:]):
        return first
    total = sum(bi * g.adj for bi, g in zip(b, graphs))
    return Graph.from_matrix(total)


def structure_fusion(graphs, cfg: FusionConfig, view_embeddings=None) -> FusionResult:
    """Alternate the embedding and weight steps for ``cfg.iterations`` rounds.

    ``view_embeddings`` may be passed to reuse per-view embeddings computed
    earlier with the same ``k``.
    """
    _check_graphs(graphs)
    if cfg.k is None:
        raise ValueError("FusionConfig.k must be set before fusing")
    m = len(graphs)
    laplacians = [build_laplacian(g) for g in graphs]
    if view_embeddings is None:
        view_embeddings = [spectral_embedding(g, cfg.k, dense_cutoff=cfg.dense_cutoff) for g in graphs]
    weights = FusionWeights.uniform(m)
    alpha = cfg.alpha
    trace = []
    Y = None
    for it in range(cfg.iterations):
        Y = fuse_embedding(weights, alpha, laplacians, view_embeddings, cfg.k,
                           loss_mode=cfg.loss_mode, dense_cutoff=cfg.dense_cutoff)
        if cfg.loss_mode == "full":
            if cfg.alpha_mode == "optimized":
                weights, alpha = optimize_weights_and_alpha(
                    Y, laplacians, view_embeddings, alpha, cfg.ridge_eps,
                    cfg.qp_max_iter, cfg.qp_tol)
            else:
                weights = optimize_weights(Y, laplacians, view_embeddings, alpha,
                                           cfg.ridge_eps, cfg.qp_max_iter, cfg.qp_tol)
        spec = specificity_loss(Y, laplacians, weights)
        comm = commonality_loss(Y, view_embeddings)
        record = LossRecord(spec, comm, (spec + alpha * comm) ** 2)
        log.debug("fusion iter %d: beta=%s alpha=%.4g %s", it, weights.beta, alpha, record)
        trace.append(record)
    return FusionResult(combine(graphs, weights), weights, alpha, Y, trace)


def propagation_fusion(graphs, cfg: FusionConfig | None = None) -> Graph:
    """Product of the view adjacencies, symmetrized, diagonal zeroed.

    With ``pf_scale_mode="max_normalize"`` the result is scaled to a
    maximum entry of 1. A single view is returned unchanged.
    """
    cfg = cfg or FusionConfig()
    _check_graphs(graphs)
    if len(graphs) == 1:
        return graphs[0]
    prod = graphs[0].adj
    for g in graphs[1:]:
        prod = prod @ g.adj
    prod = sp.csr_matrix(0.5 * (prod + prod.T))
    prod.setdiag(0)
    prod.eliminate_zeros()
    if cfg.pf_scale_mode == "max_normalize" and prod.nnz:
        prod = prod / prod.max()
    return Graph.from_matrix(prod)


def structure_propagation_fusion(graphs, cfg: FusionConfig, sf: FusionResult | None = None,
                                 view_embeddings=None) -> FusionResult:
    """Structure fusion plus propagation fusion, summed entrywise.

    Pass a precomputed ``sf`` result to skip re-running the alternation.
    """
    if sf is None:
        sf = structure_fusion(graphs, cfg, view_embeddings)
    pf = propagation_fusion(graphs, cfg)
    return replace(sf, W=Graph.from_matrix(sf.W.adj + pf.adj))
