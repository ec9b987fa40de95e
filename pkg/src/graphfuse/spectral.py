"""Smallest eigenpairs, spectral embeddings and Grassmann distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import Graph, Laplacian, build_laplacian

DENSE_CUTOFF = 3000
SYMMETRY_TOL = 1e-10
RESIDUAL_TOL = 1e-8


class DimensionError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralEmbedding:
    """Orthonormal ``n x k`` basis with its ascending eigenvalues."""

    vectors: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.T


@dataclass(frozen=True, eq=False)
class LowRankUpdate:
    """Symmetric operator ``base + scale * U U^T`` with sparse ``base``.

    The fused-embedding matrix is a weighted Laplacian sum minus a scaled
    sum of view projectors, which has exactly this form with ``U`` the
    horizontally stacked view bases.
    """

    base: sp.csr_matrix
    factor: np.ndarray
    scale: float

    @property
    def shape(self):
        return self.base.shape

    def matvec(self, x):
        return self.base @ x + self.scale * (self.factor @ (self.factor.T @ x))

    def toarray(self) -> np.ndarray:
        dense = self.base.toarray()
        dense += self.scale * (self.factor @ self.factor.T)
        return dense

    def norm_bound(self) -> float:
        # ||U U^T||_2 <= ||U||_F^2
        return spla.norm(self.base, 1) + abs(self.scale) * float(np.sum(self.factor**2))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _as_operator(matrix):
    if isinstance(matrix, Laplacian):
        return matrix.matrix
    if isinstance(matrix, (LowRankUpdate, np.ndarray)) or sp.issparse(matrix):
        return matrix
    return np.asarray(matrix, dtype=np.float64)


def _check_symmetric(op):
    if isinstance(op, LowRankUpdate):
        base = op.base
    else:
        base = op
    if sp.issparse(base):
        diff = abs(base - base.T)
        worst = diff.max() if diff.nnz else 0.0
    else:
        worst = np.max(np.abs(base - base.T)) if base.size else 0.0
    if worst > SYMMETRY_TOL:
        raise SymmetryError(f"matrix is not symmetric (max |A - A^T| = {worst:.3g})")


def _dense_eigh(op, k: int):
    if isinstance(op, LowRankUpdate) or sp.issparse(op):
        dense = op.toarray()
    else:
        dense = np.array(op, dtype=np.float64)
    # symmetrize away rounding so LAPACK sees an exactly symmetric input
    dense = 0.5 * (dense + dense.T)
    vals, vecs = la.eigh(dense, subset_by_index=[0, k - 1], driver="evr")
    return vals, vecs


def _lower_shift(op) -> float:
    # Gershgorin-style bound for the base, plus the negative part of the update.
    if isinstance(op, LowRankUpdate):
        base = op.base
        low_rank = min(op.scale, 0.0) * float(np.sum(op.factor**2))
    else:
        base = op
        low_rank = 0.0
    diag = base.diagonal()
    off = np.asarray(abs(base).sum(axis=1)).ravel() - np.abs(diag)
    gersh = float(np.min(diag - off)) if base.shape[0] else 0.0
    return min(gersh, 0.0) + low_rank


def _shift_invert_operator(op, sigma: float):
    """``(op - sigma I)^{-1}`` as a LinearOperator, via Woodbury for low-rank updates."""
    n = op.shape[0]
    base = op.base if isinstance(op, LowRankUpdate) else op
    shifted = sp.csc_matrix(base - sigma * sp.identity(n))
    lu = spla.splu(shifted)
    if not isinstance(op, LowRankUpdate) or op.factor.shape[1] == 0 or op.scale == 0:
        return spla.LinearOperator((n, n), matvec=lu.solve, dtype=np.float64)
    u = op.factor
    ainv_u = lu.solve(np.asfortranarray(u))
    capacitance = np.eye(u.shape[1]) / op.scale + u.T @ ainv_u
    cap_factor = la.lu_factor(capacitance)

    def solve(x):
        y = lu.solve(np.asarray(x, dtype=np.float64).ravel())
        return y - ainv_u @ la.lu_solve(cap_factor, u.T @ y)

    return spla.LinearOperator((n, n), matvec=solve, dtype=np.float64)


def _iterative_eigh(op, k: int, seed: int = 0):
    n = op.shape[0]
    sigma = _lower_shift(op) - 1e-3
    opinv = _shift_invert_operator(op, sigma)
    if isinstance(op, LowRankUpdate):
        a = spla.LinearOperator((n, n), matvec=op.matvec, dtype=np.float64)
    else:
        a = op
    v0 = np.random.default_rng(seed).standard_normal(n)
    vals, vecs = spla.eigsh(a, k=k, sigma=sigma, which="LM", OPinv=opinv, v0=v0, tol=0)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    # Rayleigh-Ritz cleanup on the converged basis
    q, _ = np.linalg.qr(vecs)
    aq = np.column_stack([op.matvec(q[:, j]) if isinstance(op, LowRankUpdate) else op @ q[:, j]
                          for j in range(k)])
    small = q.T @ aq
    vals, rot = np.linalg.eigh(0.5 * (small + small.T))
    return vals, q @ rot


def _op_norm(op) -> float:
    if isinstance(op, LowRankUpdate):
        return op.norm_bound()
    if sp.issparse(op):
        return float(spla.norm(op, 1))
    return float(np.linalg.norm(op, 1))


def _residual(op, vals, vecs) -> np.ndarray:
    if isinstance(op, LowRankUpdate):
        av = op.base @ vecs + op.scale * (op.factor @ (op.factor.T @ vecs))
    else:
        av = op @ vecs
    return np.linalg.norm(av - vecs * vals, axis=0)


def smallest_eigenpairs(matrix, k: int, dense_cutoff: int = DENSE_CUTOFF) -> SpectralEmbedding:
    """The ``k`` eigenpairs of smallest eigenvalue of a symmetric matrix.

    ``matrix`` may be a :class:`Laplacian`, a dense array, a scipy sparse
    matrix or a :class:`LowRankUpdate`. Inputs with at most ``dense_cutoff``
    rows go through a dense LAPACK solve; larger ones use shift-invert
    Lanczos. Columns are sign-normalized so that the largest-magnitude
    entry of each is positive.
    """
    op = _as_operator(matrix)
    n = op.shape[0]
    if op.shape[0] != op.shape[1]:
        raise DimensionError(f"matrix must be square, got {op.shape}")
    if not 1 <= k <= n:
        raise DimensionError(f"need 1 <= k <= n, got k={k}, n={n}")
    _check_symmetric(op)

    if n <= dense_cutoff or k >= n - 1:
        vals, vecs = _dense_eigh(op, k)
    else:
        vals, vecs = _iterative_eigh(op, k)
        res = _residual(op, vals, vecs)
        bound = RESIDUAL_TOL * max(_op_norm(op), 1.0)
        if np.any(res > bound):
            raise ConvergenceError(
                f"eigen residual {res.max():.3g} exceeds {bound:.3g}")
    return SpectralEmbedding(_fix_signs(vecs), vals)


def spectral_embedding(g: Graph, k: int, dense_cutoff: int = DENSE_CUTOFF) -> SpectralEmbedding:
    return smallest_eigenpairs(build_laplacian(g), k, dense_cutoff=dense_cutoff)


def _basis(y) -> np.ndarray:
    return y.vectors if isinstance(y, SpectralEmbedding) else np.asarray(y, dtype=np.float64)


def grassmann_distance_sq(y, z) -> float:
    """Squared projection distance ``k - ||Y^T Z||_F^2`` between two subspaces.

    Equals the sum of squared sines of the principal angles. Accepts
    embeddings or raw orthonormal arrays.
    """
    a, b = _basis(y), _basis(z)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    k = a.shape[1]
    # average both orders so the result is exactly symmetric in its arguments
    overlap = 0.5 * (np.sum((a.T @ b) ** 2) + np.sum((b.T @ a) ** 2))
    return float(min(max(k - overlap, 0.0), k))
