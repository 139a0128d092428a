"""Uncentered PCA subspaces, canonical angles and orthogonal degree."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateFeatureError

# Above this ambient dimension the m x m Gram matrix is decomposed instead
# of the k x k autocorrelation matrix.
DENSE_DIM_LIMIT = 1024
RANK_RTOL = 1e-10
NORM_EPS = 1e-12


@dataclass(frozen=True)
class Subspace:
    """Orthonormal basis (k x d) with the matching autocorrelation spectrum."""

    basis: np.ndarray
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    def project(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        return (vectors @ self.basis) @ self.basis.T


BasisLike = Union[Subspace, np.ndarray]


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm < NORM_EPS:
        raise DegenerateFeatureError("degenerate feature: vector norm is zero")
    return v / norm


def _stack(vectors: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        if vectors.size == 0:
            raise ValueError("empty feature set")
        return np.atleast_2d(vectors).astype(np.float64, copy=False)
    rows = [np.ravel(np.asarray(v, dtype=np.float64)) for v in vectors]
    if not rows:
        raise ValueError("empty feature set")
    if len({r.shape[0] for r in rows}) != 1:
        raise ValueError("dimension mismatch")
    return np.vstack(rows)


def uncentered_pca(vectors, max_dim: int | None = None) -> Subspace:
    """Span the rows of ``vectors`` (m x k) without mean removal.

    The basis holds the leading eigenvectors of sum_i v_i v_i^T.  The
    retained dimension is the numerical rank (eigenvalues above
    ``1e-10 * lambda_max``) capped by ``max_dim`` (default m).
    """
    X = _stack(vectors)
    m, k = X.shape
    if max_dim is None:
        max_dim = m
    if max_dim < 1:
        raise ValueError("max_dim must be >= 1")

    if k <= DENSE_DIM_LIMIT:
        evals, evecs = np.linalg.eigh(X.T @ X)
        evals, evecs = evals[::-1], evecs[:, ::-1]
    else:
        evals, u = np.linalg.eigh(X @ X.T)
        evals, u = evals[::-1], u[:, ::-1]
        keep = evals > RANK_RTOL * max(evals[0], 0.0)
        evecs = (X.T @ u[:, keep]) / np.sqrt(evals[keep])
        # re-orthonormalize; column order (and nested spans) is preserved
        q, r = np.linalg.qr(evecs)
        evecs = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
        evals = evals[keep]

    evals = np.clip(evals, 0.0, None)
    if evals.size == 0 or evals[0] <= 0.0:
        raise DegenerateFeatureError("degenerate feature: all vectors are zero")
    rank = int(np.count_nonzero(evals > RANK_RTOL * evals[0]))
    d = max(1, min(max_dim, rank, m, k))
    return Subspace(
        basis=np.ascontiguousarray(evecs[:, :d]),
        eigenvalues=evals[:d].copy(),
    )


def _basis(b: BasisLike) -> np.ndarray:
    return b.basis if isinstance(b, Subspace) else np.atleast_2d(np.asarray(b, dtype=np.float64))


def canonical_cosines(V: BasisLike, W: BasisLike, n_c: int) -> np.ndarray:
    """Cosines of the ``n_c`` smallest canonical angles, largest first."""
    A, B = _basis(V), _basis(W)
    if A.shape[0] != B.shape[0]:
        raise ValueError("dimension mismatch")
    if n_c < 1 or n_c > min(A.shape[1], B.shape[1]):
        raise ValueError("requested angles exceed subspace dimension")
    s = np.linalg.svd(A.T @ B, compute_uv=False)
    return np.clip(s[:n_c], 0.0, 1.0)


def orthogonal_degree(V: BasisLike, W: BasisLike, n_c: int, normalization: str = "mean") -> float:
    """1 - similarity, where similarity sums the squared canonical cosines.

    ``mean`` divides the sum by ``n_c`` (result in [0, 1]); ``sum`` keeps
    the raw sum and can go negative when ``n_c > 1``.
    """
    cos2 = canonical_cosines(V, W, n_c) ** 2
    if normalization == "mean":
        return float(1.0 - cos2.sum() / n_c)
    if normalization == "sum":
        return float(1.0 - cos2.sum())
    raise ValueError(f"unknown normalization {normalization!r}")


def lp_responsibility(v: np.ndarray, v_masked: np.ndarray, p: float = 2) -> float:
    v = np.ravel(np.asarray(v, dtype=np.float64))
    v_masked = np.ravel(np.asarray(v_masked, dtype=np.float64))
    if v.shape != v_masked.shape:
        raise ValueError("dimension mismatch")
    if p < 1:
        raise ValueError("norm order must be >= 1")
    ref = np.linalg.norm(v, ord=p)
    if ref < NORM_EPS:
        raise DegenerateFeatureError("degenerate reference feature")
    return float(np.clip(np.linalg.norm(v - v_masked, ord=p) / ref, 0.0, 1.0))
