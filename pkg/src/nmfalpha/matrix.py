"""Nonnegative matrix storage, products and the I-divergence.

Data matrices are plain ``numpy.ndarray`` objects (dense) or
``scipy.sparse.csc_matrix`` objects (sparse by column).  Every function in
the package accepts either and returns float64 results.
"""
import numpy as np
import scipy.sparse as sp
from scipy.special import xlogy

from .exceptions import DimensionError, DomainError

# floor applied to every denominator / log argument built from a model product
EPS = 1e-12

# inputs with a smaller fraction of nonzeros are stored sparse
SPARSE_DENSITY = 0.25


def is_sparse(X):
    return sp.issparse(X)


def as_nonneg(X, name="X"):
    """Validate ``X`` as a nonnegative float64 matrix.

    Dense input is returned as a C-contiguous 2-d float64 array; sparse input
    as a canonical ``csc_matrix`` (sorted row indices, duplicates summed,
    explicit zeros removed).  The input is never modified in place.
    """
    if sp.issparse(X):
        X = sp.csc_matrix(X, dtype=np.float64, copy=True)
        X.sum_duplicates()
        X.eliminate_zeros()
        X.sort_indices()
        data = X.data
    else:
        X = np.array(X, dtype=np.float64, copy=True, ndmin=2)
        if X.ndim != 2:
            raise DimensionError(f"{name} must be 2-dimensional, got shape {X.shape}")
        data = X
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{name} contains non-finite values")
    if data.size and data.min() < 0:
        raise DomainError(f"{name} contains negative entries")
    return X


def as_dense(A, name="A"):
    """Return ``A`` as a 2-d float64 array (values of any sign)."""
    if sp.issparse(A):
        return A.toarray().astype(np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {A.shape}")
    return A


def density(X):
    n_total = X.shape[0] * X.shape[1]
    if n_total == 0:
        return 0.0
    nnz = X.nnz if sp.issparse(X) else np.count_nonzero(X)
    return nnz / n_total


def to_storage(X, threshold=SPARSE_DENSITY):
    """Pick sparse-by-column storage when density is below ``threshold``."""
    X = as_nonneg(X)
    if density(X) < threshold:
        return X if sp.issparse(X) else sp.csc_matrix(X)
    return X.toarray() if sp.issparse(X) else X


def product(A, B):
    """Matrix product for any mix of dense and sparse operands.

    The result is dense unless both operands are sparse.
    """
    if A.shape[1] != B.shape[0]:
        raise DimensionError(f"cannot multiply {A.shape} by {B.shape}")
    out = A @ B
    if sp.issparse(out) and not (sp.issparse(A) and sp.issparse(B)):
        out = out.toarray()
    return np.asarray(out) if not sp.issparse(out) else out


def _coords(X):
    """Row and column indices of the stored entries of a csc matrix."""
    rows = X.indices
    cols = np.repeat(np.arange(X.shape[1]), np.diff(X.indptr))
    return rows, cols


def product_at(V, H, rows, cols):
    """Entries ``(V @ H)[rows, cols]`` without forming the full product."""
    return np.einsum("ij,ij->i", V[rows], H[:, cols].T)


def _xlogx_over(x, w):
    # xlogy gives 0 * log(0 / w) = 0
    return xlogy(x, x / np.maximum(w, EPS))


def i_divergence(X, W):
    """Generalized KL (I-) divergence ``sum X log(X/W) - X + W``.

    Parameters
    ----------
    X : array or sparse matrix, nonnegative
    W : array or sparse matrix, nonnegative, same shape as ``X``

    Returns
    -------
    float
        Nonnegative; exactly zero when ``X`` and ``W`` are identical.
    """
    if X.shape != W.shape:
        raise DimensionError(f"shape mismatch: {X.shape} vs {W.shape}")
    X = as_nonneg(X, "X")
    W = as_nonneg(W, "W")
    if sp.issparse(W):
        W = W.toarray()
    if sp.issparse(X):
        terms = W.copy()
        rows, cols = _coords(X)
        x = X.data
        w = W[rows, cols]
        terms[rows, cols] = _xlogx_over(x, w) - x + w
    else:
        terms = _xlogx_over(X, W) - X + W
    # rounding can leave a tiny negative total
    return max(float(terms.sum()), 0.0)


def ratio_and_divergence(X, V, H):
    """``X / max(V @ H, EPS)`` together with the I-divergence between ``X`` and ``V @ H``.

    The ratio is sparse with the pattern of ``X`` when ``X`` is sparse; in
    that case ``V @ H`` is only evaluated at stored entries and the remaining
    mass enters through ``sum(V @ H) = colsum(V) . rowsum(H)``.
    """
    if sp.issparse(X):
        rows, cols = _coords(X)
        x = X.data
        w = product_at(V, H, rows, cols)
        r = x / np.maximum(w, EPS)
        total_w = float(V.sum(axis=0) @ H.sum(axis=1))
        R = sp.csc_matrix((r, X.indices, X.indptr), shape=X.shape)
        return R, max(float(np.sum(xlogy(x, r) - x)) + total_w, 0.0)
    W = V @ H
    R = X / np.maximum(W, EPS)
    return R, max(float(np.sum(xlogy(X, R) - X + W)), 0.0)


def factored_divergence(X, V, H):
    """I-divergence between ``X`` and ``V @ H`` without densifying a sparse ``X``."""
    return ratio_and_divergence(X, V, H)[1]


def divergence_ratio(X, V, H):
    """``X / max(V @ H, EPS)``, sparse with the pattern of ``X`` when ``X`` is sparse."""
    return ratio_and_divergence(X, V, H)[0]
