"""Inner-product preserving embedding ``Z = (V^T V)^{1/2} H``.

Includes a small cyclic Jacobi eigensolver for the r x r Gram matrix.
"""
import warnings

import numpy as np

from .exceptions import DimensionError, DomainError

SYMMETRY_TOL = 1e-10
CLAMP_TOL = 1e-10
NEGATIVE_TOL = 1e-6


def jacobi_eigh(M, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.  Each eigenvector is signed so that its
    largest-magnitude component is nonnegative.
    """
    A = np.array(M, dtype=np.float64)
    n = A.shape[0]
    Q = np.eye(n)
    scale = np.linalg.norm(A)
    if scale > 0:
        for _ in range(max_sweeps):
            off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
            if off < tol * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    app, aqq = A[p, p], A[q, q]
                    g = 100.0 * abs(apq)
                    if abs(app) + g == abs(app) and abs(aqq) + g == abs(aqq):
                        # negligible next to the diagonal: drop it
                        A[p, q] = A[q, p] = 0.0
                        continue
                    diff = aqq - app
                    if abs(diff) + g == abs(diff):
                        t = apq / diff          # tan(phi) ~ 1 / (2 theta) for huge theta
                    else:
                        theta = diff / (2.0 * apq)
                        t = np.copysign(1.0, theta) / (abs(theta) + np.hypot(theta, 1.0))
                    c = 1.0 / np.hypot(t, 1.0)
                    s = t * c
                    ap, aq = A[:, p].copy(), A[:, q].copy()
                    A[:, p] = c * ap - s * aq
                    A[:, q] = s * ap + c * aq
                    ap, aq = A[p, :].copy(), A[q, :].copy()
                    A[p, :] = c * ap - s * aq
                    A[q, :] = s * ap + c * aq
                    A[p, q] = A[q, p] = 0.0
                    qp, qq = Q[:, p].copy(), Q[:, q].copy()
                    Q[:, p] = c * qp - s * qq
                    Q[:, q] = s * qp + c * qq
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    w, Q = w[order], Q[:, order]
    for k in range(n):
        j = np.argmax(np.abs(Q[:, k]))
        if Q[j, k] < 0:
            Q[:, k] = -Q[:, k]
    return w, Q


def spd_sqrt(M):
    """Symmetric square root of a positive semi-definite matrix.

    Eigenvalues in ``[-1e-6 ||M||, 0)`` are treated as rounding noise and
    clamped to zero; anything more negative raises :class:`DomainError`.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    norm = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > SYMMETRY_TOL * max(norm, np.finfo(float).tiny):
        raise DomainError("matrix is not symmetric")
    w, Q = jacobi_eigh(0.5 * (M + M.T))
    spectral = np.max(np.abs(w)) if w.size else 0.0
    if w.size and w.min() < -NEGATIVE_TOL * spectral:
        raise DomainError(f"matrix has a negative eigenvalue {w.min():.3g}")
    if w.size and w.min() < -CLAMP_TOL * spectral:
        warnings.warn(f"clamping eigenvalue {w.min():.3g} to zero", stacklevel=2)
    root = np.sqrt(np.maximum(w, 0.0))
    out = (Q * root) @ Q.T
    return 0.5 * (out + out.T)


def embedding_map(V):
    """The r x r matrix ``(V^T V)^{1/2}`` that maps coefficients to ``Z``."""
    V = np.asarray(V, dtype=np.float64)
    return spd_sqrt(V.T @ V)


def inner_product_embedding(fact, H=None):
    """``Z = (V^T V)^{1/2} H`` for a :class:`~nmfalpha.nmf.Factorization`.

    Pass ``H`` to embed coefficients other than ``fact.H`` (e.g. folded-in
    test columns) under the same basis.
    """
    H = fact.H if H is None else H
    return embedding_map(fact.V) @ H
