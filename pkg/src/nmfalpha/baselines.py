"""Comparison methods: regression-coupled SSNMF, class-constrained CNMF, PCA and LDA.

Both NMF baselines use the squared Frobenius loss with Lee-Seung style
multiplicative updates.  Labeled examples are the first ``m`` columns of
``X``, matching the columns of the label matrix ``Y`` (classes x m).
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DimensionError, ParameterError
from .matrix import EPS, as_nonneg
from .nmf import Factorization, FitOptions, _warn_rank, init_factors, run_updates

# above this size PCA switches from a dense Gram eigendecomposition to svds
DENSE_GRAM_LIMIT = 2000


@dataclass
class CnmfFactors:
    Q: np.ndarray            # r x classes
    H_unlabeled: np.ndarray  # r x (n - m)


@dataclass
class PCA:
    components: np.ndarray   # d x r, orthonormal columns
    mean: np.ndarray         # d
    variances: np.ndarray    # r, eigenvalues of the (biased) sample covariance

    def transform(self, X):
        proj = np.asarray((X.T @ self.components).T)
        return proj - (self.components.T @ self.mean)[:, np.newaxis]


def label_matrix(labels, classes=None):
    """Binary indicator matrix (classes x m) from class ids or label sets."""
    labels = list(labels)
    is_sets = bool(labels) and not np.isscalar(labels[0])
    if classes is None:
        classes = sorted(set().union(*map(set, labels))) if is_sets else sorted(set(labels))
    pos = {c: k for k, c in enumerate(classes)}
    Y = np.zeros((len(classes), len(labels)))
    for j, lab in enumerate(labels):
        for c in (lab if is_sets else (lab,)):
            Y[pos[c], j] = 1.0
    return Y


def frobenius_sq(X, V, H):
    """``||X - V H||^2`` without densifying a sparse ``X``."""
    if sp.issparse(X):
        cross = float(np.sum(np.asarray((X.T @ V).T) * H))
        return max(float(X.multiply(X).sum()) - 2.0 * cross
                   + float(np.sum((V.T @ V) * (H @ H.T))), 0.0)
    return float(np.sum((X - V @ H) ** 2))


def _mu(A, num, den):
    return A * (num / np.maximum(den, EPS))


def _split_y(X, Y):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] > X.shape[1]:
        raise DimensionError(f"Y must be (classes x m) with m <= n, got {Y.shape}")
    return Y, Y.shape[1]


def ssnmf_lee_factorize(X, Y, r, lam, opts=None):
    """Minimize ``||X - VH||^2 + lam ||Y - U H[:, :m]||^2``.

    Returns the factorization (``loss_trace`` holds the full objective) and
    the regression matrix ``U`` (classes x r).
    """
    opts = opts or FitOptions()
    if not lam >= 0:
        raise ParameterError("lambda must be >= 0")
    X = as_nonneg(X)
    Y, m = _split_y(X, Y)
    _warn_rank(X, r)
    V, H = init_factors(X.shape[0], X.shape[1], r, opts.seed)
    U = 0.1 + np.random.default_rng([opts.seed, 1]).random((Y.shape[0], r))
    state = {"U": U}

    def objective(V, H):
        HL = H[:, :m]
        return frobenius_sq(X, V, H) + lam * float(np.sum((Y - state["U"] @ HL) ** 2))

    def step(V, H):
        V = _mu(V, np.asarray(X @ H.T), V @ (H @ H.T))
        U = state["U"]
        HL = H[:, :m]
        U = _mu(U, Y @ HL.T, U @ (HL @ HL.T))
        num = np.asarray((X.T @ V).T)
        den = (V.T @ V) @ H
        num[:, :m] += lam * (U.T @ Y)
        den[:, :m] += lam * ((U.T @ U) @ HL)
        state["U"] = U
        return V, _mu(H, num, den)

    V, H, trace, it = run_updates(step, objective, V, H, opts)
    fact = Factorization(V, H, trace, opts.seed, it, float(lam), "ssnmf")
    return fact, state["U"]


def _constraint_matrix(Y, n):
    c, m = Y.shape
    return sp.block_diag([sp.csr_matrix(Y), sp.identity(n - m, format="csr")], format="csr") \
        if n > m else sp.csr_matrix(Y)


def cnmf_liu_factorize(X, Y, r, opts=None):
    """Minimize ``||X - V P A||^2`` with ``A = diag(Y, I)``.

    Labeled columns of ``H = P A`` are ``Q Y``, so labeled examples of the
    same class share one coefficient vector.  With ``m = 0`` this is plain
    Frobenius NMF.
    """
    opts = opts or FitOptions()
    X = as_nonneg(X)
    Y, m = _split_y(X, Y)
    d, n = X.shape
    c = Y.shape[0]
    _warn_rank(X, r)
    if m == 0:
        c = 0
        A = sp.identity(n, format="csr")
    else:
        A = _constraint_matrix(Y, n)
    AAt = (A @ A.T).toarray()
    XAt = A @ X.T
    XAt = (XAt.toarray() if sp.issparse(XAt) else np.asarray(XAt)).T
    V, P = init_factors(d, A.shape[0], r, opts.seed)

    def H_of(P):
        return np.asarray((A.T @ P.T).T)

    def step(V, P):
        H = H_of(P)
        V = _mu(V, np.asarray(X @ H.T), V @ (H @ H.T))
        P = _mu(P, V.T @ XAt, (V.T @ V) @ P @ AAt)
        return V, P

    V, P, trace, it = run_updates(step, lambda V, P: frobenius_sq(X, V, H_of(P)), V, P, opts)
    fact = Factorization(V, H_of(P), trace, opts.seed, it, 0.0, "cnmf")
    return fact, CnmfFactors(P[:, :c].copy(), P[:, c:].copy())


def _sign_fix(W):
    for k in range(W.shape[1]):
        j = np.argmax(np.abs(W[:, k]))
        if W[j, k] < 0:
            W[:, k] = -W[:, k]
    return W


def pca_fit(X, r):
    """Top-``r`` principal directions of the columns of ``X``.

    Works from whichever Gram matrix (d x d or n x n) is smaller; centering is
    folded into the Gram algebra so sparse input is never densified.
    """
    d, n = X.shape
    if not 1 <= r <= min(d, n):
        raise ParameterError(f"need 1 <= r <= min(d, n) = {min(d, n)}, got {r}")
    mean = np.asarray(X.mean(axis=1)).ravel()
    if min(d, n) > DENSE_GRAM_LIMIT:
        return _pca_svds(X, r, mean)
    if d <= n:
        G = X @ X.T
        G = G.toarray() if sp.issparse(G) else np.asarray(G)
        C = (G - n * np.outer(mean, mean)) / n
        w, U = np.linalg.eigh(0.5 * (C + C.T))
        order = np.argsort(-w)[:r]
        return PCA(_sign_fix(U[:, order]), mean, np.maximum(w[order], 0.0))
    K = X.T @ X
    K = K.toarray() if sp.issparse(K) else np.asarray(K)
    rowmean = K.mean(axis=0)
    Kc = K - rowmean[np.newaxis, :] - rowmean[:, np.newaxis] + K.mean()
    w, U = np.linalg.eigh(0.5 * (Kc + Kc.T))
    order = np.argsort(-w)[:r]
    w, U = np.maximum(w[order], 0.0), U[:, order]
    keep = w > 1e-12 * max(w.max(), EPS)
    comps = np.zeros((d, r))
    for k in np.flatnonzero(keep):
        u = U[:, k]
        comps[:, k] = (np.asarray(X @ u).ravel() - mean * u.sum()) / np.sqrt(w[k])
    comps = _complete_basis(comps, keep)
    return PCA(_sign_fix(comps), mean, w / n)


def _complete_basis(comps, keep):
    """Fill zero-variance slots with unit vectors orthogonal to the rest."""
    if keep.all():
        return comps
    d = comps.shape[0]
    basis = comps[:, keep]
    for k in np.flatnonzero(~keep):
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            v = e - basis @ (basis.T @ e)
            if np.linalg.norm(v) > 1e-6:
                comps[:, k] = v / np.linalg.norm(v)
                basis = np.column_stack([basis, comps[:, k]])
                break
    return comps


def _pca_svds(X, r, mean):
    d, n = X.shape
    ones = np.ones(n)
    op = spla.LinearOperator(
        (d, n), dtype=np.float64,
        matvec=lambda v: np.asarray(X @ v).ravel() - mean * v.sum(),
        rmatvec=lambda u: np.asarray(X.T @ u).ravel() - ones * (mean @ u))
    U, s, _ = spla.svds(op, k=r, random_state=0)
    order = np.argsort(-s)
    return PCA(_sign_fix(U[:, order]), mean, s[order] ** 2 / n)


def lda_fit(X, y, r):
    """Fisher discriminant directions from labeled columns ``X`` (d x m).

    Within-class scatter is regularized by ``1e-6 * trace(S_w) / d``.  The
    problem is solved inside the span of the centered examples, which holds
    every direction with nonzero between-class scatter.  Returns unit-norm
    directions as the columns of a d x r matrix.
    """
    y = np.asarray(y)
    classes = sorted(np.unique(y).tolist())
    c = len(classes)
    if c < 2:
        raise ParameterError("LDA needs at least two classes")
    if not 1 <= r <= c - 1:
        raise ParameterError(f"LDA yields at most {c - 1} directions, asked for {r}")
    d, m = X.shape
    if y.shape[0] != m:
        raise DimensionError(f"{m} examples but {y.shape[0]} labels")
    mu = np.asarray(X.mean(axis=1)).ravel()
    K = X.T @ X
    K = K.toarray() if sp.issparse(K) else np.asarray(K)
    rowmean = K.mean(axis=0)
    Kc = K - rowmean[np.newaxis, :] - rowmean[:, np.newaxis] + K.mean()
    s2, U = np.linalg.eigh(0.5 * (Kc + Kc.T))
    keep = s2 > 1e-10 * max(s2.max(), EPS)
    s, U = np.sqrt(s2[keep]), U[:, keep]
    # coordinates of the centered examples in an orthonormal basis of their span
    coords = (U * s).T                                   # q x m
    Sw = np.zeros((coords.shape[0],) * 2)
    Sb = np.zeros_like(Sw)
    for cls in classes:
        block = coords[:, y == cls]
        mc = block.mean(axis=1)
        dev = block - mc[:, np.newaxis]
        Sw += dev @ dev.T
        Sb += block.shape[1] * np.outer(mc, mc)
    reg = 1e-6 * np.trace(Sw) / d
    if reg <= 0:
        reg = EPS
    evals, A = scipy.linalg.eigh(Sb, Sw + reg * np.eye(Sw.shape[0]))
    A = A[:, np.argsort(-evals)[:r]]
    # back to input space: B = Xc U diag(1/s)
    coef = U @ (A / s[:, np.newaxis])                    # m x r
    W = np.asarray(X @ coef) - np.outer(mu, coef.sum(axis=0))
    W /= np.maximum(np.linalg.norm(W, axis=0), EPS)
    return _sign_fix(W)
