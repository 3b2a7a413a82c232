"""Semi-supervised NMF that preserves the nonnegative parts of classifier weights.

The loss is ``D(X, VH) + lam * D(XS, VHS)`` where the columns of ``S`` hold
the dual coefficients of support vectors split by label sign.  ``S`` is fixed
during the fit.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, DomainError, ParameterError
from .matrix import EPS, _xlogx_over, as_nonneg, factored_divergence, product
from .nmf import (Factorization, FitOptions, RatioMemo, _check_factors, _warn_rank, h_terms,
                  init_factors, run_updates, v_terms)

# auxiliary_bound materializes O(d * n * r * 2p) tensors
MAX_BOUND_ENTRIES = 10_000_000


@dataclass
class SupportMatrix:
    """``S`` (n x 2p): columns ``[a+ of model 1..p, a- of model 1..p]``.

    ``column_meta[j]`` is ``(model index, +1 or -1)`` for column ``j``.
    """
    S: np.ndarray
    p: int
    labeled_count: int
    column_meta: list = field(default_factory=list)


@dataclass
class SemiLossReport:
    reconstruction_term: float
    supervision_term: float
    lam: float
    total: float


def build_support_matrix(models, n, m):
    """Stack the split dual coefficients of ``models`` into an n x 2p matrix.

    ``models`` is a list of :class:`~nmfalpha.classifiers.LinearModel`; a
    ``None`` entry (a skipped classifier) contributes two zero columns.
    """
    if not 0 <= m <= n:
        raise ParameterError(f"need 0 <= m <= n, got m={m}, n={n}")
    p = len(models)
    S = np.zeros((n, 2 * p))
    for t, model in enumerate(models):
        if model is None:
            continue
        idx = np.asarray(model.indices, dtype=np.intp)
        alphas = np.asarray(model.alphas, dtype=np.float64)
        y = np.asarray(model.y, dtype=np.float64)
        if idx.size and (idx.min() < 0 or idx.max() >= m):
            raise IndexError(f"model {t} references an example outside the first {m} columns")
        if alphas.size and alphas.min() < 0:
            raise DomainError(f"model {t} has negative dual coefficients")
        # np.add.at tolerates repeated indices
        np.add.at(S[:, t], idx, alphas * np.maximum(0.0, y))
        np.add.at(S[:, p + t], idx, alphas * np.maximum(0.0, -y))
    for t, model in enumerate(models):
        if model is not None and not S[:, t].any() and not S[:, p + t].any():
            warnings.warn(f"model {t} has no nonzero dual coefficients", stacklevel=2)
    meta = [(t, +1) for t in range(p)] + [(t, -1) for t in range(p)]
    return SupportMatrix(S, p, m, meta)


def _as_s(S, n):
    if isinstance(S, SupportMatrix):
        S = S.S
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != n:
        raise DimensionError(f"S must have {n} rows, got shape {S.shape}")
    if S.size and S.min() < 0:
        raise DomainError("S contains negative entries")
    return S


def _check_lambda(lam):
    if not lam >= 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")


def _supervision_divergence(XS, VHS):
    return max(float(np.sum(_xlogx_over(XS, VHS) - XS + VHS)), 0.0)


def semi_loss(X, V, H, S, lam):
    """Evaluate both terms of the semi-supervised loss."""
    X = as_nonneg(X)
    _check_factors(X, V, H)
    S = _as_s(S, X.shape[1])
    _check_lambda(lam)
    return _semi_loss(X, V, H, S, lam, product(X, S))


def _semi_loss(X, V, H, S, lam, XS, recon=None):
    if recon is None:
        recon = factored_divergence(X, V, H)
    sup = _supervision_divergence(XS, V @ (H @ S))
    return SemiLossReport(recon, sup, float(lam), recon + lam * sup)


def _semi_v_step(X, V, H, S, lam, XS, R=None):
    num, den = v_terms(X, V, H, R)
    HS = H @ S
    Rs = XS / np.maximum(V @ HS, EPS)
    num_s = Rs @ HS.T
    den_s = HS.sum(axis=1)[np.newaxis, :]
    return V * ((num + lam * num_s) / np.maximum(den + lam * den_s, EPS))


def _semi_h_step(X, V, H, S, lam, XS):
    num, den = h_terms(X, V, H)
    Rs = XS / np.maximum(V @ (H @ S), EPS)
    num_s = (V.T @ Rs) @ S.T
    den_s = V.sum(axis=0)[:, np.newaxis] * S.sum(axis=1)[np.newaxis, :]
    return H * ((num + lam * num_s) / np.maximum(den + lam * den_s, EPS))


def update_semi(X, V, H, S, lam, XS=None):
    """One sweep of the semi-supervised multiplicative updates.

    All of V is updated from the snapshot ``(V, H)``; then all of H from
    ``(V_new, H)``.  With ``lam == 0`` or an all-zero ``S`` the result is
    bitwise identical to :func:`~nmfalpha.nmf.update_unsup`.
    """
    X = as_nonneg(X)
    _check_factors(X, V, H)
    S = _as_s(S, X.shape[1])
    _check_lambda(lam)
    if XS is None:
        XS = product(X, S)
    V_new = _semi_v_step(X, V, H, S, lam, XS)
    H_new = _semi_h_step(X, V_new, H, S, lam, XS)
    return V_new, H_new


def semi_factorize(X, S, r, lam, opts=None, init=None):
    """Fit ``X ~ V @ H`` under the semi-supervised loss with ``S`` held fixed.

    The returned ``loss_trace`` holds the total loss; with ``lam == 0`` it is
    identical to the trace of :func:`~nmfalpha.nmf.factorize` for the same seed.
    """
    opts = opts or FitOptions()
    X = as_nonneg(X)
    S = _as_s(S, X.shape[1])
    _check_lambda(lam)
    if r < 1:
        raise ParameterError("rank must be >= 1")
    _warn_rank(X, r)
    V, H = init if init is not None else init_factors(X.shape[0], X.shape[1], r, opts.seed)
    _check_factors(X, V, H)
    XS = product(X, S)
    memo = RatioMemo(X)

    def step(V, H):
        V = _semi_v_step(X, V, H, S, lam, XS, memo.ratio(V, H))
        return V, _semi_h_step(X, V, H, S, lam, XS)

    def loss(V, H):
        return _semi_loss(X, V, H, S, lam, XS, memo.loss(V, H)).total

    V, H, trace, it = run_updates(step, loss, V, H, opts)
    return Factorization(V, H, trace, opts.seed, it, float(lam), "nmf_alpha")


def canonical_weights(V, H, S):
    """Jensen weights that make the auxiliary bound tight at ``(V, H)``.

    Returns ``eta`` with shape (d, n, r) and ``psi`` with shape (d, 2p, n, r).
    """
    VH_k = V[:, np.newaxis, :] * H.T[np.newaxis, :, :]          # (d, n, r)
    eta = VH_k / np.maximum(VH_k.sum(axis=2, keepdims=True), EPS)
    VHS_k = VH_k[:, np.newaxis, :, :] * S.T[np.newaxis, :, :, np.newaxis]  # (d, 2p, n, r)
    psi = VHS_k / np.maximum(VHS_k.sum(axis=(2, 3), keepdims=True), EPS)
    return eta, psi


def _check_bound_size(X, V, S):
    d, n = X.shape
    size = d * n * V.shape[1] * max(S.shape[1], 1)
    if size > MAX_BOUND_ENTRIES:
        raise ParameterError(f"instance too large for the auxiliary bound ({size} > {MAX_BOUND_ENTRIES})")


def _weighted_log_terms(A, theta, log_denominator):
    """sum A * theta * log(A * theta / B) over entries where A * theta > 0."""
    at = A * theta
    pos = at > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(at[pos] * (np.log(at[pos]) - log_denominator[pos])))


def auxiliary_bound(X, V, H, S, lam, eta=None, psi=None):
    """Upper bound on the semi-supervised loss from Jensen's inequality.

    A verification tool for small instances.  ``eta`` (d, n, r) and ``psi``
    (d, 2p, n, r) must each sum to one over their trailing mixing axes; they
    default to the canonical choice, at which the bound equals the loss.

    Returns
    -------
    bound, loss : float
    """
    X = as_nonneg(X)
    _check_factors(X, V, H)
    S = _as_s(S, X.shape[1])
    _check_lambda(lam)
    _check_bound_size(X, V, S)
    Xd = X.toarray() if hasattr(X, "toarray") else X
    ceta, cpsi = canonical_weights(V, H, S)
    eta = ceta if eta is None else np.asarray(eta, dtype=np.float64)
    psi = cpsi if psi is None else np.asarray(psi, dtype=np.float64)
    if eta.shape != ceta.shape or psi.shape != cpsi.shape:
        raise DimensionError("eta / psi have the wrong shape")

    XS = Xd @ S
    VH = V @ H
    VHS = VH @ S
    with np.errstate(divide="ignore"):
        log_vh = np.log(V)[:, np.newaxis, :] + np.log(H.T)[np.newaxis, :, :]
        log_vhs = log_vh[:, np.newaxis, :, :] + np.log(S.T)[np.newaxis, :, :, np.newaxis]
    bound = _weighted_log_terms(Xd[:, :, np.newaxis], eta, log_vh) + float(np.sum(VH - Xd))
    if lam:
        bound += lam * (_weighted_log_terms(XS[:, :, np.newaxis, np.newaxis], psi, log_vhs)
                        + float(np.sum(VHS - XS)))
    loss = _semi_loss(Xd, V, H, S, lam, XS).total
    return bound, loss


def closed_form_v_step(X, V, H, S, lam):
    """Minimizer over V of the auxiliary bound built at ``(V, H)``.

    Evaluated directly from the Jensen weights, independently of the fast
    update path; the two agree to rounding error.
    """
    X = as_nonneg(X)
    _check_factors(X, V, H)
    S = _as_s(S, X.shape[1])
    _check_lambda(lam)
    _check_bound_size(X, V, S)
    Xd = X.toarray() if hasattr(X, "toarray") else X
    eta, psi = canonical_weights(V, H, S)
    XS = Xd @ S
    num = np.einsum("ij,ijk->ik", Xd, eta) + lam * np.einsum("il,iljk->ik", XS, psi)
    den = H.sum(axis=1) + lam * (H @ S).sum(axis=1)
    return num / np.maximum(den, EPS)[np.newaxis, :]
