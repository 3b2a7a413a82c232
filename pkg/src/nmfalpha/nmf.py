"""Unsupervised NMF under the I-divergence with multiplicative updates."""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, ParameterError
from .matrix import EPS, as_nonneg, divergence_ratio, ratio_and_divergence


@dataclass
class FitOptions:
    max_iterations: int = 500
    relative_tolerance: float = 1e-6
    seed: int = 0
    loss_record_stride: int = 1

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ParameterError("max_iterations must be >= 1")
        if not self.relative_tolerance >= 0:
            raise ParameterError("relative_tolerance must be >= 0")
        if int(self.loss_record_stride) < 1:
            raise ParameterError("loss_record_stride must be >= 1")


@dataclass
class Factorization:
    """Result of a fit: ``X ~ V @ H``.

    ``loss_trace[0]`` is the loss at initialization; later entries follow every
    ``loss_record_stride``-th iteration, and the last entry is always the final
    loss.
    """
    V: np.ndarray
    H: np.ndarray
    loss_trace: list = field(default_factory=list)
    seed: int = 0
    iterations_run: int = 0
    lam: float = 0.0
    kind: str = "nmf"

    @property
    def rank(self):
        return self.V.shape[1]


def init_factors(d, n, r, seed):
    """I.i.d. uniform draws from (0.1, 1.1) for ``V`` (d x r) and ``H`` (r x n)."""
    if min(d, n, r) < 1:
        raise DimensionError(f"dimensions must be positive, got d={d}, n={n}, r={r}")
    rng = np.random.default_rng(seed)
    V = 0.1 + rng.random((d, r))
    H = 0.1 + rng.random((r, n))
    return V, H


def _check_factors(X, V, H):
    d, n = X.shape
    if V.ndim != 2 or H.ndim != 2 or V.shape[0] != d or H.shape[1] != n or V.shape[1] != H.shape[0]:
        raise DimensionError(f"inconsistent shapes: X {X.shape}, V {V.shape}, H {H.shape}")


def v_terms(X, V, H, R=None):
    """Numerator and denominator of the V multiplicative update.

    ``R`` may carry a precomputed ``divergence_ratio(X, V, H)``.
    """
    R = divergence_ratio(X, V, H) if R is None else R
    num = np.asarray(R @ H.T)
    den = H.sum(axis=1)[np.newaxis, :]
    return num, den


def h_terms(X, V, H):
    """Numerator and denominator of the H multiplicative update."""
    R = divergence_ratio(X, V, H)
    num = np.asarray((R.T @ V).T)
    den = V.sum(axis=0)[:, np.newaxis]
    return num, den


def update_v(X, V, H):
    num, den = v_terms(X, V, H)
    return V * (num / np.maximum(den, EPS))


def update_h(X, V, H):
    num, den = h_terms(X, V, H)
    return H * (num / np.maximum(den, EPS))


def update_unsup(X, V, H):
    """One alternating sweep: all of V from the incoming H, then all of H from the new V."""
    _check_factors(X, V, H)
    V_new = update_v(X, V, H)
    H_new = update_h(X, V_new, H)
    return V_new, H_new


class RatioMemo:
    """Keeps ``X / VH`` from the latest loss evaluation for the V step that follows."""

    def __init__(self, X):
        self.X = X
        self.key = None
        self.R = None

    def loss(self, V, H):
        self.R, value = ratio_and_divergence(self.X, V, H)
        self.key = (V, H)
        return value

    def ratio(self, V, H):
        if self.key is not None and self.key[0] is V and self.key[1] is H:
            return self.R
        return None


def run_updates(step, loss, V, H, opts):
    """Shared outer loop: iterate ``step`` until the relative loss change
    drops below tolerance or the iteration budget is spent."""
    stride = int(opts.loss_record_stride)
    prev = loss(V, H)
    trace = [prev]
    it = 0
    for it in range(1, int(opts.max_iterations) + 1):
        V, H = step(V, H)
        cur = loss(V, H)
        stop = cur == 0.0 or abs(prev - cur) <= opts.relative_tolerance * abs(prev)
        if it % stride == 0 or stop or it == opts.max_iterations:
            trace.append(cur)
        prev = cur
        if stop:
            break
    return V, H, trace, it


def _warn_rank(X, r):
    if r > min(X.shape):
        warnings.warn(f"rank {r} exceeds min(d, n) = {min(X.shape)}", stacklevel=3)


def factorize(X, r, opts=None, init=None):
    """Fit ``X ~ V @ H`` by minimizing the I-divergence.

    Parameters
    ----------
    X : array or sparse matrix, shape (d, n)
        Nonnegative data, one example per column.
    r : int
        Number of basis vectors.
    opts : FitOptions, optional
    init : tuple of arrays, optional
        Starting ``(V, H)``; drawn with :func:`init_factors` when omitted.

    Returns
    -------
    Factorization
    """
    opts = opts or FitOptions()
    X = as_nonneg(X)
    if r < 1:
        raise ParameterError("rank must be >= 1")
    _warn_rank(X, r)
    V, H = init if init is not None else init_factors(X.shape[0], X.shape[1], r, opts.seed)
    _check_factors(X, V, H)
    memo = RatioMemo(X)

    def step(V, H):
        num, den = v_terms(X, V, H, memo.ratio(V, H))
        V = V * (num / np.maximum(den, EPS))
        return V, update_h(X, V, H)

    V, H, trace, it = run_updates(step, memo.loss, V, H, opts)
    return Factorization(V, H, trace, opts.seed, it, 0.0, "nmf")


def fold_in(X, V, iterations=100, seed=0):
    """Coefficients for new columns ``X`` with the basis ``V`` held fixed."""
    X = as_nonneg(X)
    if X.shape[0] != V.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but V has {V.shape[0]}")
    rng = np.random.default_rng(seed)
    H = 0.1 + rng.random((V.shape[1], X.shape[1]))
    for _ in range(iterations):
        H = update_h(X, V, H)
    return H
