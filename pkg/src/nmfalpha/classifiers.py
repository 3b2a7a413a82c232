"""Linear large-margin classifiers that expose their dual coefficients.

Examples are the *columns* of the input matrix throughout.  Every model keeps
``w = sum_i alpha_i y_i x_i`` over the original coordinates; the bias comes
from an appended constant feature and is kept separately in ``bias``.
"""
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import DegenerateLabelError, DimensionError, DomainError, ParameterError


@dataclass
class SVMOptions:
    tol: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0


@dataclass
class LinearModel:
    """A linear classifier ``sign(w . x + bias)`` with its dual representation.

    ``indices[k]`` is the column (example) index of the k-th dual coefficient
    ``alphas[k]``, whose label is ``y[k]``.  Only nonzero coefficients are kept.
    """
    w: np.ndarray
    bias: float
    indices: np.ndarray
    alphas: np.ndarray
    y: np.ndarray
    C: float = np.inf
    converged: bool = False

    def decision_function(self, Z):
        Z = Z if sp.issparse(Z) else np.asarray(Z, dtype=np.float64)
        if Z.shape[0] != self.w.shape[0]:
            raise DimensionError(f"model expects {self.w.shape[0]} features, got {Z.shape[0]}")
        return np.asarray(Z.T @ self.w).ravel() + self.bias


@dataclass
class WeightDecomposition:
    w_plus: np.ndarray
    w_minus: np.ndarray

    @property
    def w(self):
        return self.w_plus - self.w_minus


@dataclass
class ClassifierEnsemble:
    """Binary, one-vs-one (multiway) or one-vs-rest (multilabel) classifiers.

    ``keys[t]`` identifies member ``t``: ``(a, b)`` class pairs (``a`` is the
    positive side) for multiway, a label for multilabel, ``None`` for binary.
    Skipped members are stored as ``None`` models.
    """
    task: str
    classes: list
    keys: list = field(default_factory=list)
    models: list = field(default_factory=list)

    @property
    def p(self):
        return len(self.models)


def _examples(X):
    """Rows = examples, with an appended constant feature."""
    if sp.issparse(X):
        Xt = sp.csr_matrix(X.T, dtype=np.float64)
        if not np.all(np.isfinite(Xt.data)):
            raise DomainError("features contain non-finite values")
        return sp.hstack([Xt, np.ones((Xt.shape[0], 1))], format="csr")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("X must be 2-dimensional (features x examples)")
    if not np.all(np.isfinite(X)):
        raise DomainError("features contain non-finite values")
    return np.hstack([X.T, np.ones((X.shape[1], 1))])


def _labels(y, m):
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != m:
        raise DimensionError(f"{m} examples but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise DomainError("binary labels must be +1 or -1")
    return y


def _finish(Xa, y, alpha, indices, C, converged):
    nz = alpha > 0
    # recompute from alpha so the dual identity holds to rounding error
    wa = np.asarray(Xa[nz].T @ (alpha[nz] * y[nz])).ravel()
    if indices is None:
        indices = np.arange(len(y))
    indices = np.asarray(indices, dtype=np.intp)
    return LinearModel(wa[:-1].copy(), float(wa[-1]), indices[nz], alpha[nz].copy(),
                       y[nz].copy(), C, converged)


def train_linear_svm(X, y, C, opts=None, indices=None):
    """Soft-margin linear SVM (L1 hinge) by dual coordinate descent.

    Parameters
    ----------
    X : array or sparse matrix, shape (d, m)
        Labeled examples as columns.
    y : array of +1 / -1, length m
    C : float
        Margin penalty; ``numpy.inf`` gives the hard-margin problem.
    opts : SVMOptions, optional
    indices : array of int, optional
        Column indices to record for the dual coefficients (default ``0..m-1``).

    Returns
    -------
    LinearModel
    """
    opts = opts or SVMOptions()
    if not C > 0:
        raise ParameterError("C must be positive")
    Xa = _examples(X)
    m = Xa.shape[0]
    y = _labels(y, m)
    if m < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateLabelError("both classes must be present")
    sparse = sp.issparse(Xa)
    if sparse:
        rows = [(Xa.indices[Xa.indptr[i]:Xa.indptr[i + 1]], Xa.data[Xa.indptr[i]:Xa.indptr[i + 1]])
                for i in range(m)]
        qdiag = np.array([np.dot(v, v) for _, v in rows])
    else:
        qdiag = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(m)
    w = np.zeros(Xa.shape[1])
    rng = np.random.default_rng(opts.seed)
    converged = False
    for _ in range(int(opts.max_epochs)):
        worst = 0.0
        for i in rng.permutation(m):
            if sparse:
                idx, val = rows[i]
                g = y[i] * np.dot(w[idx], val) - 1.0
            else:
                g = y[i] * np.dot(w, Xa[i]) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            worst = max(worst, abs(pg))
            if pg != 0.0:
                new = min(max(a - g / qdiag[i], 0.0), C)
                alpha[i] = new
                if sparse:
                    w[idx] += (new - a) * y[i] * val
                else:
                    w += (new - a) * y[i] * Xa[i]
        if worst < opts.tol:
            converged = True
            break
    if not converged:
        warnings.warn("SVM solver hit max_epochs before convergence", stacklevel=2)
    return _finish(Xa, y, alpha, indices, C, converged)


def train_perceptron(X, y, epochs=10, indices=None):
    """Perceptron whose dual coefficients count mistakes per example.

    Examples are visited in column order every epoch; training stops early
    after an epoch without mistakes.
    """
    Xa = _examples(X)
    m = Xa.shape[0]
    y = _labels(y, m)
    if m < 1:
        raise DimensionError("need at least one example")
    dense = Xa.toarray() if sp.issparse(Xa) else Xa
    alpha = np.zeros(m)
    w = np.zeros(dense.shape[1])
    converged = False
    for _ in range(int(epochs)):
        mistakes = 0
        for i in range(m):
            if y[i] * np.dot(w, dense[i]) <= 0.0:
                alpha[i] += 1.0
                w += y[i] * dense[i]
                mistakes += 1
        if mistakes == 0:
            converged = True
            break
    return _finish(dense, y, alpha, indices, np.inf, converged)


def decompose_weights(model, X):
    """Split ``w`` into ``X a+`` and ``X a-`` (both nonnegative for nonnegative X)."""
    idx = np.asarray(model.indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= X.shape[1]):
        raise IndexError("model references a column outside X")
    pos = model.alphas * (model.y > 0)
    neg = model.alphas * (model.y < 0)
    Xs = X[:, idx]
    w_plus = np.asarray(Xs @ pos).ravel()
    w_minus = np.asarray(Xs @ neg).ravel()
    return WeightDecomposition(w_plus, w_minus)


def reconstruct_weights(fact, S):
    """``(V H a+, V H a-)`` for every classifier stored in ``S``."""
    from .semi import SupportMatrix
    if isinstance(S, SupportMatrix):
        p, S = S.p, S.S
    else:
        S = np.asarray(S, dtype=np.float64)
        p = S.shape[1] // 2
    if S.shape[0] != fact.H.shape[1]:
        raise DimensionError(f"S has {S.shape[0]} rows, H has {fact.H.shape[1]} columns")
    HS = fact.H @ S
    W = fact.V @ HS
    return [WeightDecomposition(W[:, t].copy(), W[:, p + t].copy()) for t in range(p)]


def _fit_member(X, y, C, classifier, svm_opts, indices, epochs):
    if classifier == "svm":
        return train_linear_svm(X, y, C, svm_opts, indices)
    if classifier == "perceptron":
        return train_perceptron(X, y, epochs, indices)
    raise ParameterError(f"unknown classifier {classifier!r}")


def _columns(X, mask):
    return X[:, np.flatnonzero(mask)]


def train_ensemble(X, labels, task, C=1.0, classifier="svm", svm_opts=None,
                   indices=None, epochs=10):
    """Train the classifiers whose dual coefficients define ``S``.

    ``labels`` holds one entry per column of ``X``: +1/-1 for ``binary``,
    a class id for ``multiway``, a collection of label ids for ``multilabel``.
    Multiway problems get one-vs-one members for every class pair; pairs
    lacking an example are skipped with a warning.  Multilabel problems get
    one-vs-rest members per label.
    """
    m = X.shape[1]
    indices = np.arange(m) if indices is None else np.asarray(indices, dtype=np.intp)
    if task == "binary":
        y = _labels(labels, m)
        model = _fit_member(X, y, C, classifier, svm_opts, indices, epochs)
        return ClassifierEnsemble(task, [1, -1], [None], [model])
    if task == "multiway":
        labels = np.asarray(labels)
        classes = sorted(np.unique(labels).tolist())
        ens = ClassifierEnsemble(task, classes)
        for a, b in itertools.combinations(classes, 2):
            mask = (labels == a) | (labels == b)
            ens.keys.append((a, b))
            if not (np.any(labels == a) and np.any(labels == b)):
                warnings.warn(f"skipping class pair {(a, b)}: a class has no examples", stacklevel=2)
                ens.models.append(None)
                continue
            y = np.where(labels[mask] == a, 1.0, -1.0)
            ens.models.append(_fit_member(_columns(X, mask), y, C, classifier, svm_opts,
                                          indices[mask], epochs))
        return ens
    if task == "multilabel":
        sets = [frozenset(s) for s in labels]
        if len(sets) != m:
            raise DimensionError(f"{m} examples but {len(sets)} label sets")
        classes = sorted(set().union(*sets)) if sets else []
        ens = ClassifierEnsemble(task, classes)
        for label in classes:
            y = np.array([1.0 if label in s else -1.0 for s in sets])
            ens.keys.append(label)
            if np.all(y > 0):
                warnings.warn(f"skipping label {label}: no negative examples", stacklevel=2)
                ens.models.append(None)
                continue
            ens.models.append(_fit_member(X, y, C, classifier, svm_opts, indices, epochs))
        return ens
    raise ParameterError(f"unknown task {task!r}")


def predict(ensemble, Z):
    """Predict labels for the columns of ``Z``.

    Multiway: one-vs-one majority vote; ties go to the larger summed decision
    value, then to the smallest class id.  Multilabel: every label whose
    decision value is positive.
    """
    n = Z.shape[1]
    if ensemble.task == "binary":
        f = ensemble.models[0].decision_function(Z)
        return np.where(f >= 0, 1, -1)
    if ensemble.task == "multiway":
        classes = ensemble.classes
        pos = {c: k for k, c in enumerate(classes)}
        votes = np.zeros((len(classes), n))
        sums = np.zeros((len(classes), n))
        for (a, b), model in zip(ensemble.keys, ensemble.models):
            if model is None:
                continue
            f = model.decision_function(Z)
            votes[pos[a]] += f > 0
            votes[pos[b]] += f <= 0
            sums[pos[a]] += f
            sums[pos[b]] -= f
        out = np.empty(n, dtype=np.asarray(classes).dtype)
        for j in range(n):
            top = np.flatnonzero(votes[:, j] == votes[:, j].max())
            best = top[np.flatnonzero(sums[top, j] == sums[top, j].max())[0]]
            out[j] = classes[best]
        return out
    if ensemble.task == "multilabel":
        # a skipped label had only positive examples: always predict it
        scores = [np.full(n, np.inf) if model is None else model.decision_function(Z)
                  for model in ensemble.models]
        return [frozenset(label for label, s in zip(ensemble.keys, scores) if s[j] > 0)
                for j in range(n)]
    raise ParameterError(f"unknown task {ensemble.task!r}")
