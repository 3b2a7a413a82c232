"""Evaluation pipeline: splits, metrics, reduce-then-classify runs and grid sweeps."""
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import baselines
from .classifiers import predict, train_ensemble
from .exceptions import DimensionError, ParameterError
from .geometry import embedding_map
from .matrix import EPS
from .nmf import FitOptions, factorize, fold_in
from .semi import build_support_matrix, semi_factorize

SPLITS = ("train_labeled", "train_unlabeled", "validation", "test")
METHODS = ("raw", "pca", "lda", "nmf", "nmf_alpha", "ssnmf_lee", "cnmf_liu")
NMF_METHODS = ("nmf", "nmf_alpha", "ssnmf_lee", "cnmf_liu")
LAMBDA_METHODS = ("nmf_alpha", "ssnmf_lee")

DEFAULT_LAMBDAS = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_CS = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_RANKS = (16, 32, 64, 128, 256)


@dataclass
class LabeledDataset:
    """Examples are the columns of ``X``; ``splits`` maps split names to column indices.

    ``labels`` has one entry per column: +1/-1 (binary), a class id
    (multiway) or a frozenset of label ids (multilabel).
    """
    X: object
    labels: object
    task: str
    splits: dict

    def __post_init__(self):
        if self.task not in ("binary", "multiway", "multilabel"):
            raise ParameterError(f"unknown task {self.task!r}")
        n = self.X.shape[1]
        if len(self.labels) != n:
            raise DimensionError(f"{n} columns but {len(self.labels)} labels")
        seen = np.zeros(n, dtype=bool)
        for name in SPLITS:
            idx = np.asarray(self.splits.get(name, ()), dtype=np.intp)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise IndexError(f"split {name} references a column outside X")
            if seen[idx].any() or len(np.unique(idx)) != idx.size:
                raise ParameterError(f"split {name} overlaps another split")
            seen[idx] = True
            self.splits[name] = idx

    @property
    def m(self):
        return len(self.splits["train_labeled"])

    @property
    def train(self):
        """Training columns, labeled ones first."""
        return np.concatenate([self.splits["train_labeled"], self.splits["train_unlabeled"]])

    def labels_at(self, idx):
        if self.task == "multilabel":
            return [self.labels[i] for i in idx]
        return np.asarray(self.labels)[idx]

    @property
    def classes(self):
        if self.task == "multilabel":
            return sorted(set().union(*self.labels))
        return sorted(np.unique(np.asarray(self.labels)).tolist())


def _quotas(counts, total):
    """Largest-remainder allocation of ``total`` proportional to ``counts``."""
    counts = np.asarray(counts, dtype=np.float64)
    exact = total * counts / counts.sum()
    base = np.floor(exact).astype(int)
    extra = total - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:extra]] += 1
    return base


def make_splits(dataset, labeled_fraction, seed, num_repeats=5):
    """Copies of ``dataset`` that differ only in which training columns are labeled.

    The labeled subset is stratified by class for binary and multiway tasks;
    validation and test columns are shared by every copy.
    """
    if not 0 < labeled_fraction <= 1:
        raise ParameterError("labeled_fraction must lie in (0, 1]")
    train = np.sort(dataset.train)
    m = max(1, int(round(labeled_fraction * train.size)))
    out = []
    for rep in range(num_repeats):
        rng = np.random.default_rng([seed, rep])
        if dataset.task == "multilabel":
            chosen = rng.choice(train, size=m, replace=False)
        else:
            y = np.asarray(dataset.labels)[train]
            classes = np.unique(y)
            quota = _quotas([np.sum(y == c) for c in classes], m)
            chosen = np.concatenate([
                rng.choice(train[y == c], size=q, replace=False) for c, q in zip(classes, quota)])
            if np.any(quota == 0):
                warnings.warn("a class received no labeled examples", stacklevel=2)
        labeled = np.sort(chosen)
        splits = dict(dataset.splits)
        splits["train_labeled"] = labeled
        splits["train_unlabeled"] = np.setdiff1d(train, labeled)
        out.append(replace(dataset, splits=splits))
    return out


def accuracy(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError("prediction and truth lengths differ")
    if truth.size == 0:
        return 0.0
    return float(np.mean(pred == truth))


def f_measures(pred_sets, truth_sets, labels):
    """Macro F1, micro F1 and their mean over the label universe ``labels``.

    ``labels`` is an iterable of label ids or an int ``L`` (ids ``0..L-1``).
    A label with no true positives, false positives or false negatives
    contributes F1 = 0 to the macro average.
    """
    labels = list(range(labels)) if isinstance(labels, (int, np.integer)) else list(labels)
    if not labels:
        raise ParameterError("label universe is empty")
    if len(pred_sets) != len(truth_sets):
        raise DimensionError("prediction and truth lengths differ")
    tp = {c: 0 for c in labels}
    fp = dict(tp)
    fn = dict(tp)
    for p, t in zip(pred_sets, truth_sets):
        p, t = set(p), set(t)
        for c in labels:
            if c in p and c in t:
                tp[c] += 1
            elif c in p:
                fp[c] += 1
            elif c in t:
                fn[c] += 1

    def f1(a, b, c):
        return 2 * a / (2 * a + b + c) if a else 0.0

    macro = float(np.mean([f1(tp[c], fp[c], fn[c]) for c in labels]))
    micro = f1(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    return macro, micro, 0.5 * (macro + micro)


def metric_name(task):
    return "f_combined" if task == "multilabel" else "accuracy"


def score(task, pred, truth, classes=None):
    if task == "multilabel":
        return f_measures(pred, truth, classes)[2]
    return accuracy(pred, truth)


@dataclass
class PipelineParams:
    rank: int = 16
    lam: float = 0.0
    C: float = 1.0
    alpha_C: float = None        # margin penalty of the classifiers behind S (default: C)
    classifier: str = "svm"
    seed: int = 0
    max_iterations: int = 500
    relative_tolerance: float = 1e-6
    fold_in_iterations: int = 100


@dataclass
class Reduction:
    """Reduced features (columns) for the labeled training, validation and test sets."""
    train: object
    validation: object
    test: object
    final_loss: float = float("nan")
    iterations: int = 0


def _frobenius_fold_in(X, V, iterations, seed):
    rng = np.random.default_rng(seed)
    H = 0.1 + rng.random((V.shape[1], X.shape[1]))
    VtX = np.asarray((X.T @ V).T)
    G = V.T @ V
    for _ in range(iterations):
        H = H * (VtX / np.maximum(G @ H, EPS))
    return H


def _lda_inputs(dataset, idx):
    """LDA needs one class per example; multilabel examples are repeated per label."""
    labels = dataset.labels_at(idx)
    if dataset.task != "multilabel":
        return idx, np.asarray(labels)
    rep = [(i, c) for i, s in zip(idx, labels) for c in sorted(s)]
    return np.array([i for i, _ in rep], dtype=np.intp), np.array([c for _, c in rep])


def reduce(dataset, method, params):
    """Fit the dimensionality reduction ``method`` and map every split through it."""
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; choose from {METHODS}")
    X = dataset.X
    L = dataset.splits["train_labeled"]
    val, test = dataset.splits["validation"], dataset.splits["test"]
    if method == "raw":
        return Reduction(X[:, L], X[:, val], X[:, test])
    train = dataset.train
    Xtr = X[:, train]
    m = len(L)
    r = min(int(params.rank), *Xtr.shape)
    if method == "pca":
        model = baselines.pca_fit(Xtr, r)
        return Reduction(model.transform(X[:, L]), model.transform(X[:, val]),
                         model.transform(X[:, test]))
    if method == "lda":
        idx, y = _lda_inputs(dataset, L)
        k = min(r, len(np.unique(y)) - 1)
        W = baselines.lda_fit(X[:, idx], y, k)

        def proj(A):
            return np.asarray((A.T @ W).T)
        return Reduction(proj(X[:, L]), proj(X[:, val]), proj(X[:, test]))

    opts = FitOptions(params.max_iterations, params.relative_tolerance, params.seed)
    classes = dataset.classes
    if method == "nmf":
        fact = factorize(Xtr, r, opts)
    elif method == "nmf_alpha":
        C = params.alpha_C if params.alpha_C is not None else params.C
        ens = train_ensemble(Xtr[:, :m], dataset.labels_at(L), dataset.task, C, params.classifier)
        S = build_support_matrix(ens.models, Xtr.shape[1], m)
        fact = semi_factorize(Xtr, S, r, params.lam, opts)
    elif method == "ssnmf_lee":
        Y = baselines.label_matrix(dataset.labels_at(L), classes)
        fact, _ = baselines.ssnmf_lee_factorize(Xtr, Y, r, params.lam, opts)
    else:
        Y = baselines.label_matrix(dataset.labels_at(L), classes)
        fact, _ = baselines.cnmf_liu_factorize(Xtr, Y, r, opts)
    M = embedding_map(fact.V)
    if method in ("nmf", "nmf_alpha"):
        fold = fold_in
    else:
        fold = _frobenius_fold_in
    it = params.fold_in_iterations
    H_val = fold(X[:, val], fact.V, it, params.seed)
    H_test = fold(X[:, test], fact.V, it, params.seed)
    return Reduction(M @ fact.H[:, :m], M @ H_val, M @ H_test,
                     fact.loss_trace[-1], fact.iterations_run)


def evaluate(dataset, reduction, C, classifier="svm"):
    """Train evaluation classifiers on the labeled training features and score the
    validation and test sets."""
    L = dataset.splits["train_labeled"]
    ens = train_ensemble(reduction.train, dataset.labels_at(L), dataset.task, C, classifier)
    classes = dataset.classes
    out = {}
    for split, Z in (("validation", reduction.validation), ("test", reduction.test)):
        idx = dataset.splits[split]
        out[split] = score(dataset.task, predict(ens, Z), dataset.labels_at(idx), classes) \
            if len(idx) else float("nan")
    return out


def run_pipeline(dataset, method, params=None):
    """Reduce, then classify with SVMs trained on the labeled training columns only.

    Returns ``{"validation": metric, "test": metric}`` (accuracy, or the mean of
    macro and micro F1 for multilabel tasks).
    """
    params = params or PipelineParams()
    red = reduce(dataset, method, params)
    return evaluate(dataset, red, params.C)


@dataclass
class SweepCell:
    rank: int
    lam: float
    C: float
    validation: float
    test: float
    per_repeat: list = field(default_factory=list)   # (validation, test) per repeat
    final_loss: float = float("nan")


@dataclass
class SweepResult:
    method: str
    metric: str
    cells: list
    selected: SweepCell

    def rows(self):
        """Rows of the metrics CSV (method, rank, lambda, C, repeat, split, metric, value)."""
        for cell in self.cells:
            for rep, (v, t) in enumerate(cell.per_repeat):
                yield (self.method, cell.rank, cell.lam, cell.C, rep, "validation", self.metric, v)
                yield (self.method, cell.rank, cell.lam, cell.C, rep, "test", self.metric, t)


def select_cell(cells):
    """Best validation metric; ties go to the smallest rank, then lambda, then C."""
    return min(cells, key=lambda c: (-c.validation, c.rank, c.lam, c.C))


def worker_count():
    try:
        return max(1, int(os.environ.get("NMFALPHA_THREADS", "1")))
    except ValueError:
        return 1


def sweep(datasets, method, ranks=DEFAULT_RANKS, lambdas=DEFAULT_LAMBDAS, Cs=DEFAULT_CS,
          params=None, workers=None):
    """Evaluate the Cartesian grid (rank, lambda, C) averaged over ``datasets``.

    ``datasets`` is one :class:`LabeledDataset` or a list of label-mask
    repeats.  Grid axes a method ignores collapse to a single value: lambda
    to 0 for methods without a trade-off, rank to 0 for ``raw``.
    """
    if isinstance(datasets, LabeledDataset):
        datasets = [datasets]
    if not datasets or not len(ranks) or not len(lambdas) or not len(Cs):
        raise ParameterError("sweep grids and dataset list must be non-empty")
    params = params or PipelineParams()
    first = datasets[0]
    if method == "raw":
        ranks = [0]
    else:
        cap = min(first.X.shape[0], len(first.train))
        ranks = sorted({min(int(r), cap) for r in ranks})
    lambdas = sorted(set(map(float, lambdas))) if method in LAMBDA_METHODS else [0.0]
    Cs = sorted(set(map(float, Cs)))

    jobs = [(r, lam, k) for r in ranks for lam in lambdas for k in range(len(datasets))]

    def run(job):
        r, lam, k = job
        p = replace(params, rank=max(r, 1), lam=lam)
        if method != "nmf_alpha":
            return job, reduce(datasets[k], method, p), None
        # S depends on the margin penalty unless alpha_C pins it
        if params.alpha_C is not None:
            return job, reduce(datasets[k], method, p), None
        return job, None, {C: reduce(datasets[k], method, replace(p, C=C)) for C in Cs}

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    reductions = {job: (red, per_c) for job, red, per_c in results}

    cells = []
    for r in ranks:
        for lam in lambdas:
            for C in Cs:
                per, losses = [], []
                for k, ds in enumerate(datasets):
                    red, per_c = reductions[(r, lam, k)]
                    red = red if red is not None else per_c[C]
                    res = evaluate(ds, red, C, params.classifier)
                    per.append((res["validation"], res["test"]))
                    losses.append(red.final_loss)
                vals = np.array(per)
                cells.append(SweepCell(r, lam, C, float(vals[:, 0].mean()), float(vals[:, 1].mean()),
                                       per, float(np.mean(losses))))
    return SweepResult(method, metric_name(first.task), cells, select_cell(cells))


def planted_subspace_task(seed, n_train=500, n_validation=200, n_test=500,
                          n_discriminative=5, n_noise=45, n_topics=5):
    """Two-class count data where the class signal hides in a few weak coordinates.

    The first ``n_discriminative`` coordinates are Poisson counts whose means
    depend on the class; the remaining ``n_noise`` coordinates are Poisson
    counts driven by ``n_topics`` class-independent latent topics with much
    larger mass.  Columns are scaled to unit Euclidean norm.  Unsupervised NMF
    with ``n_topics`` basis vectors spends its capacity on the topics.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_validation + n_test
    y = np.where(rng.random(n) < 0.5, 1, -1)
    mu_pos = np.where(np.arange(n_discriminative) % 2 == 0, 3.0, 1.0)
    mu_neg = mu_pos[::-1].copy() if n_discriminative % 2 == 0 else 4.0 - mu_pos
    means = np.where(y[np.newaxis, :] > 0, mu_pos[:, np.newaxis], mu_neg[:, np.newaxis])
    disc = rng.poisson(means)
    loadings = rng.dirichlet(np.full(n_noise, 0.3), size=n_topics).T      # n_noise x topics
    activity = rng.gamma(2.0, 15.0, size=(n_topics, n))
    noise = rng.poisson(loadings @ activity)
    X = np.vstack([disc, noise]).astype(np.float64)
    X /= np.maximum(np.linalg.norm(X, axis=0), EPS)
    splits = {
        "train_labeled": np.arange(n_train),
        "train_unlabeled": np.array([], dtype=np.intp),
        "validation": np.arange(n_train, n_train + n_validation),
        "test": np.arange(n_train + n_validation, n),
    }
    return LabeledDataset(X, y, "binary", splits)
