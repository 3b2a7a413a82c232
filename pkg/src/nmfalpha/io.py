"""Dataset parsing, model archives, run configuration and metrics CSV."""
import csv
import gzip
import os
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .baselines import PCA
from .classifiers import ClassifierEnsemble, LinearModel
from .exceptions import ArchiveError, DomainError, ParameterError, ParseError
from .harness import LabeledDataset
from .matrix import to_storage
from .nmf import Factorization

FORMAT_VERSION = 1
MAGIC = "NMFALPHA"
KINDS = ("nmf", "nmf_alpha", "ssnmf", "cnmf", "pca", "lda", "svm", "ensemble")
NONNEG_KINDS = ("nmf", "nmf_alpha", "ssnmf", "cnmf")
CSV_HEADER = ("method", "rank", "lambda", "C", "repeat", "split", "metric", "value")


# -- sparse label line format -------------------------------------------------

@dataclass
class DatasetFile:
    """Parsed examples: ``X`` is d x n (columns in file order)."""
    X: object
    labels: list
    task: str


def _parse_label(field_, task, lineno):
    try:
        if task == "multilabel" or "," in field_:
            return frozenset(int(t) for t in field_.split(",") if t)
        return int(field_)
    except ValueError:
        raise ParseError(f"line {lineno}: bad label field {field_!r}") from None


def _infer_task(raw):
    if any("," in f for f in raw):
        return "multilabel"
    if raw and all(f in ("+1", "-1", "1") for f in raw) and any(f != "1" for f in raw):
        return "binary"
    return "multiway"


def parse_sparse_dataset(path, task=None, n_features=None):
    """Read ``<label-field> <idx>:<value> ...`` lines (1-based, increasing indices).

    The label field is ``+1``/``-1`` (binary), an integer (multiway) or a
    comma-separated list of integers (multilabel); a line starting with a
    feature token has an empty label set.  ``#`` starts a comment.  When
    ``task`` is omitted it is inferred from the label fields.
    """
    with open(path, "r", newline="") as fh:
        text = fh.read()
    raw_labels, rows, cols, vals = [], [], [], []
    max_index = 0
    col = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if ":" in tokens[0]:
            label, feats = "", tokens
        else:
            label, feats = tokens[0], tokens[1:]
        last = 0
        for tok in feats:
            try:
                idx_s, val_s = tok.split(":")
                idx, val = int(idx_s), float(val_s.replace("−", "-"))
            except ValueError:
                raise ParseError(f"line {lineno}: bad feature token {tok!r}") from None
            if idx <= last:
                raise ParseError(f"line {lineno}: feature indices must be >= 1 and increasing")
            if val < 0 or not np.isfinite(val):
                raise DomainError(f"line {lineno}: feature {idx} has invalid value {val}")
            last = idx
            if val != 0:
                rows.append(idx - 1)
                cols.append(col)
                vals.append(val)
        max_index = max(max_index, last)
        raw_labels.append(label)
        col += 1
    if col == 0:
        raise ParseError(f"{path}: no examples")
    d = max_index if n_features is None else int(n_features)
    if max_index > d:
        raise ParseError(f"{path}: feature index {max_index} exceeds n_features={d}")
    task = task or _infer_task([f for f in raw_labels if f])
    if task not in ("binary", "multiway", "multilabel"):
        raise ParameterError(f"unknown task {task!r}")
    labels = [_parse_label(f, task, i) if f or task == "multilabel" else None
              for i, f in enumerate(raw_labels, start=1)]
    if task == "multilabel":
        labels = [frozenset() if lab is None else lab for lab in labels]
    elif any(lab is None for lab in labels):
        raise ParseError(f"{path}: every example needs a label for task {task}")
    if task == "binary" and not all(lab in (1, -1) for lab in labels):
        raise ParseError(f"{path}: binary labels must be +1 or -1")
    X = sp.csc_matrix((vals, (rows, cols)), shape=(d, col), dtype=np.float64)
    return DatasetFile(to_storage(X), labels, task)


def load_labeled_dataset(train, validation=None, test=None, task=None):
    """Concatenate train / validation / test files into one :class:`LabeledDataset`.

    All training columns start out labeled; feature counts are padded to the
    widest file.
    """
    paths = [("train", train), ("validation", validation), ("test", test)]
    parts = [(name, parse_sparse_dataset(path, task)) for name, path in paths if path]
    tasks = {part.task for _, part in parts}
    if len(tasks) != 1:
        raise ParseError(f"dataset files disagree on the task: {sorted(tasks)}")
    task = tasks.pop()
    d = max(part.X.shape[0] for _, part in parts)
    blocks, labels, splits, start = [], [], {}, 0
    for name, part in parts:
        X = sp.csc_matrix(part.X)
        X.resize((d, X.shape[1]))
        blocks.append(X)
        labels.extend(part.labels)
        splits[name] = np.arange(start, start + X.shape[1])
        start += X.shape[1]
    splits = {"train_labeled": splits["train"], "train_unlabeled": np.array([], dtype=np.intp),
              "validation": splits.get("validation", np.array([], dtype=np.intp)),
              "test": splits.get("test", np.array([], dtype=np.intp))}
    return LabeledDataset(to_storage(sp.hstack(blocks, format="csc")), labels, task, splits)


def format_label(label, task):
    if task == "multilabel":
        return ",".join(str(c) for c in sorted(label))
    if task == "binary":
        return "+1" if label > 0 else "-1"
    return str(label)


def write_sparse_dataset(path, X, labels, task):
    X = sp.csc_matrix(X)
    X.sort_indices()
    with open(path, "w", newline="\n") as fh:
        for j in range(X.shape[1]):
            lo, hi = X.indptr[j], X.indptr[j + 1]
            feats = " ".join(f"{i + 1}:{v:.17g}" for i, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            fh.write(f"{format_label(labels[j], task)} {feats}".rstrip() + "\n")


def read_idx(path):
    """Read an IDX array file (the MNIST distribution format), optionally gzipped."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise ParseError(f"{path}: not an unsigned-byte IDX file")
    ndim = raw[3]
    shape = tuple(int.from_bytes(raw[4 + 4 * k:8 + 4 * k], "big") for k in range(ndim))
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(shape)):
        raise ParseError(f"{path}: payload does not match header shape {shape}")
    return data.reshape(shape)


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def mnist_pair_task(directory, digits=(4, 9), n_train=5000):
    """Binary task from the MNIST IDX files: ``digits[0]`` is +1, ``digits[1]`` is -1.

    Pixels are scaled to [0, 1].  The first ``n_train`` matching training
    images (file order) form the training split, the remaining ones the
    validation split; every matching test image forms the test split.
    """
    parts = []
    for prefix in ("train", "t10k"):
        images = read_idx(_find(directory, f"{prefix}-images-idx3-ubyte"))
        labels = read_idx(_find(directory, f"{prefix}-labels-idx1-ubyte"))
        keep = np.flatnonzero(np.isin(labels, digits))
        parts.append((images[keep].reshape(len(keep), -1).T / 255.0,
                      np.where(labels[keep] == digits[0], 1, -1)))
    (Xa, ya), (Xt, yt) = parts
    if n_train >= Xa.shape[1]:
        raise ParameterError("n_train leaves no validation examples")
    X = np.hstack([Xa, Xt])
    na = Xa.shape[1]
    splits = {"train_labeled": np.arange(n_train), "train_unlabeled": np.array([], dtype=np.intp),
              "validation": np.arange(n_train, na), "test": np.arange(na, X.shape[1])}
    return LabeledDataset(X, np.concatenate([ya, yt]), "binary", splits)


# -- model archives -----------------------------------------------------------

@dataclass
class ModelArchive:
    kind: str
    meta: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)


def _fmt(x):
    return format(float(x), ".17g")


def dumps_archive(archive):
    if archive.kind not in KINDS:
        raise ArchiveError(f"unknown archive kind {archive.kind!r}")
    lines = [f"{MAGIC} v{FORMAT_VERSION} {archive.kind}"]
    for key, value in archive.meta.items():
        lines.append(f"{key} = {value}")
    for name, arr in archive.arrays.items():
        arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
        lines.append(f"array {name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in arr)
    payload = "\n".join(lines) + "\n"
    return payload + f"CRC32 {zlib.crc32(payload.encode()):08x}\n"


def loads_archive(text):
    text = text.replace("\r\n", "\n")
    body, sep, tail = text.rpartition("CRC32 ")
    if not sep:
        raise ArchiveError("missing CRC32 trailer")
    if not body.endswith("\n") and body:
        raise ArchiveError("malformed CRC32 trailer")
    try:
        expected = int(tail.strip(), 16)
    except ValueError:
        raise ArchiveError("malformed CRC32 trailer") from None
    if zlib.crc32(body.encode()) != expected:
        raise ArchiveError("checksum mismatch")
    lines = body.split("\n")[:-1]
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != MAGIC:
        raise ArchiveError("not a model archive")
    if head[1] != f"v{FORMAT_VERSION}":
        raise ArchiveError(f"unsupported archive version {head[1]}")
    archive = ModelArchive(head[2])
    if archive.kind not in KINDS:
        raise ArchiveError(f"unknown archive kind {archive.kind!r}")
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("array "):
            _, name, nr, nc = line.split()
            nr, nc = int(nr), int(nc)
            block = lines[i + 1:i + 1 + nr]
            if len(block) != nr:
                raise ArchiveError(f"array {name} is truncated")
            arr = np.array([[float(t) for t in row.split()] for row in block]).reshape(nr, nc) \
                if nc else np.zeros((nr, 0))
            archive.arrays[name] = arr
            i += 1 + nr
        else:
            key, eq, value = line.partition(" = ")
            if not eq:
                raise ArchiveError(f"bad metadata line {line!r}")
            archive.meta[key] = value
            i += 1
    if archive.kind in NONNEG_KINDS:
        for name in ("V", "H"):
            if name not in archive.arrays:
                raise ArchiveError(f"{archive.kind} archive lacks {name}")
            if np.any(archive.arrays[name] < 0):
                raise ArchiveError(f"{archive.kind} archive has negative entries in {name}")
    return archive


def save_model(path, archive):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_archive(archive))


def load_model(path):
    with open(path, "r", newline="") as fh:
        return loads_archive(fh.read())


def factorization_archive(fact, opts=None, **extra):
    meta = {"rank": fact.rank, "seed": fact.seed, "iterations_run": fact.iterations_run,
            "lambda": _fmt(fact.lam)}
    if opts is not None:
        meta.update(max_iterations=opts.max_iterations,
                    relative_tolerance=_fmt(opts.relative_tolerance),
                    loss_record_stride=opts.loss_record_stride)
    meta.update(extra)
    arrays = {"V": fact.V, "H": fact.H, "loss_trace": np.asarray(fact.loss_trace)[np.newaxis, :]}
    return ModelArchive(fact.kind, meta, arrays)


def factorization_from_archive(archive):
    if archive.kind not in NONNEG_KINDS:
        raise ArchiveError(f"archive of kind {archive.kind} is not a factorization")
    trace = archive.arrays.get("loss_trace", np.zeros((1, 0)))
    return Factorization(archive.arrays["V"], archive.arrays["H"], trace.ravel().tolist(),
                         int(archive.meta.get("seed", 0)), int(archive.meta.get("iterations_run", 0)),
                         float(archive.meta.get("lambda", 0.0)), archive.kind)


def _encode(value):
    if isinstance(value, tuple):
        return ":".join(str(v) for v in value)
    return "" if value is None else str(value)


def ensemble_archive(ens, seed=0, **extra):
    kind = "svm" if ens.task == "binary" else "ensemble"
    meta = {"task": ens.task, "classes": ",".join(str(c) for c in ens.classes),
            "members": len(ens.models), "seed": seed}
    arrays = {}
    for t, (key, model) in enumerate(zip(ens.keys, ens.models)):
        meta[f"member{t}.key"] = _encode(key)
        meta[f"member{t}.skipped"] = int(model is None)
        if model is None:
            continue
        meta[f"member{t}.bias"] = _fmt(model.bias)
        meta[f"member{t}.C"] = _fmt(model.C)
        meta[f"member{t}.converged"] = int(model.converged)
        arrays[f"member{t}.w"] = model.w[np.newaxis, :]
        arrays[f"member{t}.dual"] = np.vstack([model.indices, model.alphas, model.y])
    meta.update(extra)
    return ModelArchive(kind, meta, arrays)


def ensemble_from_archive(archive):
    if archive.kind not in ("svm", "ensemble"):
        raise ArchiveError(f"archive of kind {archive.kind} is not a classifier")
    meta = archive.meta
    task = meta["task"]
    classes = [int(c) for c in meta["classes"].split(",") if c]
    ens = ClassifierEnsemble(task, classes)
    for t in range(int(meta["members"])):
        key = meta[f"member{t}.key"]
        if task == "multiway":
            key = tuple(int(k) for k in key.split(":"))
        elif task == "multilabel":
            key = int(key)
        else:
            key = None
        ens.keys.append(key)
        if int(meta[f"member{t}.skipped"]):
            ens.models.append(None)
            continue
        dual = archive.arrays[f"member{t}.dual"]
        ens.models.append(LinearModel(
            archive.arrays[f"member{t}.w"].ravel(), float(meta[f"member{t}.bias"]),
            dual[0].astype(np.intp), dual[1].copy(), dual[2].copy(),
            float(meta[f"member{t}.C"]), bool(int(meta[f"member{t}.converged"]))))
    return ens


def pca_archive(model, seed=0):
    return ModelArchive("pca", {"rank": model.components.shape[1], "seed": seed},
                        {"components": model.components, "mean": model.mean[np.newaxis, :],
                         "variances": model.variances[np.newaxis, :]})


def pca_from_archive(archive):
    a = archive.arrays
    return PCA(a["components"], a["mean"].ravel(), a["variances"].ravel())


def lda_archive(W, classes, seed=0):
    return ModelArchive("lda", {"rank": W.shape[1], "classes": ",".join(map(str, classes)),
                                "seed": seed}, {"W": W})


# -- configuration and metrics --------------------------------------------------

@dataclass
class RunConfig:
    train: str
    validation: str
    test: str
    task: str = None
    labels_fraction: float = 1.0
    methods: list = field(default_factory=lambda: ["nmf", "nmf_alpha"])
    ranks: list = field(default_factory=lambda: [16, 32, 64, 128, 256])
    lambdas: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0, 100.0])
    Cs: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0, 100.0])
    seed: int = 0
    repeats: int = 5
    output: str = "."
    classifier: str = "svm"
    max_iterations: int = 500
    relative_tolerance: float = 1e-6
    alpha_C: float = None


def _list(value, cast):
    items = [cast(v) for v in value.replace(",", " ").split()]
    if not items:
        raise ParseError("grid must be non-empty")
    return items


_CONFIG_FIELDS = {
    "train": str, "validation": str, "test": str, "task": str,
    "labels_fraction": float, "seed": int, "repeats": int, "output": str,
    "classifier": str, "max_iterations": int, "relative_tolerance": float, "alpha_C": float,
    "methods": lambda v: _list(v, str), "ranks": lambda v: _list(v, int),
    "lambdas": lambda v: _list(v, float), "Cs": lambda v: _list(v, float),
}


def parse_config(path):
    """Read a flat ``key = value`` config; relative paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    values = {}
    with open(path, "r", newline="") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not eq or key not in _CONFIG_FIELDS:
                raise ParseError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
            try:
                values[key] = _CONFIG_FIELDS[key](value)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad value for {key}") from None
    for key in ("train", "validation", "test"):
        if key not in values:
            raise ParseError(f"{path}: missing required key {key!r}")
    for key in ("train", "validation", "test", "output"):
        if key in values and not os.path.isabs(values[key]):
            values[key] = os.path.join(base, values[key])
    for key in ("train", "validation", "test"):
        if not os.path.exists(values[key]):
            raise ParseError(f"{path}: {key} file {values[key]} does not exist")
    return RunConfig(**values)


def write_metrics_csv(path, rows):
    """Write metric rows under the fixed header; floats use their shortest exact repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
