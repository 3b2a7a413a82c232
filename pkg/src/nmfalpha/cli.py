"""Command-line entry point: ``nmfalpha <command> [options]``.

Exit status is 0 on success, 1 when the input is rejected (bad values,
malformed files, failed self-checks) and 2 on usage errors.
"""
import argparse
import csv
import os
import sys

import numpy as np
import scipy.sparse as sp

from . import io
from .classifiers import SVMOptions, predict, train_ensemble
from .exceptions import NMFAlphaError
from .geometry import embedding_map
from .harness import (METHODS, LabeledDataset, PipelineParams, evaluate, make_splits,
                      metric_name, reduce, score, sweep)
from .nmf import FitOptions, factorize, fold_in, update_unsup
from .semi import (auxiliary_bound, build_support_matrix, closed_form_v_step, semi_factorize,
                   semi_loss, update_semi)
from .matrix import factored_divergence


def _fmt(x):
    # shortest text that round-trips the double
    return repr(float(x))


def _say(key, value):
    print(f"{key} = {value}")


def _fit_options(args):
    return FitOptions(args.max_iter, args.tol, args.seed, args.loss_stride)


def _write_trace(path, trace):
    if path:
        with open(path, "w", newline="\n") as fh:
            fh.writelines(_fmt(v) + "\n" for v in trace)


def _report_fit(fact, args):
    _say("iterations", fact.iterations_run)
    _say("final_loss", _fmt(fact.loss_trace[-1]))
    _write_trace(args.trace, fact.loss_trace)


# -- commands -------------------------------------------------------------------

def cmd_factorize(args):
    data = io.parse_sparse_dataset(args.input, args.task)
    opts = _fit_options(args)
    fact = factorize(data.X, args.rank, opts)
    io.save_model(args.out, io.factorization_archive(fact, opts, input=os.path.basename(args.input)))
    _report_fit(fact, args)
    return 0


def _labeled_columns(data, fraction, seed):
    n = data.X.shape[1]
    ds = LabeledDataset(data.X, data.labels, data.task,
                        {"train_labeled": np.arange(n), "train_unlabeled": np.array([], dtype=np.intp)})
    return make_splits(ds, fraction, seed, 1)[0].splits["train_labeled"]


def cmd_semi(args):
    data = io.parse_sparse_dataset(args.input, args.task)
    opts = _fit_options(args)
    L = _labeled_columns(data, args.labels_fraction, args.seed)
    labels = [data.labels[i] for i in L]
    ens = train_ensemble(data.X[:, L], labels, data.task, args.svm_c, args.classifier,
                         SVMOptions(seed=args.seed), indices=L)
    # columns stay in file order; S rows outside L are zero
    n = data.X.shape[1]
    support = build_support_matrix(ens.models, n, n)
    fact = semi_factorize(data.X, support, args.rank, args.lam, opts)
    report = semi_loss(data.X, fact.V, fact.H, support, args.lam)
    archive = io.factorization_archive(
        fact, opts, input=os.path.basename(args.input), task=data.task,
        labels_fraction=_fmt(args.labels_fraction), classifier=args.classifier,
        svm_c=_fmt(args.svm_c), labeled_count=len(L))
    archive.arrays["S"] = support.S
    archive.arrays["labeled"] = np.asarray(L, dtype=np.float64)[np.newaxis, :]
    io.save_model(args.out, archive)
    _say("labeled", len(L))
    _say("classifiers", support.p)
    _say("reconstruction_term", _fmt(report.reconstruction_term))
    _say("supervision_term", _fmt(report.supervision_term))
    _report_fit(fact, args)
    return 0


def _pad_rows(X, d):
    """Append zero features so a file that never used the last indices still fits."""
    if X.shape[0] > d:
        raise NMFAlphaError(f"input has {X.shape[0]} features, model expects {d}")
    if X.shape[0] == d:
        return X
    if sp.issparse(X):
        X = sp.csc_matrix(X, copy=True)
        X.resize((d, X.shape[1]))
        return X
    return np.vstack([X, np.zeros((d - X.shape[0], X.shape[1]))])


def _embed(archive, X, iterations, seed, use_stored=False):
    """Features (rows = dimensions) for the columns of ``X`` under a stored model."""
    if archive.kind in io.NONNEG_KINDS:
        fact = io.factorization_from_archive(archive)
        X = _pad_rows(X, fact.V.shape[0])
        H = fact.H if use_stored else fold_in(X, fact.V, iterations, seed)
        return embedding_map(fact.V) @ H
    if archive.kind == "pca":
        return io.pca_from_archive(archive).transform(X)
    if archive.kind == "lda":
        return np.asarray((X.T @ archive.arrays["W"]).T)
    raise NMFAlphaError(f"cannot embed with an archive of kind {archive.kind}")


def _write_features(path, Z):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"z{k + 1}" for k in range(Z.shape[0])])
        for col in np.asarray(Z).T:
            writer.writerow([_fmt(v) for v in col])


def cmd_embed(args):
    archive = io.load_model(args.model)
    if args.stored:
        Z = _embed(archive, np.zeros((0, 0)), 0, args.seed, use_stored=True)
    else:
        data = io.parse_sparse_dataset(args.input, args.task)
        Z = _embed(archive, data.X, args.fold_in_iter, args.seed)
    _write_features(args.out, Z)
    _say("examples", Z.shape[1])
    _say("dimensions", Z.shape[0])
    return 0


def _features(args, data):
    if not args.embed_model:
        return data.X
    return _embed(io.load_model(args.embed_model), data.X, args.fold_in_iter, args.seed)


def cmd_svm_train(args):
    data = io.parse_sparse_dataset(args.input, args.task)
    Z = _features(args, data)
    ens = train_ensemble(Z, data.labels, data.task, args.svm_c, args.classifier,
                         SVMOptions(seed=args.seed))
    io.save_model(args.out, io.ensemble_archive(ens, args.seed, classifier=args.classifier,
                                                svm_c=_fmt(args.svm_c), dimensions=Z.shape[0]))
    _say("members", ens.p)
    _say("support_vectors", sum(len(m.alphas) for m in ens.models if m is not None))
    return 0


def cmd_predict(args):
    data = io.parse_sparse_dataset(args.input, args.task)
    Z = _features(args, data)
    ens = io.ensemble_from_archive(io.load_model(args.model))
    fitted = [m for m in ens.models if m is not None]
    if fitted:
        Z = _pad_rows(Z, fitted[0].w.shape[0])
    pred = predict(ens, Z)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.writelines(io.format_label(p, ens.task) + "\n" for p in pred)
    _say(metric_name(ens.task), _fmt(score(ens.task, pred, data.labels, ens.classes)))
    return 0


def _pipeline_params(args):
    return PipelineParams(rank=args.rank, lam=args.lam, C=args.svm_c, alpha_C=args.alpha_c,
                          classifier=args.classifier, seed=args.seed, max_iterations=args.max_iter,
                          relative_tolerance=args.tol)


def cmd_eval(args):
    base = io.load_labeled_dataset(args.train, args.validation, args.test, args.task)
    params = _pipeline_params(args)
    metric = metric_name(base.task)
    rows = []
    for rep, ds in enumerate(make_splits(base, args.labels_fraction, args.seed, args.repeats)):
        red = reduce(ds, args.method, params)
        res = evaluate(ds, red, args.svm_c, args.classifier)
        for split in ("validation", "test"):
            rows.append((args.method, args.rank, args.lam, args.svm_c, rep, split, metric, res[split]))
            print(f"repeat {rep} {split} {metric} = {_fmt(res[split])}")
    io.write_metrics_csv(args.out, rows)
    return 0


def cmd_sweep(args):
    cfg = io.parse_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    _say("seed", seed)
    base = io.load_labeled_dataset(cfg.train, cfg.validation, cfg.test, cfg.task)
    reps = make_splits(base, cfg.labels_fraction, seed, cfg.repeats)
    params = PipelineParams(alpha_C=cfg.alpha_C, classifier=cfg.classifier, seed=seed,
                            max_iterations=cfg.max_iterations,
                            relative_tolerance=cfg.relative_tolerance)
    os.makedirs(cfg.output, exist_ok=True)
    rows, selected = [], []
    for method in cfg.methods:
        if method not in METHODS:
            raise NMFAlphaError(f"unknown method {method!r}")
        result = sweep(reps, method, cfg.ranks, cfg.lambdas, cfg.Cs, params)
        rows.extend(result.rows())
        best = result.selected
        selected.append((method, best.rank, best.lam, best.C, "mean", "validation",
                         result.metric, best.validation))
        selected.append((method, best.rank, best.lam, best.C, "mean", "test",
                         result.metric, best.test))
        print(f"{method}: rank = {best.rank} lambda = {_fmt(best.lam)} C = {_fmt(best.C)} "
              f"validation = {_fmt(best.validation)} test = {_fmt(best.test)}")
    io.write_metrics_csv(os.path.join(cfg.output, "metrics.csv"), rows)
    io.write_metrics_csv(os.path.join(cfg.output, "selected.csv"), selected)
    return 0


def self_checks(seed, instances=10):
    """Seeded random-instance checks of the semi-supervised updates.

    Returns ``{check name: worst deviation observed}`` together with the
    tolerance each check must meet.
    """
    rng = np.random.default_rng(seed)
    worst = {"monotone": 0.0, "lambda_zero": 0.0, "bound_tight": 0.0,
             "bound_above": 0.0, "closed_form": 0.0}
    for _ in range(instances):
        d, n, r, p = rng.integers(2, 9), rng.integers(3, 11), rng.integers(1, 4), rng.integers(1, 3)
        X = rng.random((d, n)) * (rng.random((d, n)) < 0.7)
        S = rng.random((n, 2 * p)) * (rng.random((n, 2 * p)) < 0.5)
        V, H = 0.1 + rng.random((d, r)), 0.1 + rng.random((r, n))
        lam = float(rng.choice([0.0, 0.1, 1.0, 10.0]))
        before = semi_loss(X, V, H, S, lam).total
        V1, H1 = update_semi(X, V, H, S, lam)
        after = semi_loss(X, V1, H1, S, lam).total
        worst["monotone"] = max(worst["monotone"], (after - before) / max(before, 1e-300))
        Vu, Hu = update_unsup(X, V, H)
        V0, H0 = update_semi(X, V, H, S, 0.0)
        worst["lambda_zero"] = max(worst["lambda_zero"], np.abs(Vu - V0).max(), np.abs(Hu - H0).max())
        bound, loss = auxiliary_bound(X, V, H, S, lam)
        worst["bound_tight"] = max(worst["bound_tight"], abs(bound - loss) / max(loss, 1e-300))
        eta = rng.random((d, n, r))
        eta /= eta.sum(axis=2, keepdims=True)
        loose, _ = auxiliary_bound(X, V, H, S, lam, eta=eta)
        worst["bound_above"] = max(worst["bound_above"], (loss - loose) / max(loss, 1e-300))
        closed = closed_form_v_step(X, V, H, S, lam)
        fast, _ = update_semi(X, V, H, S, lam)
        worst["closed_form"] = max(worst["closed_form"],
                                   np.abs(closed - fast).max() / max(np.abs(fast).max(), 1e-300))
    tolerances = {"monotone": 1e-9, "lambda_zero": 1e-12, "bound_tight": 1e-9,
                  "bound_above": 1e-9, "closed_form": 1e-10}
    return worst, tolerances


def cmd_verify(args):
    worst, tol = self_checks(args.seed, args.instances)
    ok = True
    for name, value in worst.items():
        passed = value <= tol[name]
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: worst = {value:.3e} (tolerance {tol[name]:.0e})")
    # unsupervised fit on a planted rank-1 product
    rng = np.random.default_rng(args.seed)
    X = np.outer(0.5 + rng.random(6), 0.5 + rng.random(8))
    fact = factorize(X, 1, FitOptions(500, 0.0, args.seed))
    final = factored_divergence(X, fact.V, fact.H)
    passed = final < 1e-8
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} planted_rank_one: final loss = {final:.3e}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# -- argument parsing -----------------------------------------------------------

def _fit_flags(p):
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--loss-stride", type=int, default=1, help="record the loss every N iterations")
    p.add_argument("--trace", help="also write the loss trace, one value per line")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=("binary", "multiway", "multilabel"),
                   help="label format (inferred from the file when omitted)")


def build_parser():
    parser = argparse.ArgumentParser(prog="nmfalpha", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", help="unsupervised I-divergence NMF")
    p.add_argument("--input", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--out", required=True)
    _common(p)
    _fit_flags(p)
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("semi", help="NMF that preserves classifier weight parts")
    p.add_argument("--input", required=True)
    p.add_argument("--labels-fraction", type=float, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--classifier", choices=("svm", "perceptron"), default="svm")
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _common(p)
    _fit_flags(p)
    p.set_defaults(func=cmd_semi)

    p = sub.add_parser("embed", help="map examples into the reduced space")
    p.add_argument("--model", required=True)
    p.add_argument("--input")
    p.add_argument("--stored", action="store_true",
                   help="embed the training coefficients kept in the archive")
    p.add_argument("--fold-in-iter", type=int, default=100)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_embed)

    for name, func, help_ in (("svm-train", cmd_svm_train, "train linear classifiers"),
                              ("predict", cmd_predict, "apply trained classifiers")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--input", required=True)
        p.add_argument("--embed-model", help="reduce features with this archive first")
        p.add_argument("--fold-in-iter", type=int, default=100)
        _common(p)
        if name == "svm-train":
            p.add_argument("--classifier", choices=("svm", "perceptron"), default="svm")
            p.add_argument("--svm-c", type=float, default=1.0)
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="one pipeline setting over label-mask repeats, to CSV")
    p.add_argument("--train", required=True)
    p.add_argument("--validation")
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=METHODS, default="nmf_alpha")
    p.add_argument("--labels-fraction", type=float, default=1.0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--alpha-c", type=float)
    p.add_argument("--classifier", choices=("svm", "perceptron"), default="svm")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="self-checks on seeded random instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=10)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command == "embed" and not args.stored and not args.input:
        parser.print_usage(sys.stderr)
        print("nmfalpha embed: error: --input is required unless --stored is given", file=sys.stderr)
        return 2
    if args.command != "sweep":
        _say("seed", args.seed)
    try:
        return args.func(args)
    except (NMFAlphaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
