import subprocess
import sys

import numpy as np
import pytest

from nmfalpha import io
from nmfalpha.cli import main
from nmfalpha.harness import planted_subspace_task


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ds = planted_subspace_task(1, n_train=60, n_validation=30, n_test=30)
    X = ds.X * 10
    paths = {}
    for name, split in (("train", "train_labeled"), ("validation", "validation"), ("test", "test")):
        idx = ds.splits[split]
        paths[name] = str(root / f"{name}.txt")
        io.write_sparse_dataset(paths[name], X[:, idx], ds.labels[idx], "binary")
    rng = np.random.default_rng(0)
    paths["rank1"] = str(root / "rank1.txt")
    io.write_sparse_dataset(paths["rank1"], np.outer(0.5 + rng.random(6), 0.5 + rng.random(9)),
                            [1] * 9, "binary")
    paths["root"] = root
    return paths


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def value(out, key):
    for line in out.splitlines():
        if line.startswith(f"{key} = "):
            return line.split(" = ", 1)[1]
    raise KeyError(key)


def test_factorize_planted_rank_one(files, capsys, tmp_path):
    code, out, _ = run(["factorize", "--input", files["rank1"], "--rank", 1, "--seed", 5,
                        "--out", tmp_path / "m"], capsys)
    assert code == 0
    assert value(out, "seed") == "5"
    assert float(value(out, "final_loss")) < 1e-8
    assert "seed = 5" in (tmp_path / "m").read_text()


def test_semi_lambda_zero_trace_matches_factorize(files, capsys, tmp_path):
    common = ["--input", files["train"], "--rank", 4, "--seed", 2, "--max-iter", 80]
    run(["factorize", *common, "--out", tmp_path / "f", "--trace", tmp_path / "f.trace"], capsys)
    code, out, _ = run(["semi", *common, "--labels-fraction", 0.2, "--task", "binary",
                        "--lambda", 0, "--out", tmp_path / "s", "--trace", tmp_path / "s.trace"],
                       capsys)
    assert code == 0 and value(out, "labeled") == "12"
    assert (tmp_path / "f.trace").read_bytes() == (tmp_path / "s.trace").read_bytes()
    arch = io.load_model(str(tmp_path / "s"))
    assert arch.kind == "nmf_alpha" and arch.arrays["S"].shape == (60, 2)


def test_semi_with_perceptron(files, capsys, tmp_path):
    code, out, _ = run(["semi", "--input", files["train"], "--labels-fraction", 0.5, "--rank", 3,
                        "--lambda", 1, "--classifier", "perceptron", "--max-iter", 30,
                        "--out", tmp_path / "s"], capsys)
    assert code == 0 and float(value(out, "supervision_term")) >= 0


def test_embed_train_predict_chain(files, capsys, tmp_path):
    model, clf = tmp_path / "s", tmp_path / "c"
    run(["semi", "--input", files["train"], "--labels-fraction", 0.5, "--rank", 3, "--lambda", 1,
         "--max-iter", 50, "--out", model], capsys)
    code, out, _ = run(["embed", "--model", model, "--input", files["test"],
                        "--out", tmp_path / "z.csv"], capsys)
    assert code == 0 and value(out, "examples") == "30"
    lines = (tmp_path / "z.csv").read_text().splitlines()
    assert lines[0] == "z1,z2,z3" and len(lines) == 31
    code, _, _ = run(["embed", "--model", model, "--stored", "--out", tmp_path / "zs.csv"], capsys)
    assert code == 0
    code, out, _ = run(["svm-train", "--input", files["train"], "--embed-model", model,
                        "--out", clf], capsys)
    assert code == 0 and value(out, "members") == "1"
    code, out, _ = run(["predict", "--input", files["test"], "--embed-model", model,
                        "--model", clf, "--out", tmp_path / "p.txt"], capsys)
    assert code == 0 and 0 <= float(value(out, "accuracy")) <= 1
    assert set((tmp_path / "p.txt").read_text().split()) <= {"+1", "-1"}


def test_raw_classifier_on_input_features(files, capsys, tmp_path):
    assert run(["svm-train", "--input", files["train"], "--out", tmp_path / "c"], capsys)[0] == 0
    code, out, _ = run(["predict", "--input", files["test"], "--model", tmp_path / "c"], capsys)
    assert code == 0


def test_eval_writes_csv(files, capsys, tmp_path):
    code, _, _ = run(["eval", "--train", files["train"], "--validation", files["validation"],
                      "--test", files["test"], "--method", "nmf", "--rank", 3, "--repeats", 2,
                      "--labels-fraction", 0.5, "--max-iter", 40, "--out", tmp_path / "e.csv"],
                     capsys)
    assert code == 0
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "method,rank,lambda,C,repeat,split,metric,value"
    assert len(lines) == 5 and lines[1].startswith("nmf,3,1.0,1.0,0,validation,accuracy,")


def test_sweep_from_config(files, capsys):
    root = files["root"]
    cfg = root / "run.cfg"
    cfg.write_text("train = train.txt\nvalidation = validation.txt\ntest = test.txt\n"
                   "labels_fraction = 0.5\nmethods = raw, nmf_alpha\nranks = 2, 3\n"
                   "lambdas = 1\nCs = 1\nrepeats = 2\noutput = sweep_out\nmax_iterations = 30\n")
    code, out, _ = run(["sweep", "--config", cfg], capsys)
    assert code == 0 and value(out, "seed") == "0"
    metrics = (root / "sweep_out" / "metrics.csv").read_text().splitlines()
    assert len(metrics) == 1 + (1 + 2) * 2 * 2
    assert (root / "sweep_out" / "selected.csv").exists()


def test_verify(capsys):
    code, out, _ = run(["verify", "--seed", 7], capsys)
    assert code == 0
    assert out.strip().splitlines()[-1] == "PASS"
    assert "FAIL" not in out


def test_exit_codes(files, capsys, tmp_path):
    code, _, err = run(["factorize", "--input", files["train"], "--rank", 1, "--out",
                        tmp_path / "m", "--bogus"], capsys)
    assert code == 2 and "unrecognized" in err
    assert run(["frobnicate"], capsys)[0] == 2
    assert run(["embed", "--model", "x", "--out", "y"], capsys)[0] == 2
    bad = tmp_path / "neg.txt"
    bad.write_text("+1 1:1\n-1 1:-2\n")
    code, _, err = run(["factorize", "--input", bad, "--rank", 1, "--out", tmp_path / "m"], capsys)
    assert code == 1 and "line 2" in err
    code, _, err = run(["embed", "--model", tmp_path / "missing", "--input", files["test"],
                        "--out", tmp_path / "z"], capsys)
    assert code == 1
    (tmp_path / "broken").write_text("NMFALPHA v1 nmf\nCRC32 00000000\n")
    assert run(["embed", "--model", tmp_path / "broken", "--stored", "--out", tmp_path / "z"],
               capsys)[0] == 1


def test_module_entry_point(files, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nmfalpha", "verify", "--seed", "1",
                           "--instances", "3"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("seed = 1\n")
