import numpy as np
import pytest
import scipy.sparse as sp

from nmfalpha.exceptions import DimensionError, ParameterError
from nmfalpha.matrix import factored_divergence, i_divergence
from nmfalpha.nmf import FitOptions, factorize, fold_in, init_factors, update_unsup

from conftest import random_instance


def test_init_is_seeded_and_in_range():
    V, H = init_factors(3, 4, 2, seed=5)
    assert V.shape == (3, 2) and H.shape == (2, 4)
    assert V.min() > 0.1 and V.max() < 1.1 and H.min() > 0.1 and H.max() < 1.1
    V2, H2 = init_factors(3, 4, 2, seed=5)
    assert np.array_equal(V, V2) and np.array_equal(H, H2)
    V3, _ = init_factors(3, 4, 2, seed=6)
    assert not np.array_equal(V, V3)
    with pytest.raises(DimensionError):
        init_factors(0, 4, 2, 0)


def test_fixed_point_of_exact_product(rng):
    V, H = 0.1 + rng.random((7, 3)), 0.1 + rng.random((3, 9))
    V1, H1 = update_unsup(V @ H, V, H)
    assert np.allclose(V1, V, rtol=1e-12, atol=0)
    assert np.allclose(H1, H, rtol=1e-12, atol=0)


@pytest.mark.parametrize("seed", range(100))
def test_single_update_is_monotone(seed):
    X, V, H, _ = random_instance(seed)
    before = i_divergence(X, V @ H)
    V1, H1 = update_unsup(X, V, H)
    assert V1.min() >= 0 and H1.min() >= 0
    assert i_divergence(X, V1 @ H1) <= before + 1e-9 * abs(before)


def test_random_update_decreases_loss(rng):
    X = rng.random((20, 30))
    V, H = init_factors(20, 30, 5, 0)
    before = i_divergence(X, V @ H)
    V1, H1 = update_unsup(X, V, H)
    assert i_divergence(X, V1 @ H1) < before


def test_rank_one_instance(rng):
    X = np.outer(0.5 + rng.random(8), 0.5 + rng.random(11))
    V, H = init_factors(8, 11, 1, 3)
    for _ in range(200):
        V, H = update_unsup(X, V, H)
    assert i_divergence(X, V @ H) < 1e-8


def test_planted_recovery():
    rng = np.random.default_rng(0)
    X = (0.1 + rng.random((10, 3))) @ (0.1 + rng.random((3, 15)))
    fact = factorize(X, 3, FitOptions(500, 0.0, seed=1))
    assert fact.loss_trace[-1] < 1e-6
    assert fact.iterations_run <= 500


def test_trace_is_nonincreasing_and_deterministic(rng):
    X = rng.random((12, 14))
    opts = FitOptions(200, 1e-9, seed=4)
    a, b = factorize(X, 3, opts), factorize(X, 3, opts)
    assert a.loss_trace == b.loss_trace
    t = np.array(a.loss_trace)
    assert np.all(t[1:] <= t[:-1] + 1e-9 * np.abs(t[:-1]))
    assert a.loss_trace[-1] == pytest.approx(factored_divergence(X, a.V, a.H), rel=1e-14)


def test_options_validation():
    with pytest.raises(ParameterError):
        FitOptions(max_iterations=0)
    with pytest.raises(ParameterError):
        FitOptions(relative_tolerance=-1)
    with pytest.raises(ParameterError):
        factorize(np.ones((3, 3)), 0)


def test_tolerance_stops_early(rng):
    fact = factorize(rng.random((8, 10)), 2, FitOptions(500, 1e-3, seed=0))
    assert fact.iterations_run < 500
    t = fact.loss_trace
    assert abs(t[-2] - t[-1]) <= 1e-3 * t[-2]


def test_loss_stride():
    X = np.random.default_rng(1).random((5, 6))
    fact = factorize(X, 2, FitOptions(10, 0.0, loss_record_stride=4))
    # initial, iterations 4 and 8, and the final iteration
    assert len(fact.loss_trace) == 4
    full = factorize(X, 2, FitOptions(10, 0.0))
    assert fact.loss_trace == [full.loss_trace[i] for i in (0, 4, 8, 10)]


def test_rank_warning():
    with pytest.warns(UserWarning):
        factorize(np.ones((2, 3)), 4, FitOptions(2))


def test_sparse_input_matches_dense(rng):
    X = rng.random((15, 20)) * (rng.random((15, 20)) < 0.15)
    opts = FitOptions(30, 0.0, seed=2)
    a, b = factorize(X, 3, opts), factorize(sp.csc_matrix(X), 3, opts)
    assert np.allclose(a.V, b.V, rtol=1e-9)
    assert np.allclose(a.loss_trace, b.loss_trace, rtol=1e-10)


def test_scale_gauge(rng):
    X, V, H, _ = random_instance(3)
    assert i_divergence(X, (V * 3.7) @ (H / 3.7)) == pytest.approx(i_divergence(X, V @ H), rel=1e-12)


def test_zero_rows_and_columns_are_harmless(rng):
    X = rng.random((6, 8))
    X[2] = 0
    X[:, 5] = 0
    fact = factorize(X, 2, FitOptions(100))
    assert np.all(np.isfinite(fact.V)) and np.all(np.isfinite(fact.H))
    assert fact.V.min() >= 0 and fact.H.min() >= 0


def test_fold_in_recovers_coefficients(rng):
    V = 0.1 + rng.random((12, 3))
    H = 0.1 + rng.random((3, 5))
    Hf = fold_in(V @ H, V, iterations=2000)
    assert np.allclose(V @ Hf, V @ H, rtol=1e-4)
    with pytest.raises(DimensionError):
        fold_in(np.ones((4, 2)), V)
