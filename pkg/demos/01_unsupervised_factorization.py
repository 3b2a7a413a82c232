"""Fit a plain I-divergence factorization to synthetic counts and watch the loss fall.

Run:  python demos/01_unsupervised_factorization.py
"""
import numpy as np

from nmfalpha import FitOptions, factorize, inner_product_embedding

rng = np.random.default_rng(7)

# counts generated from a rank-4 nonnegative model
V_true = rng.gamma(1.0, 1.0, size=(30, 4))
H_true = rng.gamma(1.0, 3.0, size=(4, 200))
X = rng.poisson(V_true @ H_true).astype(float)
print(f"data: {X.shape[0]} features x {X.shape[1]} examples, {np.mean(X == 0):.0%} zeros")

fact = factorize(X, 4, FitOptions(max_iterations=400, relative_tolerance=1e-8, seed=0))
trace = np.asarray(fact.loss_trace)
print(f"iterations run: {fact.iterations_run}")
for i in (0, 10, 50, len(trace) - 1):
    print(f"  loss after {i:4d} updates: {trace[i]:.4f}")
assert np.all(np.diff(trace) <= 1e-9 * trace[:-1]), "loss should never increase"

# inner products of the reduced columns match inner products of V @ H
Z = inner_product_embedding(fact)
W = fact.V @ fact.H
gap = np.max(np.abs(Z.T @ Z - W.T @ W)) / np.max(np.abs(W.T @ W))
print(f"relative Gram mismatch between Z and VH: {gap:.2e}")
