import json
import logging

import numpy as np
import pytest

from hyperod.gbdt import GradientBoostedTrees


def best_stump_sse(x, r, min_leaf):
    """Brute-force best single split on one feature (sum of squared errors)."""
    order = np.argsort(x)
    xs, rs = x[order], r[order]
    best = np.sum((r - r.mean()) ** 2)
    for i in range(min_leaf, len(x) - min_leaf + 1):
        if xs[i - 1] == xs[i]:
            continue
        left, right = rs[:i], rs[i:]
        best = min(best, np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2))
    return best


def test_depth_one_tree_finds_brute_force_split():
    rng = np.random.default_rng(0)
    x = rng.permutation(40).astype(float)
    y = np.where(x > 23.5, 2.0, -1.0) + 0.01 * rng.normal(size=40)
    model = GradientBoostedTrees(n_trees=1, max_depth=1, learning_rate=1.0, min_samples_leaf=3, n_bins=64,
                                 validation_fraction=0.0).fit(x[:, None], y)
    pred = model.predict(x[:, None])
    assert np.sum((y - pred) ** 2) == pytest.approx(best_stump_sse(x, y, 3), rel=1e-12)


def test_fits_nonlinear_function():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (600, 3))
    y = np.sin(3 * X[:, 0]) + (X[:, 1] > 0)
    model = GradientBoostedTrees(n_trees=200, max_depth=4, learning_rate=0.1).fit(X[:500], y[:500])
    resid = y[500:] - model.predict(X[500:])
    assert np.mean(resid ** 2) < 0.05 * np.var(y[500:])


def test_early_stopping_truncates():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 2))
    y = rng.normal(size=200)  # pure noise: validation loss stops improving quickly
    model = GradientBoostedTrees(n_trees=300, n_iter_no_change=5).fit(X, y)
    assert len(model.trees) < 300


def test_constant_target_and_depth_zero(caplog):
    X = np.arange(30.0)[:, None]
    with caplog.at_level(logging.WARNING):
        model = GradientBoostedTrees().fit(X, np.full(30, 0.7))
    assert "all targets equal" in caplog.text
    np.testing.assert_allclose(model.predict(X), 0.7)
    y = np.arange(30.0)
    stump = GradientBoostedTrees(max_depth=0, n_trees=5, validation_fraction=0.0).fit(X, y)
    np.testing.assert_allclose(stump.predict(X), y.mean())


def test_serialization_round_trip():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(100, 4))
    y = X[:, 0] * 2 + rng.normal(size=100) * 0.1
    model = GradientBoostedTrees(n_trees=30, seed=4).fit(X, y)
    clone = GradientBoostedTrees.from_dict(json.loads(json.dumps(model.to_dict())))
    np.testing.assert_array_equal(model.predict(X), clone.predict(X))


def test_deterministic_given_seed():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 3))
    y = X.sum(axis=1)
    a = GradientBoostedTrees(n_trees=20, seed=9).fit(X, y).predict(X)
    b = GradientBoostedTrees(n_trees=20, seed=9).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)
