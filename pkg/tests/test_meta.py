import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperod.meta import (
    LayoutError, MetaStore, PerfMatrix, ScoreEncoder, assemble_features, data_embedding, feature_hash,
    global_best, hash_projection, layout_digest, prepare_scores, train_fval,
)
from hyperod.space import HpConfig, HpGrid


def test_hash_projection_has_one_signed_entry_per_feature():
    P = hash_projection(50, k=16, seed=3)
    assert P.shape == (50, 16)
    assert set(np.unique(np.abs(P).sum(axis=1))) <= {1.0}


def test_feature_hash_is_linear():
    rng = np.random.default_rng(0)
    x, z = rng.normal(size=30), rng.normal(size=30)
    np.testing.assert_allclose(feature_hash(x + 2 * z, 64), feature_hash(x, 64) + 2 * feature_hash(z, 64))


def test_bucket_of_feature_zero_uses_reference_murmur_value():
    # MurmurHash3_x86_32 of the 4-byte integer 0 with seed 0 is 0x2362F9DE
    P = hash_projection(1, k=1000, seed=0)
    assert np.flatnonzero(P[0])[0] == 0x2362F9DE % 1000


def test_feature_hash_inner_product_unbiased():
    rng = np.random.default_rng(1)
    x = rng.normal(size=40)
    est = [np.sum(feature_hash(x, 8, seed=s) ** 2) for s in range(400)]
    assert np.mean(est) == pytest.approx(np.sum(x ** 2), rel=0.1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=300), st.randoms(use_true_random=False))
def test_prepared_scores_are_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a, b = prepare_scores(values, 64), prepare_scores(shuffled, 64)
    np.testing.assert_array_equal(a, b)
    assert a.size == min(len(values), 64)
    assert np.all(np.diff(a) >= 0)


def test_score_encoder_permutation_invariant_and_scale_free():
    g = ScoreEncoder(seed=0, max_scores=128)
    s = np.random.default_rng(2).exponential(size=500)
    e1 = g.embed([s])[0]
    e2 = g.embed([s[::-1] * 10 + 3])[0]
    np.testing.assert_allclose(e1, e2, atol=1e-12)
    assert e1.shape == (g.embedding_dim,)


def test_data_embedding_is_max_pool(tiny_meta, tiny_tasks):
    h = tiny_meta.store.h
    X = tiny_tasks[0].X
    emb = data_embedding(X, h)
    np.testing.assert_array_equal(emb, h.embed_samples(X).max(axis=0))
    np.testing.assert_array_equal(emb, data_embedding(X[::-1], h))


def test_layout_guard():
    digest = layout_digest(4, 3)
    hp = HpConfig(2, 1.0, 0.0, 0.0)
    assert assemble_features(hp, 5, np.zeros(4), np.zeros(3), digest).shape == (5 + 4 + 3,)
    with pytest.raises(LayoutError):
        assemble_features(hp, 5, np.zeros(5), np.zeros(3), digest)


def test_train_fval_needs_enough_pairs():
    with pytest.raises(ValueError, match="at least 100"):
        train_fval(np.zeros((50, 3)), np.zeros(50), "x")


def test_fval_predictions_are_clipped(tiny_meta):
    fval = tiny_meta.store.fval
    feats = tiny_meta.train_features
    pred = fval.predict(np.vstack([feats, feats * 1e3]))
    assert pred.min() >= 0.0 and pred.max() <= 1.0


def test_global_best_tie_breaks_on_size():
    grid = HpGrid(n_layers=[2, 4], compression=[1.0], dropout=[0.0], weight_decay=[0.0])
    P = PerfMatrix(np.array([[0.8, 0.8], [0.6, 0.6]]), ["a", "b"], grid.digest())
    assert global_best(P, grid, [10]) == HpConfig(2, 1.0, 0.0, 0.0)
    P = PerfMatrix(np.array([[0.7, 0.9], [0.6, 0.6]]), ["a", "b"], grid.digest())
    assert global_best(P, grid, [10]) == HpConfig(4, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        PerfMatrix(np.array([[1.2]]), ["a"], "")


def test_meta_train_outputs(tiny_meta, tiny_cfg):
    store = tiny_meta.store
    assert store.perf.P.shape == (8, len(tiny_cfg.grid()))
    assert store.best_hp in tiny_cfg.grid().configs()
    assert len(tiny_meta.train_targets) == len(tiny_meta.train_features)
    assert np.all((tiny_meta.train_targets >= 0) & (tiny_meta.train_targets <= 1))


def test_store_round_trip_and_tamper_detection(tiny_meta, tiny_tasks, tmp_path):
    store = tiny_meta.store
    store.save(tmp_path / "store")
    loaded = MetaStore.load(tmp_path / "store")
    X = tiny_tasks[8].X
    np.testing.assert_array_equal(data_embedding(X, loaded.h), data_embedding(X, store.h))
    feats = tiny_meta.train_features[:5]
    np.testing.assert_array_equal(loaded.fval.predict(feats), store.fval.predict(feats))
    assert loaded.best_hp == store.best_hp and loaded.grid == store.grid
    with open(tmp_path / "store" / "fval.json", "a") as fh:
        fh.write(" ")
    with pytest.raises(ValueError, match="digest"):
        MetaStore.load(tmp_path / "store")
    with pytest.raises(FileNotFoundError):
        MetaStore.load(tmp_path / "missing")
