import numpy as np
import pytest

from hyperod import tensor as tn
from hyperod.autoencoder import (
    ArchSpec, DegenerateArchitectureError, MaskedWeights, batch_scores, forward_batch, forward_masked,
    outlier_scores, train_from_scratch,
)
from hyperod.checks import compact_check_instance, compact_forward_backward, compact_layers
from hyperod.data import synth_testbed
from hyperod.metrics import auroc
from hyperod.space import ConfigError, HpConfig, build_arch_mask


def random_masked(rng, hp, F, D=8):
    w = rng.normal(0, 0.4, (D, F, F))
    b = rng.normal(0, 0.4, (D, F))
    return MaskedWeights(w, b, build_arch_mask(hp.lambda_arch(F, D), D, F))


@pytest.mark.parametrize("hp", [HpConfig(2, 1.0, 0, 0), HpConfig(4, 1.6, 0, 1e-5), HpConfig(8, 3.0, 0, 1e-6)])
def test_masked_matches_compact(hp, rng):
    assert compact_check_instance(hp, 7, 8, rng) <= 1e-12


def test_eval_scores_match_compact_oracle(rng):
    hp = HpConfig(6, 1.4, 0.2, 0.0)
    F = 9
    mw = random_masked(rng, hp, F)
    X = rng.uniform(size=(20, F))
    _, Ws, bs = compact_layers(mw.weights, mw.biases, hp.widths(F), 8)
    recon, _, _, _ = compact_forward_backward(X, Ws, bs, 0.0)
    np.testing.assert_allclose(outlier_scores(X, mw).scores, ((recon - X) ** 2).sum(axis=1), atol=1e-12)


def test_batch_forward_matches_single(rng):
    F = 6
    hps = [HpConfig(2, 1.0, 0, 0), HpConfig(4, 2.0, 0, 0), HpConfig(8, 1.2, 0, 0)]
    mws = [random_masked(rng, hp, F) for hp in hps]
    X = rng.uniform(size=(10, F))
    batch = batch_scores(X, np.stack([m.weights for m in mws]), np.stack([m.biases for m in mws]),
                         np.stack([m.mask.mask for m in mws]), np.stack([m.mask.bias_mask for m in mws]))
    for i, mw in enumerate(mws):
        np.testing.assert_allclose(batch[i], outlier_scores(X, mw).scores, atol=1e-12)


def test_noop_layers_pass_input_through(rng):
    """A 2-layer detector inside an 8-deep tensor ignores the six middle slots."""
    hp = HpConfig(2, 1.0, 0, 0)
    F = 5
    mw = random_masked(rng, hp, F)
    X = rng.uniform(size=(4, F))
    before = forward_masked(X, mw).data
    mw.weights[1:7] = rng.normal(size=mw.weights[1:7].shape) * 100
    np.testing.assert_array_equal(forward_masked(X, mw).data, before)


def test_dropout_only_in_train_mode(rng):
    hp = HpConfig(4, 1.0, 0.4, 0)
    mw = random_masked(rng, hp, 6)
    X = rng.uniform(size=(8, 6))
    a = forward_masked(X, mw, 0.4, "eval").data
    b = forward_masked(X, mw, 0.4, "eval").data
    np.testing.assert_array_equal(a, b)
    c = forward_masked(X, mw, 0.4, "train", np.random.default_rng(0)).data
    assert not np.allclose(a, c)
    with pytest.raises(ValueError):
        forward_masked(X, mw, 0.4, "train", None)
    with pytest.raises(ValueError):
        forward_masked(X, mw, 0.0, "predict")


def test_degenerate_and_dimension_errors(rng):
    D, F = 4, 3
    w = tn.Tensor(np.zeros((1, D, F, F)))
    b = tn.Tensor(np.zeros((1, D, F)))
    with pytest.raises(DegenerateArchitectureError):
        forward_batch(np.zeros((2, F)), w, b, np.zeros((1, D, F, F)), np.zeros((1, D, F)), [0.0])
    with pytest.raises(tn.DimensionError):
        forward_batch(np.zeros((2, F + 1)), w, b, np.ones((1, D, F, F)), np.ones((1, D, F)), [0.0])


def test_arch_spec_validation():
    ArchSpec(6, [3, 6], 8)
    with pytest.raises(ConfigError):
        ArchSpec(6, [3, 2, 6], 8)
    with pytest.raises(ConfigError):
        ArchSpec(6, [3, 5], 8)
    with pytest.raises(ConfigError):
        ArchSpec(6, [3, 3, 3, 3, 3, 3, 3, 3, 3, 6], 8)


def test_full_capacity_autoencoder_detects_synthetic_outliers():
    task = synth_testbed(1, n_samples=300, seed=5)[0]
    model = train_from_scratch(task.X, HpConfig(2, 1.0, 0.0, 0.0), np.random.default_rng(0), epochs=300,
                               lr=3e-3)
    assert auroc(model.scores(task.X), task.y) > 0.8
