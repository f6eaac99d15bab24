"""Fully-connected hourglass autoencoder whose weights are supplied from outside.

Weights live in a maximal ``D x W x W`` tensor (rows = output units) and are
multiplied by an architecture mask before use. A layer whose mask is all zero
is a no-op: its input passes through unchanged. Hidden layers use ``tanh``;
the final layer is linear.

All forward functions are batched over a leading axis of ``m`` hyperparameter
configurations so the hypernetwork can train several architectures per step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .space import ArchMask, ConfigError, HpConfig
from .tensor import Tensor


class DegenerateArchitectureError(ValueError):
    pass


@dataclass
class ArchSpec:
    input_dim: int
    widths: list
    max_depth: int

    def __post_init__(self):
        L = len(self.widths)
        if L % 2 or L < 2:
            raise ConfigError(f"need an even number of layers, got {L}")
        if L > self.max_depth:
            raise ConfigError(f"{L} layers exceed max depth {self.max_depth}")
        if self.widths[-1] != self.input_dim:
            raise ConfigError("last width must equal the input dimension")
        if max(self.widths) > self.max_width or min(self.widths) < 1:
            raise ConfigError(f"widths {self.widths} outside [1, {self.max_width}]")

    @property
    def n_layers(self):
        return len(self.widths)

    @property
    def max_width(self):
        return self.input_dim


@dataclass
class MaskedWeights:
    weights: Tensor | np.ndarray  # D x W x W, unmasked generator output
    biases: Tensor | np.ndarray   # D x W
    mask: ArchMask


@dataclass
class ScoreSet:
    scores: np.ndarray
    dataset_id: str = ""
    hp_id: str = ""

    def __len__(self):
        return len(self.scores)


def _dropout_masks(shape, rates, rng):
    """One inverted-dropout mask per configuration; ``shape`` = (m, n, W)."""
    rates = np.asarray(rates, dtype=float).reshape(-1, 1, 1)
    keep = rng.random(shape) >= rates
    return keep / (1.0 - rates)


def forward_batch(X, weights, biases, masks, bias_masks, dropout_rates, mode="eval", rng=None):
    """Masked forward pass for ``m`` configurations at once.

    Parameters
    ----------
    X : (n, W) array or Tensor
    weights : Tensor (m, D, W, W)
    biases : Tensor (m, D, W)
    masks, bias_masks : arrays matching ``weights`` / ``biases``
    dropout_rates : sequence of m rates, used only when ``mode == 'train'``

    Returns the (m, n, W) reconstruction and the masked weights (m, D, W, W).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    weights, biases = tn.as_tensor(weights), tn.as_tensor(biases)
    m, D, W, _ = weights.shape
    Xt = tn.as_tensor(X)
    if Xt.shape[-1] != W:
        raise tn.DimensionError(f"X has {Xt.shape[-1]} columns, weights expect {W}")
    gates = np.asarray(bias_masks).any(axis=2)  # m x D
    if not gates.any(axis=1).all():
        raise DegenerateArchitectureError("every layer is masked out")
    rates = np.asarray(dropout_rates, dtype=float)
    use_dropout = mode == "train" and np.any(rates > 0)
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an explicit random generator")

    masked_w = weights * masks
    masked_b = biases * bias_masks
    h = Xt
    for layer in range(D):
        gate = gates[:, layer]
        if not gate.any():
            continue
        w_l = masked_w[:, layer]                      # m x W x W
        b_l = masked_b[:, layer].reshape(m, 1, W)
        z = tn.matmul(h, tn.transpose_last(w_l)) + b_l
        last = layer == D - 1
        a = z if last else tn.tanh(z)
        if use_dropout and not last:
            a = a * _dropout_masks(a.shape, rates, rng)
        if gate.all():
            h = a
        else:
            g = gate.astype(float).reshape(m, 1, 1)
            if h.ndim == 2:
                h = tn.reshape(h, (1,) + h.shape) * np.ones((m, 1, 1))
            h = a * g + h * (1.0 - g)
    if h.ndim == 2:
        h = tn.reshape(h, (1,) + h.shape) * np.ones((m, 1, 1))
    return h, masked_w


def forward_masked(X, mw: MaskedWeights, dropout_rate=0.0, mode="eval", rng=None) -> Tensor:
    """Reconstruction of ``X`` by one masked detector; returns an (n, F) Tensor."""
    w = tn.as_tensor(mw.weights)
    b = tn.as_tensor(mw.biases)
    out, _ = forward_batch(X, tn.reshape(w, (1,) + w.shape), tn.reshape(b, (1,) + b.shape),
                           mw.mask.mask[None], mw.mask.bias_mask[None], [dropout_rate], mode, rng)
    return tn.reshape(out, out.shape[1:])


def batch_train_loss(X, recon: Tensor, masked_w: Tensor, weight_decays) -> Tensor:
    """Per-configuration training loss, shape (m,).

    Mean squared reconstruction error over all entries plus
    ``weight_decay * sum(masked_w ** 2)``.
    """
    Xt = tn.as_tensor(X)
    err = tn.mean(tn.square(recon - Xt), axis=(1, 2))
    wd = np.asarray(weight_decays, dtype=float)
    if np.any(wd > 0):
        err = err + tn.sum_sq(masked_w, axis=(1, 2, 3)) * wd
    return err


def train_loss(X, recon, masked_w, weight_decay: float) -> Tensor:
    X, recon = tn.as_tensor(X), tn.as_tensor(recon)
    if X.shape != recon.shape:
        raise tn.DimensionError(f"train_loss: shapes {X.shape} and {recon.shape}")
    loss = tn.mean(tn.square(recon - X))
    if weight_decay:
        loss = loss + tn.sum_sq(masked_w) * weight_decay
    return loss


def batch_scores(X, weights, biases, masks, bias_masks) -> np.ndarray:
    """Eval-mode squared reconstruction error per sample, shape (m, n)."""
    with tn.no_tape():
        recon, _ = forward_batch(X, weights, biases, masks, bias_masks, np.zeros(len(masks)), "eval")
    X = np.asarray(X.data if isinstance(X, Tensor) else X)
    return ((recon.data - X[None]) ** 2).sum(axis=2)


def outlier_scores(X, mw: MaskedWeights, dataset_id="", hp_id="") -> ScoreSet:
    with tn.no_tape():
        recon = forward_masked(X, mw, 0.0, "eval")
    X = np.asarray(X)
    return ScoreSet(((recon.data - X) ** 2).sum(axis=1), dataset_id, hp_id)


# ------------------------------------------------------------ direct training


class CompactAutoencoder:
    """Autoencoder with its own weights, trained from scratch (no masking).

    Used by the Default / Global-Best baselines and as a sanity reference.
    """

    def __init__(self, n_features: int, widths, rng: np.random.Generator):
        dims = [n_features] + list(widths)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(tn.parameter(rng.uniform(-limit, limit, (fan_out, fan_in))))
            self.biases.append(tn.parameter(np.zeros(fan_out)))

    @property
    def params(self):
        return self.weights + self.biases

    def forward(self, X, dropout=0.0, rng=None) -> Tensor:
        h = tn.as_tensor(X)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = tn.matmul(h, tn.transpose_last(w)) + b
            if i < last:
                h = tn.tanh(h)
                if dropout > 0 and rng is not None:
                    h = h * tn.dropout_mask(h.shape, dropout, rng)
        return h

    def loss(self, X, weight_decay=0.0, dropout=0.0, rng=None) -> Tensor:
        recon = self.forward(X, dropout, rng)
        loss = tn.mean(tn.square(recon - tn.as_tensor(X)))
        if weight_decay:
            for w in self.weights:
                loss = loss + tn.sum_sq(w) * weight_decay
        return loss

    def scores(self, X) -> np.ndarray:
        with tn.no_tape():
            recon = self.forward(X)
        return ((recon.data - np.asarray(X)) ** 2).sum(axis=1)


def train_from_scratch(X, hp: HpConfig, rng: np.random.Generator, epochs=200, lr=1e-3,
                       batch_size=512) -> CompactAutoencoder:
    from .optim import Adam

    X = np.asarray(X, dtype=float)
    n, F = X.shape
    model = CompactAutoencoder(F, hp.widths(F), rng)
    opt = Adam(model.params, lr=lr)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            xb = X[order[start:start + batch_size]]
            _, grads = tn.value_and_grad(
                lambda: model.loss(xb, hp.weight_decay, hp.dropout, rng), model.params)
            opt.step(grads)
    return model
