"""Hypernetwork that emits weights for every autoencoder in the grid.

The input of the network is ``[dropout, scaled log10(weight_decay)]``
followed by a sinusoidal encoding of each entry of the padded architecture
vector. The output is the maximal weight tensor (``D x W x W``) plus biases
(``D x W``); an :class:`~hyperod.space.ArchMask` then selects the
sub-network for the requested configuration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .autoencoder import batch_scores, batch_train_loss, forward_batch
from .optim import make_optimizer
from .space import ConfigError, HpConfig, build_arch_mask, log_wd

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def positional_encode(lambda_arch, d_pe: int = 16) -> np.ndarray:
    """Sinusoidal encoding, one row ``[sin, cos, sin, cos, ...]`` per entry."""
    if d_pe % 2:
        raise ValueError(f"d_pe must be even, got {d_pe}")
    v = np.asarray(lambda_arch, dtype=float)[:, None]
    freq = 10000.0 ** (-2.0 * np.arange(d_pe // 2) / d_pe)
    out = np.empty((v.shape[0], d_pe))
    out[:, 0::2] = np.sin(v * freq)
    out[:, 1::2] = np.cos(v * freq)
    return out


@dataclass
class HyperNetSpec:
    max_depth: int
    max_width: int
    d_pe: int = 16
    hidden: int = 200
    n_hidden: int = 2
    activation: str = "relu"
    dropout: float = 0.0
    log_wd_range: tuple = (-8.0, -4.0)

    @property
    def input_dim(self):
        return 2 + self.max_depth * self.d_pe

    @property
    def n_weight_outputs(self):
        return self.max_depth * self.max_width * self.max_width

    @property
    def output_dim(self):
        return self.n_weight_outputs + self.max_depth * self.max_width


@dataclass
class _Prepared:
    encoding: np.ndarray
    mask: np.ndarray
    bias_mask: np.ndarray


class HyperNet:
    """HN(lambda; phi) for autoencoders on ``max_width`` input features."""

    def __init__(self, spec: HyperNetSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: list[tn.Tensor] = []
        dims = [spec.input_dim] + [spec.hidden] * spec.n_hidden
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.params.append(tn.parameter(rng.normal(0.0, np.sqrt(2.0 / a), (a, b)), f"w{i}"))
            self.params.append(tn.parameter(np.zeros(b), f"b{i}"))
        # The output bias holds a Glorot-scale base network; the input-dependent
        # part starts at half that magnitude.
        W, nw = spec.max_width, spec.n_weight_outputs
        glorot = np.sqrt(2.0 / (W + W))
        w_out = rng.normal(0.0, 0.5 * glorot / np.sqrt(spec.hidden), (spec.hidden, spec.output_dim))
        b_out = np.zeros(spec.output_dim)
        b_out[:nw] = rng.uniform(-np.sqrt(3) * glorot, np.sqrt(3) * glorot, nw)
        self.params.append(tn.parameter(w_out, "w_out"))
        self.params.append(tn.parameter(b_out, "b_out"))
        self._prepared: dict[HpConfig, _Prepared] = {}

    @property
    def max_depth(self):
        return self.spec.max_depth

    @property
    def max_width(self):
        return self.spec.max_width

    def prepare(self, hp: HpConfig) -> _Prepared:
        """Input encoding and architecture mask for ``hp`` (cached)."""
        prep = self._prepared.get(hp)
        if prep is None:
            s = self.spec
            arch = hp.lambda_arch(s.max_width, s.max_depth)
            lo, hi = s.log_wd_range
            wd = np.clip((log_wd(hp.weight_decay) - lo) / (hi - lo), 0.0, 1.0)
            enc = np.concatenate([[hp.dropout, wd], positional_encode(arch, s.d_pe).ravel()])
            am = build_arch_mask(arch, s.max_depth, s.max_width)
            prep = _Prepared(enc, am.mask, am.bias_mask)
            self._prepared[hp] = prep
        return prep

    def batch_inputs(self, hps):
        preps = [self.prepare(hp) for hp in hps]
        enc = np.stack([p.encoding for p in preps])
        masks = np.stack([p.mask for p in preps])
        bias_masks = np.stack([p.bias_mask for p in preps])
        return enc, masks, bias_masks

    def forward(self, inputs, train=False, rng=None):
        """Map encoded inputs (m x input_dim) to (weights m x D x W x W, biases m x D x W)."""
        act = tn.relu if self.spec.activation == "relu" else tn.tanh
        h = tn.as_tensor(inputs)
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            h = tn.matmul(h, w) + b
            if i < n_layers - 1:
                h = act(h)
                if train and self.spec.dropout > 0:
                    h = h * tn.dropout_mask(h.shape, self.spec.dropout, rng)
        m = h.shape[0]
        D, W, nw = self.spec.max_depth, self.spec.max_width, self.spec.n_weight_outputs
        weights = tn.reshape(h[:, :nw], (m, D, W, W))
        biases = tn.reshape(h[:, nw:], (m, D, W))
        return weights, biases

    def generate(self, hps):
        """Forward-only weights for a list of configs, as numpy arrays."""
        enc, masks, bias_masks = self.batch_inputs(hps)
        with tn.no_tape():
            w, b = self.forward(enc)
        return w.data, b.data, masks, bias_masks

    def scores(self, X, hps, chunk=64) -> np.ndarray:
        """Outlier scores (len(hps) x n) from HN-generated weights."""
        out = []
        for start in range(0, len(hps), chunk):
            w, b, masks, bias_masks = self.generate(hps[start:start + chunk])
            out.append(batch_scores(X, w, b, masks, bias_masks))
        return np.concatenate(out, axis=0)

    # -------------------------------------------------------- persistence

    def state(self) -> dict:
        return {p.name: p.data.copy() for p in self.params}

    def load_state(self, state: dict):
        for p in self.params:
            p.data[...] = state[p.name]

    def save(self, path, grid_digest=""):
        header = {"version": CHECKPOINT_VERSION, "D": self.max_depth, "W": self.max_width,
                  "d_pe": self.spec.d_pe, "grid_digest": grid_digest,
                  "spec": {k: v for k, v in self.spec.__dict__.items()}}
        np.savez(path, header=np.array(json.dumps(header)), **self.state())

    @classmethod
    def load(cls, path, grid_digest=None) -> "HyperNet":
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            if header["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header['version']}")
            if grid_digest is not None and header["grid_digest"] != grid_digest:
                raise ValueError("checkpoint was trained on a different grid")
            spec_kw = header["spec"]
            spec_kw["log_wd_range"] = tuple(spec_kw["log_wd_range"])
            hn = cls(HyperNetSpec(**spec_kw), np.random.default_rng(0))
            hn.load_state({p.name: data[p.name] for p in hn.params})
        return hn


def hn_forward(hp: HpConfig, hn: HyperNet):
    w, b, _, _ = hn.generate([hp])
    return w[0], b[0]


def hn_loss_batch(hps, X_batch, hn: HyperNet, rng=None, train=True) -> tn.Tensor:
    """Mean training loss over the configs in ``hps`` using HN-generated weights."""
    if len(hps) == 0:
        raise tn.ContractError("hn_loss_batch needs at least one configuration")
    enc, masks, bias_masks = hn.batch_inputs(hps)
    weights, biases = hn.forward(enc, train=train, rng=rng)
    rates = [hp.dropout for hp in hps]
    mode = "train" if train else "eval"
    recon, masked_w = forward_batch(X_batch, weights, biases, masks, bias_masks, rates, mode, rng)
    losses = batch_train_loss(X_batch, recon, masked_w, [hp.weight_decay for hp in hps])
    return tn.mean(losses)


@dataclass
class TrainSettings:
    optimizer: str = "adam"
    lr: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 512
    lambdas_per_step: int = 8


class HyperNetTrainer:
    """Holds optimizer state so training can resume across calls."""

    def __init__(self, hn: HyperNet, settings: TrainSettings):
        self.hn = hn
        self.settings = settings
        self.opt = make_optimizer(settings.optimizer, hn.params, settings.lr, settings.momentum)
        self.steps = 0

    def step(self, hps, X_batch, rng) -> float:
        with tn.Tape() as tape:
            loss = hn_loss_batch(hps, X_batch, self.hn, rng, train=True)
        grads = tn.backward(tape, loss, self.hn.params)
        tape.release()
        self.opt.step(grads)
        self.steps += 1
        return float(loss.data)

    def set_lr(self, lr):
        self.settings.lr = lr
        self.opt.lr = lr


def default_schedule(depths, epochs: int):
    """Admit depths deepest-first in equal phases: [(start_epoch, admitted), ...]."""
    order = sorted(set(depths), reverse=True)
    n = len(order)
    return [(int(round(k * epochs / n)), frozenset(order[:k + 1])) for k in range(n)]


def admitted_at(schedule, epoch: int) -> frozenset:
    admitted = frozenset()
    for start, depths in schedule:
        if epoch >= start:
            admitted = depths
    return admitted


def check_schedule(schedule):
    prev = frozenset()
    for start, depths in schedule:
        if not prev <= depths:
            raise ConfigError("schedule removes a previously admitted depth")
        prev = depths
    starts = [s for s, _ in schedule]
    if starts != sorted(starts):
        raise ConfigError("schedule phases must be ordered by start epoch")


def eval_losses(hn: HyperNet, configs, X, chunk=64) -> np.ndarray:
    """Eval-mode (no dropout) training loss of every config on the full ``X``."""
    out = []
    with tn.no_tape():
        for start in range(0, len(configs), chunk):
            hps = configs[start:start + chunk]
            enc, masks, bias_masks = hn.batch_inputs(hps)
            w, b = hn.forward(enc)
            recon, mw = forward_batch(X, w, b, masks, bias_masks, np.zeros(len(hps)), "eval")
            out.append(batch_train_loss(X, recon, mw, [hp.weight_decay for hp in hps]).data)
    return np.concatenate(out)


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    admitted: list = field(default_factory=list)
    per_config: list = field(default_factory=list)  # (epoch, losses) snapshots


def hn_train_scheduled(hn: HyperNet, configs, X, epochs: int, rng: np.random.Generator,
                       schedule=None, settings: TrainSettings | None = None,
                       trainer: HyperNetTrainer | None = None, snapshot_every=0) -> TrainHistory:
    """Scheduled batchwise training: deeper configs first, shallower ones join later."""
    settings = settings or TrainSettings()
    trainer = trainer or HyperNetTrainer(hn, settings)
    configs = list(configs)
    if schedule is None:
        schedule = default_schedule([hp.n_layers for hp in configs], epochs)
    check_schedule(schedule)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    hist = TrainHistory()
    for epoch in range(epochs):
        admitted = admitted_at(schedule, epoch)
        pool = [hp for hp in configs if hp.n_layers in admitted]
        if not pool:
            raise ConfigError(f"no admitted configurations at epoch {epoch}")
        if snapshot_every and epoch % snapshot_every == 0:
            hist.per_config.append((epoch, eval_losses(hn, configs, X)))
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, settings.batch_size):
            xb = X[order[start:start + settings.batch_size]]
            pick = rng.integers(0, len(pool), settings.lambdas_per_step)
            losses.append(trainer.step([pool[i] for i in pick], xb, rng))
        hist.epoch_loss.append(float(np.mean(losses)))
        hist.admitted.append(admitted)
    if snapshot_every:
        hist.per_config.append((epochs, eval_losses(hn, configs, X)))
    return hist
