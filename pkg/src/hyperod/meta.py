"""Offline meta-training on labeled historical datasets.

Produces everything the online search needs to score a configuration on an
unlabeled dataset: a cross-dataset feature extractor (data embeddings), a
permutation-invariant score-set encoder (model embeddings), and a boosted-tree
proxy validator that maps ``[hp features, data embedding, model embedding]``
to predicted AUROC.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.utils import murmurhash3_32

from . import tensor as tn
from .config import RunConfig, make_rng
from .data import Task
from .gbdt import GradientBoostedTrees
from .hypernet import HyperNet, HyperNetSpec, TrainSettings, hn_train_scheduled
from .metrics import auroc
from .optim import Adam
from .space import HpConfig, HpGrid, log_wd

log = logging.getLogger(__name__)

META_VERSION = 1
FEATURE_LAYOUT = ("n_layers", "compression", "dropout", "log_wd", "mean_width_ratio",
                  "data_emb[64]", "model_emb[32]")


class LayoutError(ValueError):
    pass


# ------------------------------------------------------------ feature hashing


def hash_projection(n_features: int, k: int = 256, seed: int = 0) -> np.ndarray:
    """F x k matrix with one signed 1 per row: feature f goes to its bucket with its sign."""
    P = np.zeros((n_features, k))
    for f in range(n_features):
        bucket = murmurhash3_32(f, seed=seed, positive=True) % k
        sign = 1.0 if murmurhash3_32(f, seed=seed + 1, positive=True) % 2 == 0 else -1.0
        P[f, bucket] += sign
    return P


def feature_hash(x, k: int = 256, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of a vector (or each row of a matrix) into k buckets."""
    x = np.asarray(x, dtype=float)
    return x @ hash_projection(x.shape[-1], k, seed)


# ------------------------------------------------------------ small MLP helper


def _dense_params(dims, rng, prefix):
    params = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        params.append(tn.parameter(rng.normal(0.0, np.sqrt(2.0 / a), (a, b)), f"{prefix}w{i}"))
        params.append(tn.parameter(np.zeros(b), f"{prefix}b{i}"))
    return params


def _state(params):
    return {p.name: p.data.copy() for p in params}


def _load_state(params, state):
    for p in params:
        p.data[...] = state[p.name]


# ------------------------------------------------------------ data embeddings


class FeatureExtractor:
    """h: hashed sample -> outlier logit, with a 64-unit embedding tap."""

    def __init__(self, k=256, seed=0, hidden=(128, 64)):
        self.k = k
        self.seed = seed
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        self.params = _dense_params((k,) + self.hidden + (1,), rng, "h")

    @property
    def embedding_dim(self):
        return self.hidden[-1]

    def _forward(self, H):
        h = tn.as_tensor(H)
        n_layers = len(self.params) // 2
        tap = None
        for i in range(n_layers):
            h = tn.matmul(h, self.params[2 * i]) + self.params[2 * i + 1]
            if i < n_layers - 1:
                h = tn.relu(h)
                tap = h
        return h, tap

    def hashed(self, X):
        return feature_hash(X, self.k, self.seed)

    def embed_samples(self, X) -> np.ndarray:
        with tn.no_tape():
            _, tap = self._forward(self.hashed(X))
        return tap.data

    def logits(self, X) -> np.ndarray:
        with tn.no_tape():
            out, _ = self._forward(self.hashed(X))
        return out.data[:, 0]


def train_feature_extractor(tasks, k=256, seed=0, epochs=30, lr=1e-3, batch_size=256) -> FeatureExtractor:
    """Weighted binary cross-entropy on pooled hashed samples of all tasks.

    Each task's samples are weighted by inverse class frequency within the
    task, so every task contributes equally and both classes are balanced.
    """
    usable = []
    for t in tasks:
        if t.has_both_classes():
            usable.append(t)
        else:
            log.warning("task %s has a single class; excluded from extractor training", t.name)
    if len(usable) < 2:
        raise ValueError("feature extractor needs at least two labeled tasks with both classes")
    h = FeatureExtractor(k, seed)
    Hs, ys, ws = [], [], []
    for t in usable:
        Hs.append(h.hashed(t.X))
        y = t.y.astype(float)
        n_pos = y.sum()
        n_neg = len(y) - n_pos
        ws.append(np.where(y > 0, 0.5 / n_pos, 0.5 / n_neg))
        ys.append(y)
    H, y, w = np.vstack(Hs), np.concatenate(ys), np.concatenate(ws)
    w = w * len(w) / w.sum()
    rng = np.random.default_rng(seed + 1)
    opt = Adam(h.params, lr=lr)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            Hb, yb, wb = H[idx], y[idx], w[idx]

            def loss_fn():
                logit, _ = h._forward(Hb)
                z = tn.reshape(logit, (len(idx),))
                # BCE with logits: softplus(z) - y z
                return tn.mean((tn.softplus(z) - z * yb) * wb)

            _, grads = tn.value_and_grad(loss_fn, h.params)
            opt.step(grads)
    return h


def data_embedding(X, h: FeatureExtractor) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise tn.ContractError("data_embedding needs a non-empty 2-D sample matrix")
    return h.embed_samples(X).max(axis=0)


# ------------------------------------------------------------ model embeddings


def prepare_scores(scores, max_scores=1024) -> np.ndarray:
    """z-normalize a score set and reduce it to at most ``max_scores`` order statistics.

    Working on the sorted set keeps the result independent of sample order.
    """
    s = np.sort(np.asarray(scores, dtype=float))
    if s.size == 0:
        raise tn.ContractError("empty score set")
    sd = s.std()
    s = (s - s.mean()) / (sd if sd > 1e-12 else 1.0)
    if s.size > max_scores:
        idx = np.rint(np.linspace(0, s.size - 1, max_scores)).astype(int)
        s = s[idx]
    return s


def _pad_sets(sets):
    n = max(len(s) for s in sets)
    vals = np.zeros((len(sets), n, 1))
    mask = np.zeros((len(sets), n, 1))
    for i, s in enumerate(sets):
        vals[i, : len(s), 0] = s
        mask[i, : len(s), 0] = 1.0
    return vals, mask


class ScoreEncoder:
    """g: DeepSet over a score set; mean-pooled 32-vector is the embedding."""

    def __init__(self, seed=0, phi=(32, 32), rho=(16,), max_scores=1024):
        rng = np.random.default_rng(seed)
        self.max_scores = max_scores
        self.phi = _dense_params((1,) + tuple(phi), rng, "phi")
        self.rho = _dense_params((phi[-1],) + tuple(rho) + (1,), rng, "rho")

    @property
    def params(self):
        return self.phi + self.rho

    @property
    def embedding_dim(self):
        return self.phi[-2].shape[1]

    def _pooled(self, vals, mask):
        h = tn.as_tensor(vals)
        for i in range(len(self.phi) // 2):
            h = tn.relu(tn.matmul(h, self.phi[2 * i]) + self.phi[2 * i + 1])
        counts = mask.sum(axis=1)  # B x 1
        return tn.tsum(h * mask, axis=1) * (1.0 / counts)

    def _head(self, pooled):
        h = pooled
        n = len(self.rho) // 2
        for i in range(n):
            h = tn.matmul(h, self.rho[2 * i]) + self.rho[2 * i + 1]
            if i < n - 1:
                h = tn.relu(h)
        return h

    def embed_prepared(self, prepared_sets) -> np.ndarray:
        vals, mask = _pad_sets(prepared_sets)
        with tn.no_tape():
            return self._pooled(vals, mask).data

    def embed(self, score_sets) -> np.ndarray:
        return self.embed_prepared([prepare_scores(s, self.max_scores) for s in score_sets])

    def predict(self, score_sets) -> np.ndarray:
        vals, mask = _pad_sets([prepare_scores(s, self.max_scores) for s in score_sets])
        with tn.no_tape():
            return self._head(self._pooled(vals, mask)).data[:, 0]


def model_embedding(scores, g: ScoreEncoder) -> np.ndarray:
    return g.embed([scores])[0]


def train_score_encoder(score_sets, targets, seed=0, epochs=40, lr=1e-3, batch_size=64,
                        max_scores=1024):
    """Fit g on (score set, performance) pairs with squared error.

    Returns the encoder and the per-epoch mean training loss.
    """
    g = ScoreEncoder(seed, max_scores=max_scores)
    prepared = [prepare_scores(s, max_scores) for s in score_sets]
    targets = np.asarray(targets, dtype=float)
    # bucket sets by length so padding stays small
    rng = np.random.default_rng(seed + 1)
    opt = Adam(g.params, lr=lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(prepared))
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            vals, mask = _pad_sets([prepared[i] for i in idx])
            tb = targets[idx][:, None]

            def loss_fn():
                pred = g._head(g._pooled(vals, mask))
                return tn.mean(tn.square(pred - tb))

            loss, grads = tn.value_and_grad(loss_fn, g.params)
            opt.step(grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return g, history


# ------------------------------------------------------------ proxy validator


def hp_features(hp: HpConfig, n_features: int) -> np.ndarray:
    widths = hp.widths(n_features)
    return np.array([hp.n_layers, hp.compression, hp.dropout, log_wd(hp.weight_decay),
                     float(np.mean(widths)) / n_features])


def layout_digest(data_dim: int, model_dim: int) -> str:
    blob = json.dumps({"layout": FEATURE_LAYOUT, "data": data_dim, "model": model_dim}).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def assemble_features(hp: HpConfig, n_features: int, data_emb, model_emb, expected_layout=None):
    data_emb = np.asarray(data_emb, dtype=float).ravel()
    model_emb = np.asarray(model_emb, dtype=float).ravel()
    if expected_layout is not None and layout_digest(data_emb.size, model_emb.size) != expected_layout:
        raise LayoutError("feature layout does not match the trained proxy validator")
    return np.concatenate([hp_features(hp, n_features), data_emb, model_emb])


@dataclass
class ProxyValidator:
    model: GradientBoostedTrees
    layout: str

    def predict(self, features) -> np.ndarray:
        features = np.atleast_2d(features)
        return np.clip(self.model.predict(features), 0.0, 1.0)

    def to_dict(self):
        return {"layout": self.layout, "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(GradientBoostedTrees.from_dict(d["model"]), d["layout"])


def train_fval(features, targets, layout: str, n_trees=200, max_depth=4, learning_rate=0.05,
               seed=0, min_pairs=100) -> ProxyValidator:
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(targets) < min_pairs:
        raise ValueError(f"need at least {min_pairs} (dataset, config) pairs, got {len(targets)}")
    model = GradientBoostedTrees(n_trees, max_depth, learning_rate, seed=seed).fit(features, targets)
    return ProxyValidator(model, layout)


# ------------------------------------------------------------ HN-based collection


def hn_settings(cfg: RunConfig) -> TrainSettings:
    return TrainSettings(cfg.hn_optimizer, cfg.hn_lr, cfg.hn_momentum, cfg.hn_batch, cfg.hn_lambdas_per_step)


def new_hypernet(cfg: RunConfig, n_features: int, rng) -> HyperNet:
    spec = HyperNetSpec(max(cfg.grid_n_layers), n_features, cfg.d_pe, cfg.hn_hidden, cfg.hn_n_hidden,
                        cfg.hn_activation, cfg.hn_dropout)
    return HyperNet(spec, rng)


@dataclass
class TaskScores:
    """HN-generated scores of every canonical config on one dataset."""

    name: str
    n_features: int
    configs: list          # canonical configs
    column_map: np.ndarray  # nominal grid index -> canonical index
    scores: np.ndarray     # len(configs) x n
    perf: np.ndarray | None  # AUROC per canonical config (None if unlabeled)

    def nominal_perf(self) -> np.ndarray:
        return self.perf[self.column_map]


def score_task(task: Task, grid: HpGrid, cfg: RunConfig, rng) -> TaskScores:
    """Train one HN on ``task`` over the whole grid, then score every config."""
    configs, cmap = grid.canonical(task.n_features)
    hn = new_hypernet(cfg, task.n_features, rng)
    hn_train_scheduled(hn, configs, task.X, cfg.hn_epochs, rng, settings=hn_settings(cfg))
    scores = hn.scores(task.X, configs)
    perf = None
    if task.has_both_classes():
        perf = np.array([auroc(s, task.y) for s in scores])
    return TaskScores(task.name, task.n_features, configs, cmap, scores, perf)


@dataclass
class PerfMatrix:
    P: np.ndarray               # N x m over the nominal grid
    datasets: list
    grid_digest: str

    def __post_init__(self):
        if self.P.size and (self.P.min() < 0 or self.P.max() > 1):
            raise ValueError("performance entries must lie in [0, 1]")


def collect_scores_and_perf(tasks, grid: HpGrid, cfg: RunConfig):
    """One HN per task; returns the per-task score tables and the performance matrix."""
    tables = []
    for t in tasks:
        if not t.has_both_classes():
            log.warning("task %s has a single class; skipped", t.name)
            continue
        tables.append(score_task(t, grid, cfg, make_rng(cfg.seed, "offline-hn", t.name)))
    P = np.vstack([tb.nominal_perf() for tb in tables])
    return tables, PerfMatrix(P, [tb.name for tb in tables], grid.digest())


def global_best(perf: PerfMatrix, grid: HpGrid, feature_counts=None):
    """Column with the highest mean performance; ties go to the fewest parameters."""
    configs = grid.configs()
    means = perf.P.mean(axis=0)
    best = means.max()
    tied = [j for j in range(len(configs)) if means[j] >= best - 1e-12]
    if len(tied) > 1:
        counts = feature_counts or [16]
        cost = [np.mean([configs[j].n_params(F) for F in counts]) for j in tied]
        tied = [tied[int(np.argmin(cost))]]
    return configs[tied[0]]


# ------------------------------------------------------------ meta store


@dataclass
class MetaStore:
    h: FeatureExtractor
    g: ScoreEncoder
    fval: ProxyValidator
    perf: PerfMatrix
    grid: HpGrid
    best_hp: HpConfig
    sigma_init: list
    seed: int = 0
    version: int = META_VERSION
    info: dict = field(default_factory=dict)

    def features_for(self, hp: HpConfig, n_features: int, data_emb, model_emb):
        return assemble_features(hp, n_features, data_emb, model_emb, self.fval.layout)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        files = {
            "h.npz": lambda p: np.savez(p, **_state(self.h.params)),
            "g.npz": lambda p: np.savez(p, **_state(self.g.params)),
            "fval.json": lambda p: _write_json(p, self.fval.to_dict()),
            "perf.npz": lambda p: np.savez(p, P=self.perf.P, datasets=np.array(self.perf.datasets)),
        }
        digests = {}
        for name, writer in files.items():
            path = os.path.join(directory, name)
            writer(path)
            digests[name] = _file_digest(path)
        manifest = {
            "version": self.version, "seed": self.seed, "grid": self.grid.as_dict(),
            "grid_digest": self.grid.digest(), "best_hp": self.best_hp.as_dict(),
            "sigma_init": self.sigma_init, "h": {"k": self.h.k, "seed": self.h.seed, "hidden": self.h.hidden},
            "g": {"max_scores": self.g.max_scores}, "files": digests, "info": self.info,
            "seed_derivation": "numpy SeedSequence(master, spawn_key=crc32(labels))",
        }
        _write_json(os.path.join(directory, "manifest.json"), manifest)

    @classmethod
    def load(cls, directory) -> "MetaStore":
        mpath = os.path.join(directory, "manifest.json")
        if not os.path.exists(mpath):
            raise FileNotFoundError(f"no MetaStore manifest in {directory}")
        with open(mpath) as fh:
            manifest = json.load(fh)
        if manifest["version"] != META_VERSION:
            raise ValueError(f"unsupported MetaStore version {manifest['version']}")
        for name, digest in manifest["files"].items():
            if _file_digest(os.path.join(directory, name)) != digest:
                raise ValueError(f"MetaStore component {name} failed its digest check")
        grid = HpGrid(**manifest["grid"])
        if grid.digest() != manifest["grid_digest"]:
            raise ValueError("MetaStore grid digest mismatch")
        h = FeatureExtractor(manifest["h"]["k"], manifest["h"]["seed"], manifest["h"]["hidden"])
        with np.load(os.path.join(directory, "h.npz")) as d:
            _load_state(h.params, d)
        g = ScoreEncoder(max_scores=manifest["g"]["max_scores"])
        with np.load(os.path.join(directory, "g.npz")) as d:
            _load_state(g.params, d)
        with open(os.path.join(directory, "fval.json")) as fh:
            fval = ProxyValidator.from_dict(json.load(fh))
        with np.load(os.path.join(directory, "perf.npz")) as d:
            perf = PerfMatrix(d["P"], [str(x) for x in d["datasets"]], manifest["grid_digest"])
        return cls(h, g, fval, perf, grid, HpConfig(**manifest["best_hp"]), manifest["sigma_init"],
                   manifest["seed"], manifest["version"], manifest.get("info", {}))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)


def _file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ------------------------------------------------------------ offline driver


@dataclass
class MetaTrainResult:
    store: MetaStore
    tables: list
    g_history: list
    train_features: np.ndarray
    train_targets: np.ndarray


def sigma_middle(cfg: RunConfig) -> list:
    return [dim[len(dim) // 2] for dim in cfg.sigma_grid()]


def meta_train(tasks, cfg: RunConfig) -> MetaTrainResult:
    grid = cfg.grid()
    tables, perf = collect_scores_and_perf(tasks, grid, cfg)
    labeled = [t for t in tasks if t.has_both_classes()]
    h = train_feature_extractor(labeled, cfg.hash_dim, seed=_seed(cfg, "h"), epochs=cfg.h_epochs)
    sets, targets = [], []
    for tb in tables:
        sets.extend(tb.scores)
        targets.extend(tb.perf)
    g, g_hist = train_score_encoder(sets, targets, seed=_seed(cfg, "g"), epochs=cfg.g_epochs, lr=cfg.g_lr,
                                    max_scores=cfg.g_max_scores)
    layout = layout_digest(h.embedding_dim, g.embedding_dim)
    feats, ys = [], []
    for t, tb in zip(labeled, tables):
        d_emb = data_embedding(t.X, h)
        m_emb = g.embed(tb.scores)
        for j, hp in enumerate(tb.configs):
            feats.append(assemble_features(hp, tb.n_features, d_emb, m_emb[j], layout))
            ys.append(tb.perf[j])
    feats, ys = np.array(feats), np.array(ys)
    fval = train_fval(feats, ys, layout, cfg.fval_trees, cfg.fval_depth, cfg.fval_lr, seed=_seed(cfg, "fval"))
    best = global_best(perf, grid, [tb.n_features for tb in tables])
    store = MetaStore(h, g, fval, perf, grid, best, sigma_middle(cfg), cfg.seed)
    return MetaTrainResult(store, tables, g_hist, feats, ys)


def _seed(cfg, label) -> int:
    return int(make_rng(cfg.seed, label).integers(0, 2**31 - 1))
