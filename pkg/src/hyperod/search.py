"""Online model selection on an unlabeled dataset.

Alternates two stages until the best predicted performance stalls for
``patience`` iterations:

1. train the hypernetwork for ``T`` steps on configurations sampled around
   the current one, adding each sample to the candidate pool;
2. move the current configuration to the pool member with the highest
   entropy-regularized expected proxy score, then re-tune the sampling scales
   one dimension at a time.

Configurations are sampled in a 4-d coordinate space
``(layer index, compression, dropout, log10 weight decay)`` and snapped back
onto the grid, so the pool only ever holds valid grid configurations.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .config import RunConfig
from .hypernet import HyperNetTrainer, hn_train_scheduled
from .meta import MetaStore, data_embedding, hn_settings, new_hypernet
from .space import HpConfig, HpGrid, log_wd

log = logging.getLogger(__name__)

SIGMA_DIMS = ("n_layers", "compression", "dropout", "log_wd")
HALF_LOG_2PI_E = 0.5 * math.log(2 * math.pi * math.e)


class SamplingRangeError(RuntimeError):
    pass


class SearchAborted(RuntimeError):
    pass


def gaussian_entropy(sigma) -> float:
    """Differential entropy of a factorized Gaussian with scales ``sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma entries must be positive")
    return float(np.sum(HALF_LOG_2PI_E + np.log(sigma)))


class SearchSpace:
    """Grid-snapping view of an :class:`HpGrid` for one dataset width."""

    def __init__(self, grid: HpGrid, n_features: int):
        self.grid = grid
        self.n_features = n_features
        self.layers = np.array(grid.n_layers)
        self.axes = [np.arange(len(grid.n_layers), dtype=float), np.array(grid.compression, dtype=float),
                     np.array(grid.dropout, dtype=float), np.array([log_wd(w) for w in grid.weight_decay])]
        self.configs, cmap = grid.canonical(n_features)
        self._canon = {hp.key(n_features): hp for hp in self.configs}
        shape = tuple(len(a) for a in self.axes)
        self._by_index = np.array(self.configs, dtype=object)[cmap].reshape(shape)

    def canonical(self, hp: HpConfig) -> HpConfig:
        return self._canon[hp.key(self.n_features)]

    def coords(self, hp: HpConfig) -> np.ndarray:
        li = int(np.flatnonzero(self.layers == hp.n_layers)[0])
        return np.array([li, hp.compression, hp.dropout, log_wd(hp.weight_decay)], dtype=float)

    def in_range(self, pts: np.ndarray) -> np.ndarray:
        """Layer coordinate must round onto an existing depth."""
        return (pts[:, 0] >= -0.5) & (pts[:, 0] < len(self.layers) - 0.5)

    def snap(self, pts: np.ndarray) -> list[HpConfig]:
        idx = []
        for d, axis in enumerate(self.axes):
            col = np.clip(pts[:, d], axis[0], axis[-1])
            idx.append(np.abs(col[:, None] - axis[None, :]).argmin(axis=1))
        return list(self._by_index[tuple(idx)])


def sample_local_batch(hp: HpConfig, sigma, V: int, rng: np.random.Generator, space: SearchSpace,
                       max_tries: int = 32) -> list[HpConfig]:
    """``V`` grid configurations drawn from a Gaussian of scales ``sigma`` around ``hp``.

    Draws whose depth falls off the grid are redrawn, up to ``max_tries`` rounds.
    """
    base = space.coords(hp)
    sigma = np.asarray(sigma, dtype=float)
    pts = np.empty((V, 4))
    pending = np.arange(V)
    for _ in range(max_tries):
        draw = base + rng.normal(size=(len(pending), 4)) * sigma
        ok = space.in_range(draw)
        pts[pending[ok]] = draw[ok]
        pending = pending[~ok]
        if not len(pending):
            break
    if len(pending):
        raise SamplingRangeError(f"{len(pending)} of {V} samples rejected {max_tries} times; sigma too large")
    return space.snap(pts)


def sample_local(hp: HpConfig, sigma, rng, space: SearchSpace) -> HpConfig:
    return sample_local_batch(hp, sigma, 1, rng, space)[0]


class CandidateEvaluator:
    """f_val predictions from HN-generated scores, cached until the HN changes."""

    def __init__(self, X, hn, store: MetaStore):
        self.X = np.asarray(X, dtype=float)
        self.hn = hn
        self.store = store
        self.n_features = self.X.shape[1]
        self.data_emb = data_embedding(self.X, store.h)
        self.cache: dict[HpConfig, float] = {}

    def reset(self):
        self.cache.clear()

    def predict(self, hps) -> np.ndarray:
        missing = list(dict.fromkeys(hp for hp in hps if hp not in self.cache))
        if missing:
            scores = self.hn.scores(self.X, missing)
            m_emb = self.store.g.embed(scores)
            feats = np.array([self.store.features_for(hp, self.n_features, self.data_emb, m_emb[i])
                              for i, hp in enumerate(missing)])
            for hp, v in zip(missing, self.store.fval.predict(feats)):
                self.cache[hp] = float(v)
        return np.array([self.cache[hp] for hp in hps])


def validation_objective(hp, sigma, evaluator: CandidateEvaluator, space: SearchSpace, V: int,
                         tau: float, rng) -> float:
    """Mean proxy score over ``V`` local samples plus ``tau`` times the sampling entropy."""
    samples = sample_local_batch(hp, sigma, V, rng, space)
    return float(evaluator.predict(samples).mean()) + tau * gaussian_entropy(sigma)


def final_select(pool, predict, n_features: int):
    """Highest predicted candidate; ties go to the configuration with fewer parameters."""
    pool = list(pool)
    preds = np.asarray(predict(pool), dtype=float)
    best = preds.max()
    tied = [hp for hp, v in zip(pool, preds) if v >= best]
    return min(tied, key=lambda hp: (hp.n_params(n_features), hp)), float(best)


@dataclass
class SearchReport:
    selected: dict
    selected_prediction: float
    iterations: int
    pool_size: int
    stopped_by: str
    trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_text(self) -> str:
        """Deterministic JSON record (wall-clock timings excluded)."""
        body = asdict(self)
        body.pop("timings")
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def timings_text(self) -> str:
        return json.dumps(self.timings, indent=2, sort_keys=True) + "\n"


def _clip_sigma(sigma, sigma_grid):
    return [float(min(max(s, dim[0]), dim[-1])) for s, dim in zip(sigma, sigma_grid)]


def hyper_select(X_test, store: MetaStore, cfg: RunConfig, rng: np.random.Generator):
    """Select a configuration for unlabeled ``X_test``; returns ``(hp, report)``."""
    X = np.asarray(X_test, dtype=float)
    n, F = X.shape
    space = SearchSpace(store.grid, F)
    timings = {"pretrain": 0.0, "hn_training": 0.0, "hp_update": 0.0}
    if len(space.configs) == 1:
        hp = space.configs[0]
        report = SearchReport(hp.as_dict(), float("nan"), 0, 1, "single_config", timings=timings)
        return hp, report

    hn = new_hypernet(cfg, F, rng)
    settings = hn_settings(cfg)
    trainer = HyperNetTrainer(hn, settings)
    t0 = time.perf_counter()
    if cfg.online_pretrain_epochs > 0:
        hn_train_scheduled(hn, space.configs, X, cfg.online_pretrain_epochs, rng, settings=settings,
                           trainer=trainer)
    timings["pretrain"] = time.perf_counter() - t0
    evaluator = CandidateEvaluator(X, hn, store)

    sigma_grid = cfg.sigma_grid()
    lam = space.canonical(store.best_hp)
    sigma = _clip_sigma(store.sigma_init, sigma_grid)
    pool: dict[HpConfig, None] = {}
    best_so_far = -np.inf
    stall = 0
    trace = []
    lr_halved = False
    it = 0
    stopped_by = "max_iterations"
    while it < cfg.max_iterations:
        it += 1
        # (S1) local HN training
        t0 = time.perf_counter()
        for _ in range(cfg.search_T):
            hp = sample_local(lam, sigma, rng, space)
            xb = X[rng.choice(n, size=min(n, cfg.hn_batch), replace=False)]
            try:
                trainer.step([hp], xb, rng)
            except tn.NumericError:
                if lr_halved:
                    raise SearchAborted("non-finite HN loss after halving the learning rate") from None
                lr_halved = True
                trainer.set_lr(trainer.settings.lr / 2)
                log.warning("non-finite HN loss; halving learning rate to %g", trainer.settings.lr)
                continue
            pool[hp] = None
        timings["hn_training"] += time.perf_counter() - t0
        if not pool:
            raise SearchAborted("candidate pool is empty")

        # (S2) HP update with the HN fixed
        t0 = time.perf_counter()
        evaluator.reset()
        candidates = list(pool)
        if cfg.pool_cap > 0:
            candidates = candidates[-cfg.pool_cap:]
        G = [validation_objective(c, sigma, evaluator, space, cfg.search_V, cfg.tau, rng) for c in candidates]
        lam = candidates[int(np.argmax(G))]
        for d in range(len(sigma)):
            vals = []
            for s in sigma_grid[d]:
                trial = list(sigma)
                trial[d] = s
                vals.append(validation_objective(lam, trial, evaluator, space, cfg.search_V, cfg.tau, rng))
            sigma[d] = float(sigma_grid[d][int(np.argmax(vals))])
        iter_best = float(evaluator.predict(list(pool)).max())
        timings["hp_update"] += time.perf_counter() - t0

        if iter_best > best_so_far + cfg.improve_tol:
            stall = 0
        else:
            stall += 1
        best_so_far = max(best_so_far, iter_best)
        trace.append({"iteration": it, "lambda_curr": lam.as_dict(), "sigma_curr": list(sigma),
                      "G_curr": float(max(G)), "iter_best": iter_best, "best_fval": best_so_far,
                      "stall": stall, "pool_size": len(pool)})
        log.info("iter %d: best %.4f stall %d pool %d", it, best_so_far, stall, len(pool))
        if stall >= cfg.patience:
            stopped_by = "patience"
            break

    t0 = time.perf_counter()
    selected, pred = final_select(pool, evaluator.predict, F)
    timings["final_select"] = time.perf_counter() - t0
    report = SearchReport(selected.as_dict(), pred, it, len(pool), stopped_by, trace, timings)
    return selected, report
