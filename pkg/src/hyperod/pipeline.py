"""Meta-train / select / evaluate orchestration shared by the CLI and the benchmark."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .autoencoder import train_from_scratch
from .baselines import baseline_default, baseline_global_best, baseline_random, rank_of
from .config import RunConfig, make_rng
from .data import Task
from .meta import MetaStore, data_embedding, meta_train, score_task
from .metrics import auroc, wilcoxon_signed_rank
from .search import hyper_select

log = logging.getLogger(__name__)

METHODS = ("random", "default", "global_best", "hyper")


@dataclass
class BaselineResult:
    method: str
    auroc: dict = field(default_factory=dict)         # dataset -> AUROC from the HN performance row
    rank: dict = field(default_factory=dict)          # dataset -> normalized rank over the grid
    scratch_auroc: dict = field(default_factory=dict)  # dataset -> AUROC of a from-scratch detector
    selected: dict = field(default_factory=dict)       # dataset -> chosen configuration


@dataclass
class Benchmark:
    results: dict
    reports: dict
    datasets: list
    timings: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # evaluation-HN scores per dataset (not serialized)

    def mean_rank(self, method: str) -> float:
        return float(np.mean([self.results[method].rank[d] for d in self.datasets]))

    def count(self, method: str, other: str, ties=False) -> int:
        a = self.results[method].rank
        b = self.results[other].rank
        if ties:
            return sum(a[d] <= b[d] for d in self.datasets)
        return sum(a[d] < b[d] for d in self.datasets)

    def wilcoxon(self, method: str, other: str) -> float:
        a = [self.results[method].rank[d] for d in self.datasets]
        b = [self.results[other].rank[d] for d in self.datasets]
        return wilcoxon_signed_rank(a, b)

    def summary(self) -> dict:
        out = {"mean_rank": {m: self.mean_rank(m) for m in METHODS}}
        out["hyper_beats"] = {m: self.count("hyper", m) for m in METHODS if m != "hyper"}
        out["hyper_beats_or_ties"] = {m: self.count("hyper", m, ties=True) for m in METHODS if m != "hyper"}
        out["wilcoxon_p"] = {m: self.wilcoxon("hyper", m) for m in METHODS if m != "hyper"}
        return out

    def to_text(self) -> str:
        """Deterministic JSON record; wall-clock timings are kept out."""
        body = {"datasets": self.datasets, "summary": self.summary(),
                "results": {m: asdict(r) for m, r in self.results.items()},
                "reports": {d: json.loads(r.to_text()) for d, r in self.reports.items()}}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        lines = ["dataset\t" + "\t".join(METHODS)]
        for d in self.datasets:
            lines.append(d + "\t" + "\t".join(f"{self.results[m].rank[d]:.4f}" for m in METHODS))
        lines.append("mean\t" + "\t".join(f"{self.mean_rank(m):.4f}" for m in METHODS))
        return "\n".join(lines) + "\n"


def true_performance(task: Task, store: MetaStore, cfg: RunConfig):
    """Scores and AUROC of every grid configuration from a dedicated evaluation HN."""
    return score_task(task, store.grid, cfg, make_rng(cfg.seed, "eval-hn", task.name))


def proxy_quality(store: MetaStore, tasks, tables) -> dict:
    """Per-dataset Spearman correlation between f_val predictions and true AUROC."""
    out = {}
    for task in tasks:
        tb = tables[task.name]
        d_emb = data_embedding(task.X, store.h)
        m_emb = store.g.embed(tb.scores)
        feats = np.array([store.features_for(hp, tb.n_features, d_emb, m_emb[j]) for j, hp in enumerate(tb.configs)])
        out[task.name] = float(spearmanr(store.fval.predict(feats), tb.perf)[0])
    return out


def scratch_auroc(task: Task, hp, cfg: RunConfig) -> float:
    rng = make_rng(cfg.seed, "scratch", task.name, json.dumps(hp.as_dict(), sort_keys=True))
    model = train_from_scratch(task.X, hp, rng, epochs=cfg.scratch_epochs)
    return auroc(model.scores(task.X), task.y)


def evaluate(tasks, store: MetaStore, cfg: RunConfig, scratch: bool = True) -> Benchmark:
    """Run HYPER and the baselines on labeled ``tasks`` (labels are hidden from selection)."""
    grid = store.grid
    results = {m: BaselineResult(m) for m in METHODS}
    reports, timings, tables = {}, {}, {}
    default_hp = baseline_default(grid)
    gb_hp = baseline_global_best(store)
    for task in tasks:
        if not task.has_both_classes():
            raise ValueError(f"task {task.name} needs both classes for evaluation")
        t0 = time.perf_counter()
        hp, report = hyper_select(task.X, store, cfg, make_rng(cfg.seed, "select", task.name))
        t_select = time.perf_counter() - t0
        reports[task.name] = report
        tables[task.name] = true_performance(task, store, cfg)
        perf = tables[task.name].nominal_perf()
        chosen = {"default": default_hp, "global_best": gb_hp, "hyper": hp}
        exp_auroc, exp_rank = baseline_random(perf)
        results["random"].auroc[task.name] = exp_auroc
        results["random"].rank[task.name] = exp_rank
        for m, c in chosen.items():
            j = grid.configs().index(c)
            results[m].auroc[task.name] = float(perf[j])
            results[m].rank[task.name] = rank_of(c, grid, perf)
            results[m].selected[task.name] = c.as_dict()
            if scratch:
                results[m].scratch_auroc[task.name] = scratch_auroc(task, c, cfg)
        timings[task.name] = {"select": t_select, "total": time.perf_counter() - t0, **report.timings}
        log.info("%s: hyper rank %.3f default %.3f", task.name, results["hyper"].rank[task.name],
                 results["default"].rank[task.name])
    return Benchmark(results, reports, [t.name for t in tasks], timings, tables)


def run_benchmark(train_tasks, test_tasks, cfg: RunConfig, scratch: bool = True):
    """Meta-train on ``train_tasks`` then evaluate on ``test_tasks``; returns ``(store, benchmark)``."""
    t0 = time.perf_counter()
    store = meta_train(train_tasks, cfg).store
    t_meta = time.perf_counter() - t0
    bench = evaluate(test_tasks, store, cfg, scratch=scratch)
    bench.timings["meta_train"] = t_meta
    bench.timings["total"] = time.perf_counter() - t0
    return store, bench
