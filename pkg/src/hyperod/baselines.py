"""Reference selectors that HYPER is compared against."""
from __future__ import annotations

import numpy as np

from .metrics import roc_rank
from .space import HpConfig, HpGrid, log_wd

# defaults of a widely used outlier-detection autoencoder
LIBRARY_DEFAULT = HpConfig(n_layers=4, compression=1.0, dropout=0.2, weight_decay=0.0)


def baseline_random(perf_row) -> tuple[float, float]:
    """Expected (AUROC, normalized rank) of a uniformly random grid pick."""
    perf_row = np.asarray(perf_row, dtype=float)
    return float(perf_row.mean()), float(roc_rank(perf_row).mean())


def baseline_default(grid: HpGrid, target: HpConfig = LIBRARY_DEFAULT) -> HpConfig:
    """Grid configuration nearest to ``target``, one dimension at a time."""
    def nearest(values, v, tf=lambda x: x):
        return min(values, key=lambda x: (abs(tf(x) - tf(v)), x))

    return HpConfig(nearest(grid.n_layers, target.n_layers),
                    nearest(grid.compression, target.compression),
                    nearest(grid.dropout, target.dropout),
                    nearest(grid.weight_decay, target.weight_decay, log_wd))


def baseline_global_best(store) -> HpConfig:
    return store.best_hp


def rank_of(hp: HpConfig, grid: HpGrid, perf_row) -> float:
    """Normalized rank of ``hp`` within a nominal-grid performance row."""
    return float(roc_rank(perf_row)[grid.configs().index(hp)])
