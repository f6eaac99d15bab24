"""Hypernetwork-based model selection for autoencoder outlier detectors."""
from .config import RunConfig, make_rng
from .data import Task, load_dataset, save_dataset, synth_testbed
from .meta import MetaStore, meta_train
from .metrics import auroc, roc_rank, wilcoxon_signed_rank
from .pipeline import evaluate, run_benchmark
from .search import gaussian_entropy, hyper_select
from .space import HpConfig, HpGrid

__all__ = [
    "HpConfig", "HpGrid", "MetaStore", "RunConfig", "Task", "auroc", "evaluate", "gaussian_entropy",
    "hyper_select", "load_dataset", "make_rng", "meta_train", "roc_rank", "run_benchmark", "save_dataset",
    "synth_testbed", "wilcoxon_signed_rank",
]
__version__ = "0.1.0"
