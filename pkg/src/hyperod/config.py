"""Run configuration (flat ``key=value`` text) and master-seed derivation.

Every random stream in the pipeline comes from :func:`make_rng`, which feeds
the master seed plus a tuple of labels (e.g. ``("hn", "synth03")``) through
``numpy.random.SeedSequence`` as its spawn key. Streams for different labels
are independent and do not depend on the order in which they are requested.
"""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field

import numpy as np

from .space import DEFAULT_GRID, HpGrid


def _label_key(label) -> int:
    return label if isinstance(label, int) else zlib.crc32(str(label).encode())


def derive_seed(master: int, *labels) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(_label_key(x) for x in labels))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        master, spawn_key=tuple(_label_key(x) for x in labels)))


def geometric(lo, hi, n=5):
    return [float(v) for v in np.geomspace(lo, hi, n)]


@dataclass
class RunConfig:
    seed: int = 0
    # model space
    grid_n_layers: list = field(default_factory=lambda: list(DEFAULT_GRID["n_layers"]))
    grid_compression: list = field(default_factory=lambda: list(DEFAULT_GRID["compression"]))
    grid_dropout: list = field(default_factory=lambda: list(DEFAULT_GRID["dropout"]))
    grid_weight_decay: list = field(default_factory=lambda: list(DEFAULT_GRID["weight_decay"]))
    # hypernetwork
    hn_hidden: int = 200
    hn_n_hidden: int = 2
    hn_activation: str = "relu"
    hn_dropout: float = 0.0
    hn_optimizer: str = "adam"
    hn_lr: float = 1e-4
    hn_momentum: float = 0.9
    hn_batch: int = 512
    hn_lambdas_per_step: int = 8
    hn_epochs: int = 400
    d_pe: int = 16
    # meta-learning
    hash_dim: int = 256
    h_epochs: int = 30
    g_epochs: int = 40
    g_lr: float = 3e-3
    g_max_scores: int = 1024
    fval_trees: int = 200
    fval_depth: int = 4
    fval_lr: float = 0.05
    # online search
    search_T: int = 100
    search_V: int = 500
    patience: int = 3
    tau: float = 0.05
    improve_tol: float = 1e-4
    max_iterations: int = 30
    pool_cap: int = 0
    online_pretrain_epochs: int = 400
    sigma_n_layers: list = field(default_factory=lambda: geometric(0.25, 2.0))
    sigma_compression: list = field(default_factory=lambda: geometric(0.05, 0.8))
    sigma_dropout: list = field(default_factory=lambda: geometric(0.02, 0.2))
    sigma_log_wd: list = field(default_factory=lambda: geometric(0.1, 1.0))
    # baselines
    scratch_epochs: int = 200

    def grid(self) -> HpGrid:
        return HpGrid(self.grid_n_layers, self.grid_compression, self.grid_dropout, self.grid_weight_decay)

    def sigma_grid(self) -> list:
        return [self.sigma_n_layers, self.sigma_compression, self.sigma_dropout, self.sigma_log_wd]

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        defaults = cls()
        kw = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if not hasattr(defaults, key):
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _parse_like(getattr(defaults, key), raw)
        return cls(**kw)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _parse_like(example, raw: str):
    if isinstance(example, list):
        if not raw:
            return []
        kind = type(example[0]) if example else float
        return [kind(float(x)) if kind is int else kind(x) for x in raw.split(",")]
    if isinstance(example, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(example, int):
        return int(raw)
    if isinstance(example, float):
        return float(raw)
    return raw
