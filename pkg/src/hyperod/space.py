"""Hyperparameter space: configurations, the search grid, padded architecture
vectors and the binary masks that carve a sub-network out of the maximal one."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

WD_FLOOR = 1e-8


class ConfigError(ValueError):
    pass


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def widths_from_hp(n_features: int, n_layers: int, compression: float, allowed_layers=None) -> list[int]:
    """Hourglass widths for an autoencoder with ``n_layers`` linear layers.

    Encoder widths shrink by ``compression`` per layer (rounded half away
    from zero, floored at 1); the decoder mirrors them and ends at the input
    width.

    >>> widths_from_hp(6, 2, 2.0)
    [3, 6]
    >>> widths_from_hp(5, 4, 2.0)
    [3, 2, 3, 5]
    """
    if allowed_layers is not None and n_layers not in allowed_layers:
        raise ConfigError(f"n_layers={n_layers} not in grid {list(allowed_layers)}")
    if n_layers < 2 or n_layers % 2:
        raise ConfigError(f"n_layers must be a positive even number, got {n_layers}")
    if compression < 1.0:
        raise ConfigError(f"compression rate must be >= 1.0, got {compression}")
    enc = []
    prev = n_features
    for _ in range(n_layers // 2):
        prev = max(1, round_half_away(prev / compression))
        enc.append(prev)
    return enc + enc[-2::-1] + [n_features]


def log_wd(weight_decay: float) -> float:
    return math.log10(weight_decay + WD_FLOOR)


@dataclass(frozen=True, order=True)
class HpConfig:
    n_layers: int
    compression: float
    dropout: float
    weight_decay: float

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 0.5:
            raise ConfigError(f"dropout must lie in [0, 0.5], got {self.dropout}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def widths(self, n_features: int) -> list[int]:
        return widths_from_hp(n_features, self.n_layers, self.compression)

    def lambda_arch(self, n_features: int, max_depth: int) -> list[int]:
        return pad_lambda_arch(self.widths(n_features), max_depth)

    def key(self, n_features: int) -> tuple:
        """Identity of the detector this config induces on ``n_features`` inputs."""
        return (tuple(self.widths(n_features)), self.dropout, self.weight_decay)

    def n_params(self, n_features: int) -> int:
        w = [n_features] + self.widths(n_features)
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def as_dict(self) -> dict:
        return {"n_layers": self.n_layers, "compression": self.compression,
                "dropout": self.dropout, "weight_decay": self.weight_decay}


def pad_lambda_arch(widths, max_depth: int) -> list[int]:
    """[W_1..W_{L//2}, 0 * (D-L), W_{L//2+1}..W_L]."""
    n = len(widths)
    if n > max_depth:
        raise ConfigError(f"{n} layers exceed max depth {max_depth}")
    half = n // 2
    return list(widths[:half]) + [0] * (max_depth - n) + list(widths[half:])


@dataclass
class ArchMask:
    mask: np.ndarray       # D x W x W, rows = output units, cols = input units
    bias_mask: np.ndarray  # D x W

    @property
    def active(self) -> np.ndarray:
        return self.bias_mask.any(axis=1)


def build_arch_mask(lambda_arch, max_depth: int, max_width: int, dtype=np.float64) -> ArchMask:
    lam = [int(v) for v in lambda_arch]
    if len(lam) != max_depth:
        raise ConfigError(f"lambda_arch has length {len(lam)}, expected {max_depth}")
    if any(v < 0 or v > max_width for v in lam):
        raise ConfigError(f"lambda_arch entries must lie in [0, {max_width}]: {lam}")
    if lam[0] == 0:
        raise ConfigError("lambda_arch[0] == 0: the first layer must exist")
    mask = np.zeros((max_depth, max_width, max_width), dtype=dtype)
    bias = np.zeros((max_depth, max_width), dtype=dtype)
    mask[0, : lam[0], :] = 1.0
    bias[0, : lam[0]] = 1.0
    last = lam[0]
    for layer in range(1, max_depth):
        if lam[layer] == 0:
            continue
        mask[layer, : lam[layer], :last] = 1.0
        bias[layer, : lam[layer]] = 1.0
        last = lam[layer]
    return ArchMask(mask, bias)


DEFAULT_GRID = {
    "n_layers": [2, 4, 6, 8],
    "compression": [1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2, 2.4, 2.6, 2.8, 3.0],
    "dropout": [0.0, 0.2, 0.4],
    "weight_decay": [0.0, 1e-6, 1e-5],
}


@dataclass
class HpGrid:
    n_layers: list = field(default_factory=lambda: list(DEFAULT_GRID["n_layers"]))
    compression: list = field(default_factory=lambda: list(DEFAULT_GRID["compression"]))
    dropout: list = field(default_factory=lambda: list(DEFAULT_GRID["dropout"]))
    weight_decay: list = field(default_factory=lambda: list(DEFAULT_GRID["weight_decay"]))

    def __post_init__(self):
        for name in ("n_layers", "compression", "dropout", "weight_decay"):
            values = sorted(getattr(self, name))
            if not values:
                raise ConfigError(f"grid dimension {name} is empty")
            setattr(self, name, values)
        self.n_layers = [int(v) for v in self.n_layers]

    @property
    def max_depth(self) -> int:
        return max(self.n_layers)

    def configs(self) -> list[HpConfig]:
        """Nominal grid in a fixed order (layers, compression, dropout, decay)."""
        return [HpConfig(L, c, d, w) for L in self.n_layers for c in self.compression
                for d in self.dropout for w in self.weight_decay]

    def canonical(self, n_features: int):
        """Deduplicate the nominal grid for a dataset with ``n_features`` inputs.

        Returns ``(unique_configs, column_map)`` where ``column_map[j]`` is the
        index into ``unique_configs`` of nominal config ``j``. The first
        nominal config with a given detector identity is the representative.
        """
        unique, index, cmap = [], {}, []
        for hp in self.configs():
            k = hp.key(n_features)
            if k not in index:
                index[k] = len(unique)
                unique.append(hp)
            cmap.append(index[k])
        return unique, np.asarray(cmap)

    def as_dict(self) -> dict:
        return {"n_layers": self.n_layers, "compression": self.compression,
                "dropout": self.dropout, "weight_decay": self.weight_decay}

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __len__(self):
        return len(self.n_layers) * len(self.compression) * len(self.dropout) * len(self.weight_decay)
