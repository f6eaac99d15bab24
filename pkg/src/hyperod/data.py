"""CSV ingestion and the synthetic outlier-detection testbed."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class Task:
    """A dataset; ``y`` is None for unlabeled data (1 = outlier)."""

    X: np.ndarray
    y: np.ndarray | None = None
    name: str = ""
    scaling: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def has_both_classes(self) -> bool:
        return self.y is not None and 0 < int(self.y.sum()) < len(self.y)


def minmax_scale(X: np.ndarray):
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span, {"min": lo.tolist(), "max": hi.tolist()}


def load_dataset(path, scale=True) -> Task:
    """Read a CSV with a header row; a final ``label`` column marks labeled data."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    if not body:
        raise DatasetError(f"{path}: no data rows")
    width = len(header)
    values = np.empty((len(body), width))
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise DatasetError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            values[lineno - 2] = [float(c) for c in row]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric field") from None
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0, 0]) + 2
        raise DatasetError(f"{path}:{bad}: non-finite value")
    y = None
    if header[-1].lower() == "label":
        y = values[:, -1]
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise DatasetError(f"{path}: label column must be 0/1")
        y = y.astype(int)
        values = values[:, :-1]
        if y.min() == y.max():
            log.warning("%s: label column has a single class", path)
    if values.shape[1] == 0:
        raise DatasetError(f"{path}: no feature columns")
    scaling = {}
    if scale:
        values, scaling = minmax_scale(values)
    name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return Task(values, y, name, scaling)


def save_dataset(path, task: Task):
    F = task.n_features
    header = [f"x{i}" for i in range(F)] + (["label"] if task.labeled else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(task.X):
            vals = [repr(float(v)) for v in row]
            if task.labeled:
                vals.append(str(int(task.y[i])))
            w.writerow(vals)


def synth_task(rng: np.random.Generator, n_samples: int, n_features: int, rank: int,
               noise: float, contamination: float = 0.1, name="") -> Task:
    """Inliers near a random rank-``rank`` linear manifold, plus outliers that
    are either uniform over the data box or pushed off the manifold."""
    n_out = int(round(contamination * n_samples))
    n_in = n_samples - n_out
    basis = rng.normal(size=(rank, n_features))
    center = rng.normal(scale=0.5, size=n_features)
    inliers = rng.normal(size=(n_in, rank)) @ basis + center
    inliers += noise * rng.normal(size=inliers.shape)

    n_uniform = int(rng.binomial(n_out, rng.uniform(0.2, 0.8)))
    lo, hi = inliers.min(axis=0), inliers.max(axis=0)
    uniform = rng.uniform(lo, hi, size=(n_uniform, n_features))
    # off-manifold: project a random direction out of the row space of basis
    q, _ = np.linalg.qr(basis.T)
    shifted = rng.normal(size=(n_out - n_uniform, rank)) @ basis + center
    direction = rng.normal(size=(n_out - n_uniform, n_features))
    direction -= direction @ q @ q.T
    direction /= np.linalg.norm(direction, axis=1, keepdims=True) + 1e-12
    spread = np.sqrt(rank) * rng.uniform(0.3, 1.0)
    shifted += direction * spread * rng.uniform(1.0, 2.0, size=(n_out - n_uniform, 1))

    X = np.vstack([inliers, uniform, shifted])
    y = np.r_[np.zeros(n_in, int), np.ones(n_out, int)]
    perm = rng.permutation(n_samples)
    X, y = X[perm], y[perm]
    X, scaling = minmax_scale(X)
    return Task(X, y, name, scaling)


def synth_testbed(n_tasks: int, n_samples=400, dim_range=(8, 20), contamination=0.1,
                  seed=0, prefix="synth") -> list[Task]:
    """Tasks that differ in dimension, intrinsic rank and noise level."""
    if not 0 < contamination < 0.5:
        raise ValueError("contamination must lie in (0, 0.5)")
    tasks = []
    for i in range(n_tasks):
        rng = np.random.default_rng([seed, i])
        F = int(rng.integers(dim_range[0], dim_range[1] + 1))
        rank = int(rng.integers(1, max(2, F // 2) + 1))
        noise = float(rng.uniform(0.05, 0.4))
        tasks.append(synth_task(rng, n_samples, F, rank, noise, contamination, f"{prefix}{i:02d}"))
    return tasks
