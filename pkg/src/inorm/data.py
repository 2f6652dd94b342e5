"""Synthetic desk-scale datasets and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .rng import Purpose, RngStream

Task = Literal["classification", "regression"]


@dataclass
class Dataset:
    """Inputs ``(N, D)`` plus integer labels ``(N,)`` or regression targets ``(N, K)``.

    ``feature_stats`` holds the ``(mean, std)`` used to standardize the
    inputs, if any.
    """

    inputs: np.ndarray
    targets: np.ndarray
    task: Task
    feature_stats: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be 2-D")
        if self.task == "classification":
            self.targets = np.asarray(self.targets, dtype=np.int64)
        elif self.task == "regression":
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.ndim == 1:
                self.targets = self.targets[:, None]
        else:
            raise ValueError(f"unknown task {self.task!r}")
        if len(self.inputs) < 1:
            raise ValueError("dataset is empty")
        if len(self.targets) != len(self.inputs):
            raise ValueError("inputs and targets differ in length")
        if not np.all(np.isfinite(self.inputs)) or not np.all(np.isfinite(self.targets)):
            raise ValueError("dataset contains non-finite values")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> Dataset:
        return replace(self, inputs=self.inputs[idx], targets=self.targets[idx])


def two_moons(n: int, noise_std: float = 0.15, seed: int = 0) -> Dataset:
    """Two interleaved half circles, ``n // 2`` points each, shuffled."""
    if n < 2:
        raise ValueError("two_moons needs n >= 2")
    if n % 2:
        raise ValueError("two_moons needs an even n for balanced classes")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    gen = RngStream(seed, Purpose.DATA_SHUFFLE, layer_index=1).generator()
    half = n // 2
    t_outer = gen.uniform(0.0, np.pi, half)
    t_inner = gen.uniform(0.0, np.pi, half)
    outer = np.column_stack([np.cos(t_outer), np.sin(t_outer)])
    inner = np.column_stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)])
    X = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    if noise_std > 0:
        X = X + gen.normal(0.0, noise_std, X.shape)
    order = gen.permutation(n)
    return Dataset(X[order], y[order], "classification")


def sine_trend_values(n: int, period: float = 25.0, trend_slope: float = 0.0,
                      noise_std: float = 0.0, seed: int = 0) -> np.ndarray:
    """``sin(2*pi*t/period) + trend_slope*t + noise`` for ``t = 0..n-1``."""
    t = np.arange(n, dtype=np.float64)
    s = np.sin(2.0 * np.pi * t / period) + trend_slope * t
    if noise_std > 0:
        s = s + RngStream(seed, Purpose.DATA_SHUFFLE, layer_index=2).generator().normal(0.0, noise_std, n)
    return s


def window_series(series: np.ndarray, window: int) -> Dataset:
    """Sliding windows of length ``window`` predicting the following value."""
    series = np.asarray(series, dtype=np.float64)
    n = len(series)
    if window < 1 or window >= n:
        raise ValueError(f"window {window} must satisfy 1 <= window < n={n}")
    X = np.lib.stride_tricks.sliding_window_view(series, window)[: n - window].copy()
    return Dataset(X, series[window:], "regression")


def sine_trend_series(n: int, period: float = 25.0, trend_slope: float = 0.0, noise_std: float = 0.0,
                      seed: int = 0, window: int = 8) -> Dataset:
    return window_series(sine_trend_values(n, period, trend_slope, noise_std, seed), window)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(len(ds) * test_fraction))
    if n_test < 1 or n_test >= len(ds):
        raise ValueError("split leaves an empty partition")
    order = RngStream(seed, Purpose.DATA_SHUFFLE, layer_index=3).generator().permutation(len(ds))
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def chronological_split(ds: Dataset, test_fraction: float) -> tuple[Dataset, Dataset]:
    """Time-ordered split: the last ``test_fraction`` of windows is held out."""
    n_test = int(round(len(ds) * test_fraction))
    if n_test < 1 or n_test >= len(ds):
        raise ValueError("split leaves an empty partition")
    cut = len(ds) - n_test
    return ds.subset(slice(0, cut)), ds.subset(slice(cut, None))


def normalize_features(ds: Dataset, stats: tuple[np.ndarray, np.ndarray] | None = None) -> Dataset:
    """Standardize inputs.

    Without ``stats`` the dataset is treated as the training split and its
    own per-feature mean/std are used (and recorded).  Pass the training
    split's ``feature_stats`` to transform a test split consistently.
    """
    if stats is None:
        mean = ds.inputs.mean(axis=0)
        std = ds.inputs.std(axis=0)
        if np.any(std == 0):
            bad = np.flatnonzero(std == 0).tolist()
            raise ValueError(f"zero-variance feature(s) {bad}: cannot standardize")
        stats = (mean, std)
    mean, std = stats
    return replace(ds, inputs=(ds.inputs - mean) / std, feature_stats=(mean, std))


# ---------------------------------------------------------------------------
# CSV

@dataclass(frozen=True)
class CsvSchema:
    features: tuple[str, ...]
    targets: tuple[str, ...]
    task: Task

    @classmethod
    def for_dataset(cls, ds: Dataset) -> CsvSchema:
        feats = tuple(f"x{i}" for i in range(ds.inputs.shape[1]))
        if ds.task == "classification":
            return cls(feats, ("label",), "classification")
        return cls(feats, tuple(f"y{i}" for i in range(ds.targets.shape[1])), "regression")


def save_csv(ds: Dataset, path, schema: CsvSchema | None = None) -> None:
    # 17 significant digits so that load(save(d)) reproduces d exactly
    schema = schema or CsvSchema.for_dataset(ds)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.features + schema.targets)
        for x, t in zip(ds.inputs, ds.targets):
            tv = [str(int(t))] if ds.task == "classification" else [format(v, ".17g") for v in t]
            w.writerow([format(v, ".17g") for v in x] + tv)


def load_csv(path, schema: CsvSchema) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    header = tuple(c.strip() for c in rows[0])
    expected = schema.features + schema.targets
    if header != expected:
        raise ValueError(f"{path}: header {list(header)} does not match schema {list(expected)}")
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    nf = len(schema.features)
    X, T = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected):
            raise ValueError(f"{path}:{lineno}: expected {len(expected)} cells, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if schema.task == "classification" and not float(vals[nf]).is_integer():
            raise ValueError(f"{path}:{lineno}: class label must be an integer")
        X.append(vals[:nf])
        T.append(vals[nf:])
    T = np.asarray(T)
    targets = T[:, 0].astype(np.int64) if schema.task == "classification" else T
    return Dataset(np.asarray(X), targets, schema.task)
