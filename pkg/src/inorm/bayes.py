"""Monte Carlo Bayesian inference over affine-dropout masks, NLL scoring and OOD detection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model import Model, forward
from .rng import Purpose, RngStream
from .train import PROB_FLOOR

DEFAULT_PASSES = 20
ROTATION_STEP_DEG = 7.0
ROTATION_STAGES = 12


@dataclass
class PredictiveDistribution:
    samples: np.ndarray  # (T, N, C)
    task: str

    @property
    def passes(self) -> int:
        return self.samples.shape[0]


def mc_predict(model: Model, x, T: int = DEFAULT_PASSES, rng: RngStream | int = 0) -> PredictiveDistribution:
    """``T`` stochastic forward passes; pass ``t`` draws its masks from run index ``t``.

    ``rng`` may be a bare seed, in which case the dropout-mask stream of
    that seed is used.
    """
    if T < 1:
        raise ValueError(f"number of passes must be >= 1, got {T}")
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng), Purpose.DROPOUT_MASK)
    if not model.is_stochastic:
        warnings.warn("model has no affine dropout (p > 0): all passes are identical", RuntimeWarning)
    x = np.asarray(x, dtype=np.float64)
    samples = np.stack([forward(model, x, rng.for_run(t))[0] for t in range(T)])
    task = "classification" if model.layers[-1].kind == "Softmax" else "regression"
    return PredictiveDistribution(samples, task)


def predictive_mean(dist: PredictiveDistribution) -> np.ndarray:
    mean = dist.samples.mean(axis=0)
    if dist.task == "classification":
        mean = mean / mean.sum(axis=1, keepdims=True)
    return mean


def predictive_variance(dist: PredictiveDistribution) -> np.ndarray:
    if dist.passes < 2:
        raise ValueError("predictive variance needs at least 2 passes")
    # shifting by the first pass keeps identical samples at exactly zero
    return (dist.samples - dist.samples[0]).var(axis=0, ddof=1)


def nll_score(mean_probs, labels) -> np.ndarray:
    """Per-sample ``-ln(max(p[label], 1e-12))``."""
    mean_probs = np.asarray(mean_probs, dtype=np.float64)
    labels = np.asarray(labels)
    C = mean_probs.shape[1]
    if labels.shape != (mean_probs.shape[0],) or np.any((labels < 0) | (labels >= C)) \
            or not np.all(np.equal(np.mod(labels, 1), 0)):
        raise ValueError(f"labels must be integers in [0, {C})")
    p = mean_probs[np.arange(len(labels)), labels.astype(np.int64)]
    return -np.log(np.maximum(p, PROB_FLOOR))


# ---------------------------------------------------------------------------
# corruptions

@dataclass(frozen=True)
class UniformNoise:
    """Additive U(-a, a) input noise with ``a = level * a_base``.

    For a given seed every level scales the same underlying draw.
    """

    level: int
    a_base: float = 0.25

    @property
    def label(self) -> str:
        return "uniform"

    @property
    def param(self) -> int:
        return self.level


@dataclass(frozen=True)
class Rotation:
    """Rotate 2-D inputs by ``7 * stage`` degrees about their centroid."""

    stage: int

    @property
    def label(self) -> str:
        return "rotation"

    @property
    def param(self) -> int:
        return self.stage


def corrupt(ds: Dataset, kind: UniformNoise | Rotation, seed: int = 0) -> Dataset:
    if isinstance(kind, UniformNoise):
        if kind.level < 0 or kind.a_base < 0:
            raise ValueError("noise level and a_base must be non-negative")
        if kind.level == 0:
            return replace(ds)
        # one U(-1, 1) draw per seed, scaled by the level: levels escalate the same noise
        u = RngStream(seed, Purpose.DATA_SHUFFLE, layer_index=10).generator().uniform(-1.0, 1.0, ds.inputs.shape)
        return replace(ds, inputs=ds.inputs + (kind.level * kind.a_base) * u)
    if isinstance(kind, Rotation):
        if ds.inputs.shape[1] != 2:
            raise ValueError(f"rotation needs exactly 2 input features, got {ds.inputs.shape[1]}")
        if kind.stage == 0:
            return replace(ds)
        theta = np.deg2rad(ROTATION_STEP_DEG * kind.stage)
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, -s], [s, c]])
        centroid = ds.inputs.mean(axis=0)
        return replace(ds, inputs=(ds.inputs - centroid) @ R.T + centroid)
    raise TypeError(f"unsupported corruption {kind!r}")


# ---------------------------------------------------------------------------
# OOD evaluation

@dataclass
class OodResult:
    threshold: float
    per_sample_nll: np.ndarray
    detection_rate: float


@dataclass
class OodReport:
    corruption: str
    param: int
    result: OodResult
    accuracy: float
    accuracy_std: float  # spread of single-pass accuracies across the T passes
    mean_nll: float


def detection_rate(nll: np.ndarray, threshold: float) -> float:
    # ties count as not detected
    return float(np.mean(np.asarray(nll) > threshold))


def _score(model, ds: Dataset, T: int, rng: RngStream):
    dist = mc_predict(model, ds.inputs, T, rng)
    mean = predictive_mean(dist)
    nll = nll_score(mean, ds.targets)
    acc = float(np.mean(mean.argmax(axis=1) == ds.targets))
    per_pass = (dist.samples.argmax(axis=2) == ds.targets[None, :]).mean(axis=1)
    return nll, acc, float(per_pass.std())


def ood_evaluate(model: Model, id_test: Dataset, ood_sets, T: int = DEFAULT_PASSES,
                 rng: RngStream | int = 0) -> tuple[OodReport, list[OodReport]]:
    """Score the ID test set and each shifted set under one mask stream.

    ``ood_sets`` is a list of ``(corruption_label, param, Dataset)``.  The
    threshold is the mean ID NLL; a sample is flagged when its NLL is
    strictly greater.  Returns the ID baseline report and one report per
    shifted set, in input order.
    """
    if len(id_test) == 0:
        raise ValueError("empty in-distribution test set")
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng), Purpose.DROPOUT_MASK)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        id_nll, id_acc, id_std = _score(model, id_test, T, rng)
        threshold = float(id_nll.mean())
        baseline = OodReport("none", 0, OodResult(threshold, id_nll, detection_rate(id_nll, threshold)),
                             id_acc, id_std, threshold)
        reports = []
        for label, param, ds in ood_sets:
            if ds is None or len(ds.inputs) == 0:
                raise ValueError(f"OOD set {label}:{param} is empty")
            if ds.inputs.shape[1] != id_test.inputs.shape[1]:
                raise ValueError(f"OOD set {label}:{param} has a different input width")
            nll, acc, std = _score(model, ds, T, rng)
            reports.append(OodReport(label, param, OodResult(threshold, nll, detection_rate(nll, threshold)),
                                     acc, std, float(nll.mean())))
    return baseline, reports
