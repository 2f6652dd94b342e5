"""Non-volatile-memory fault models and the Monte Carlo robustness harness.

A fault run models one programmed chip: weight faults are sampled once
per run and stay frozen for the whole evaluation, while affine-dropout
masks keep resampling on every Bayesian forward pass.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .bayes import DEFAULT_PASSES, mc_predict, predictive_mean
from .data import Dataset
from .layers import BinaryDense, Dense
from .model import Model, forward
from .quantize import BitTensor, bits_to_code, code_bits, dequantize, quantize
from .rng import Purpose, RngStream, derive_seed
from .train import metric_value

FaultKind = Literal["additive", "multiplicative", "bitflip", "uniform"]
Site = Literal["weights", "presign", "inputs"]

CURVE_HEADER = ("fault_kind", "site", "level", "runs", "metric", "mean", "std")


class IncompatibleFault(ValueError):
    pass


@dataclass(frozen=True)
class FaultModel:
    """One non-ideality at one injection site.

    ``level`` is the Gaussian sigma, the per-bit flip rate, or the uniform
    noise amplitude depending on ``kind``.
    """

    kind: FaultKind
    level: float
    site: Site = "weights"

    def __post_init__(self):
        if self.kind not in ("additive", "multiplicative", "bitflip", "uniform"):
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.site not in ("weights", "presign", "inputs"):
            raise ValueError(f"unknown fault site {self.site!r}")
        if self.level < 0:
            raise ValueError("fault level must be non-negative")
        if self.kind == "bitflip" and self.level > 1:
            raise ValueError("bit-flip rate must lie in [0, 1]")


def flip_bits(t: BitTensor, rate: float, rng: RngStream | np.random.Generator) -> BitTensor:
    """Flip every stored bit independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("flip rate must lie in [0, 1]")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    flips = gen.random(t.codes.shape + (t.bits,)) < rate
    xor = (flips.astype(np.int64) << np.arange(t.bits, dtype=np.int64)).sum(axis=-1)
    pattern = np.asarray(code_bits(t.codes, t.bits)) ^ xor
    return BitTensor(np.asarray(bits_to_code(pattern, t.bits)).reshape(t.codes.shape), t.bits, t.scale)


def _additive_noise(kind: str, level: float, gen: np.random.Generator, x: np.ndarray) -> np.ndarray:
    if kind == "additive":
        return level * gen.standard_normal(x.shape)
    if kind == "multiplicative":
        return x * (level * gen.standard_normal(x.shape))
    if kind == "uniform":
        return gen.uniform(-level, level, x.shape)
    raise IncompatibleFault(f"{kind} faults cannot be injected into activations")


def _check_site(model: Model, fault: FaultModel) -> list[int]:
    weighted = [i for i, l in enumerate(model.layers) if isinstance(l, Dense)]
    if fault.site == "weights":
        if fault.kind == "bitflip":
            plain = [i for i in weighted if not isinstance(model.layers[i], BinaryDense)
                     and model.layers[i].bits is None]
            if plain:
                raise IncompatibleFault(f"bit-flips need quantized or binary weights; layers {plain} are full precision")
        return weighted
    if fault.kind == "bitflip":
        raise IncompatibleFault(f"bit-flips only apply to stored weights, not site {fault.site!r}")
    if fault.site == "presign":
        targets = [i for i in weighted if isinstance(model.layers[i], BinaryDense) and model.layers[i].sign_inputs]
        if not targets:
            raise IncompatibleFault("presign site needs a binary layer that binarizes its inputs")
        return targets
    return []


def perturb(model: Model, fault: FaultModel, rng: RngStream) -> Model:
    """Return a faulty copy of ``model``; the original is never touched.

    Layer ``i`` draws from ``rng.for_layer(i)``.  Activation-site faults
    install hooks that keep drawing from their own stream on every forward
    pass of the copy.
    """
    targets = _check_site(model, fault)
    faulty = model.copy()
    if fault.level == 0:
        return faulty
    if fault.site == "inputs":
        gen = rng.for_layer(0).generator()
        faulty.input_noise = lambda x: _additive_noise(fault.kind, fault.level, gen, x)
        return faulty
    for i in targets:
        layer = faulty.layers[i]
        gen = rng.for_layer(i).generator()
        if fault.site == "presign":
            layer.input_noise = (lambda g: lambda x: _additive_noise(fault.kind, fault.level, g, x))(gen)
            continue
        W = layer.effective_weight()
        if fault.kind == "bitflip":
            bits = 1 if isinstance(layer, BinaryDense) else layer.bits
            W_new = dequantize(flip_bits(quantize(W, bits), fault.level, gen))
        else:
            W_new = W + _additive_noise(fault.kind, fault.level, gen, W)
        layer.weight_override = W_new
    return faulty


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass(frozen=True)
class McConfig:
    runs: int = 100
    seed: int = 0
    metric: Literal["accuracy", "rmse"] = "accuracy"
    passes: int = DEFAULT_PASSES  # Bayesian forward passes per evaluation
    threads: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.metric not in ("accuracy", "rmse"):
            raise ValueError(f"unsupported metric {self.metric!r}")
        if self.passes < 1 or self.threads < 1:
            raise ValueError("passes and threads must be >= 1")


@dataclass(frozen=True)
class RobustnessPoint:
    level: float
    mean: float
    std: float
    runs: int


@dataclass
class RobustnessCurve:
    fault_kind: str
    site: str
    metric: str
    seed: int
    points: list[RobustnessPoint] = field(default_factory=list)
    model_id: str = ""


def evaluate(model: Model, dataset: Dataset, metric: str, passes: int, seed: int) -> float:
    """Metric of the Bayesian mean prediction (single pass for deterministic models)."""
    if model.is_stochastic:
        pred = predictive_mean(mc_predict(model, dataset.inputs, passes, RngStream(seed, Purpose.DROPOUT_MASK)))
    else:
        pred = forward(model, dataset.inputs)[0]
    task = "classification" if metric == "accuracy" else "regression"
    return metric_value(task, pred, dataset.targets)


def _one_run(model, dataset, fault, mc, run_index):
    faulty = perturb(model, fault, RngStream(mc.seed, Purpose.FAULT_INJECTION, 0, run_index))
    return evaluate(faulty, dataset, mc.metric, mc.passes, derive_seed(mc.seed, run_index))


def run_monte_carlo(model: Model, dataset: Dataset, fault: FaultModel, mc: McConfig) -> RobustnessPoint:
    """Mean and sample std (ddof=1) of the metric over ``mc.runs`` faulty copies.

    Results are gathered in run order, so any thread count gives the same numbers.
    """
    if dataset is None or len(dataset) == 0:
        raise ValueError("metric undefined on an empty dataset")
    _check_site(model, fault)
    if mc.threads > 1 and mc.runs > 1:
        with ThreadPoolExecutor(max_workers=mc.threads) as pool:
            values = list(pool.map(lambda r: _one_run(model, dataset, fault, mc, r), range(mc.runs)))
    else:
        values = [_one_run(model, dataset, fault, mc, r) for r in range(mc.runs)]
    values = np.asarray(values)
    if mc.runs == 1:
        warnings.warn("a single Monte Carlo run has no spread; reporting std = 0", RuntimeWarning)
        std = 0.0
    else:
        std = float(values.std(ddof=1))
    return RobustnessPoint(fault.level, float(values.mean()), std, mc.runs)


def sweep(model: Model, dataset: Dataset, kind: FaultKind, levels, mc: McConfig,
          site: Site = "weights", model_id: str = "") -> RobustnessCurve:
    """One Monte Carlo point per level; each level's streams derive from ``(seed, level)``."""
    levels = [float(v) for v in levels]
    if not levels:
        raise ValueError("no fault levels given")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"fault levels must be strictly increasing: {levels}")
    curve = RobustnessCurve(kind, site, mc.metric, mc.seed, model_id=model_id)
    for level in levels:
        level_mc = replace(mc, seed=derive_seed(mc.seed, level))
        curve.points.append(run_monte_carlo(model, dataset, FaultModel(kind, level, site), level_mc))
    return curve


def write_curve_csv(curve: RobustnessCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for pt in curve.points:
            w.writerow([curve.fault_kind, curve.site, format(pt.level, ".9g"), pt.runs, curve.metric,
                        format(pt.mean, ".9g"), format(pt.std, ".9g")])
