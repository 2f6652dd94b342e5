"""Losses, momentum SGD with L2 weight decay, and the training loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import Model, backward, forward
from .rng import Purpose, RngStream

PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    decay_affine: bool = False  # apply weight decay to normalization gamma/beta too

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def loss_eval(kind: str, prediction, target) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. ``prediction``.

    ``cross_entropy`` expects probability rows (post-Softmax) and integer
    labels; ``mse`` expects equal-shape arrays.
    """
    pred = np.asarray(prediction, dtype=np.float64)
    if kind == "cross_entropy":
        labels = np.asarray(target)
        if pred.ndim != 2 or labels.shape != (pred.shape[0],):
            raise ValueError(f"cross_entropy needs (N, C) probabilities and (N,) labels, got {pred.shape}, {labels.shape}")
        if np.any(np.abs(pred.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("prediction rows must be probability vectors summing to 1")
        n = pred.shape[0]
        rows = np.arange(n)
        p_true = np.maximum(pred[rows, labels], PROB_FLOOR)
        grad = np.zeros_like(pred)
        grad[rows, labels] = -1.0 / (n * p_true)
        return float(np.mean(-np.log(p_true))), grad
    if kind == "mse":
        tgt = np.asarray(target, dtype=np.float64)
        if tgt.shape != pred.shape:
            raise ValueError(f"mse shape mismatch: {pred.shape} vs {tgt.shape}")
        diff = pred - tgt
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size
    raise ValueError(f"unknown loss kind {kind!r}")


def sgd_step(params: dict, grads: dict, config: TrainConfig, velocity: dict, no_decay=frozenset()) -> dict:
    """In-place momentum SGD: ``v = m*v + g + wd*w``; ``w -= lr*v``.

    Keys listed in ``no_decay`` skip the weight-decay term.  Missing
    ``velocity`` entries start at zero.
    """
    for key, w in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {key}")
        decay = 0.0 if key in no_decay else config.weight_decay
        v = velocity.get(key)
        if v is None:
            v = velocity[key] = np.zeros_like(w)
        v *= config.momentum
        v += g
        if decay:
            v += decay * w
        w -= config.learning_rate * v
    return params


def loss_kind(task: str) -> str:
    return "cross_entropy" if task == "classification" else "mse"


def metric_value(task: str, prediction: np.ndarray, targets: np.ndarray) -> float:
    """Accuracy for classification, RMSE for regression."""
    if task == "classification":
        return float(np.mean(np.argmax(prediction, axis=1) == targets))
    return float(np.sqrt(np.mean((prediction - targets) ** 2)))


def train(model: Model, dataset: Dataset, config: TrainConfig) -> tuple[Model, list[dict]]:
    """Train a copy of ``model``; the argument is left untouched.

    Every minibatch forward pass samples fresh dropout masks from stream
    ``(config.seed, DROPOUT_MASK, layer, step)``; epoch shuffles come from
    ``(config.seed, DATA_SHUFFLE, 0, epoch)``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = model.copy()
    model.mode = "train"
    params = model.named_params()
    no_decay = frozenset() if config.decay_affine else frozenset(model.no_decay_keys())
    velocity: dict = {}
    kind = loss_kind(dataset.task)
    history = []
    step = 0
    n = len(dataset)
    for epoch in range(config.epochs):
        order = RngStream(config.seed, Purpose.DATA_SHUFFLE, 0, epoch).generator().permutation(n)
        total_loss = 0.0
        preds = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = dataset.inputs[idx], dataset.targets[idx]
            try:
                out, caches = forward(model, xb, RngStream(config.seed, Purpose.DROPOUT_MASK, 0, step))
                loss, dout = loss_eval(kind, out, yb)
                if not np.isfinite(loss):
                    raise FloatingPointError("loss is not finite")
                grads, _ = backward(model, caches, dout)
                flat = {(i, k): g for i, gd in enumerate(grads) for k, g in gd.items()}
                sgd_step(params, flat, config, velocity, no_decay)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
            total_loss += loss * len(idx)
            preds.append((idx, out))
            step += 1
        pred = np.empty((n, model.n_out))
        for idx, out in preds:
            pred[idx] = out
        history.append({
            "epoch": epoch,
            "loss": total_loss / n,
            "metric": metric_value(dataset.task, pred, dataset.targets),
        })
    model.mode = "eval"
    return model, history
