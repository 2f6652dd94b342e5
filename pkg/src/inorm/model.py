"""Sequential model container, forward/backward drivers and JSON checkpoints."""

from __future__ import annotations

import copy
import json
from typing import Literal

import numpy as np

from . import invnorm
from .invnorm import InvertedNormParams, NormalInit, UniformInit
from .layers import (
    LAYER_KINDS,
    BinaryDense,
    Dense,
    ForwardContext,
    InvertedNorm,
    Layer,
    Norm,
    ReLU,
    Softmax,
)
from .rng import Purpose, RngStream

FORMAT_VERSION = 1

Mode = Literal["train", "eval"]


class Model:
    def __init__(self, layers: list[Layer], mode: Mode = "eval"):
        self.layers = list(layers)
        self.mode = mode
        # installed by fault injection: returns additive noise for the raw inputs
        self.input_noise = None
        self._validate()

    def _validate(self):
        if not self.layers:
            raise ValueError("model has no layers")
        width = None
        for i, layer in enumerate(self.layers):
            if layer.n_in is not None:
                if width is not None and layer.n_in != width:
                    raise ValueError(f"layer {i} ({layer.kind}) expects width {layer.n_in}, got {width}")
                width = layer.n_out
            if isinstance(layer, InvertedNorm):
                prev = self.layers[i - 1] if i > 0 else None
                if not isinstance(prev, Dense):
                    raise ValueError(f"layer {i}: InvertedNorm must directly follow a Dense/BinaryDense layer")

    @property
    def n_in(self) -> int:
        return next(l.n_in for l in self.layers if l.n_in is not None)

    @property
    def n_out(self) -> int:
        return [l.n_out for l in self.layers if l.n_out is not None][-1]

    @property
    def is_stochastic(self) -> bool:
        return any(isinstance(l, InvertedNorm) and l.norm.p > 0 for l in self.layers)

    def named_params(self) -> dict[tuple[int, str], np.ndarray]:
        return {(i, k): v for i, l in enumerate(self.layers) for k, v in l.params.items()}

    def no_decay_keys(self) -> set[tuple[int, str]]:
        return {(i, k) for i, l in enumerate(self.layers) for k in l.no_decay}

    def copy(self) -> Model:
        return copy.deepcopy(self)

    def __repr__(self):
        return f"Model([{', '.join(map(repr, self.layers))}], mode={self.mode!r})"


def forward(model: Model, x, rng: RngStream | None = None):
    """Run the model; returns ``(output, caches)``.

    ``rng`` drives the affine dropout masks (one sub-stream per layer index).
    Train mode requires it; in eval mode ``rng=None`` gives the
    deterministic keep-everything pass and consumes no randomness.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if model.mode == "train" and rng is None:
        raise ValueError("train-mode forward requires an RNG stream for dropout masks")
    if model.input_noise is not None:
        x = x + model.input_noise(x)
    caches = []
    for i, layer in enumerate(model.layers):
        if layer.n_in is not None and x.shape[1] != layer.n_in:
            raise ValueError(f"layer {i} ({layer.kind}): expected {layer.n_in} features, got {x.shape[1]}")
        x, cache = layer.forward(x, ForwardContext(i, rng))
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite values produced by layer {i} ({layer.kind})")
        caches.append((id(layer), cache))
    return x, caches


def backward(model: Model, caches, output_grad):
    """Backpropagate ``output_grad``; returns ``(grads, input_grad)``.

    ``grads`` is a list (one dict per layer) of parameter gradients.
    """
    if len(caches) != len(model.layers):
        raise ValueError("cache does not belong to this model (layer count differs)")
    dy = np.asarray(output_grad, dtype=np.float64)
    grads: list[dict] = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        layer_id, cache = caches[i]
        if layer_id != id(layer):
            raise ValueError(f"cache entry {i} was produced by a different layer")
        dy, grads[i] = layer.backward(cache, dy)
    return grads, dy


def build_mlp(
    sizes: list[int],
    *,
    seed: int,
    task: str = "classification",
    norm: str = "inverted",
    binary: bool = False,
    bits: int | None = None,
    p: float = 0.3,
    init: NormalInit | UniformInit = NormalInit(),
    groups: int = 1,
    mask_mode: str = "vector",
    eps: float = 1e-5,
    sign_inputs: bool = False,
) -> Model:
    """Stack ``weights -> norm -> ReLU`` blocks, then a final weight layer.

    ``norm`` is ``"inverted"``, ``"conventional"`` or ``"none"``.  Classification
    models end in Softmax.  ``sign_inputs`` binarizes the inputs of every
    binary layer after the first; that sign then replaces the ReLU.
    """
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if norm not in ("inverted", "conventional", "none"):
        raise ValueError(f"unknown norm {norm!r}")
    layers: list[Layer] = []
    n_weight = len(sizes) - 1
    for j, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        idx = len(layers)
        gen = RngStream(seed, Purpose.INIT, idx).generator()
        W = gen.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        if binary:
            layers.append(BinaryDense(n_in, n_out, sign_inputs=sign_inputs and j > 0, W=np.clip(W, -1, 1)))
        else:
            layers.append(Dense(n_in, n_out, bits=bits, W=W))
        if j == n_weight - 1:
            break
        if norm == "inverted":
            idx = len(layers)
            gamma, beta = invnorm.init_affine(n_out, init, RngStream(seed, Purpose.INIT, idx))
            layers.append(InvertedNorm(InvertedNormParams(gamma, beta, eps, p, groups, mask_mode)))
        elif norm == "conventional":
            layers.append(Norm(n_out, eps, groups))
        if not (binary and sign_inputs):
            # with binarized activations the next layer's sign is the nonlinearity
            layers.append(ReLU())
    if task == "classification":
        layers.append(Softmax())
    return Model(layers)


# ---------------------------------------------------------------------------
# checkpoints

def _fmt_array(a: np.ndarray) -> str:
    return "[" + ", ".join(format(float(v), ".17g") for v in a.ravel()) + "]"


def dumps_checkpoint(model: Model, seed: int) -> str:
    """Serialize to JSON; floats carry 17 significant digits."""
    arrays = []
    layers = []
    for layer in model.layers:
        entry = {"kind": layer.kind, "n_in": layer.n_in, "n_out": layer.n_out, "config": layer.config(), "params": {}}
        for name, value in layer.params.items():
            entry["params"][name] = {"shape": list(value.shape), "data": f"@@ARRAY{len(arrays)}@@"}
            arrays.append(value)
        layers.append(entry)
    doc = json.dumps({"format_version": FORMAT_VERSION, "seed": int(seed), "layers": layers}, indent=1)
    for k, a in enumerate(arrays):
        doc = doc.replace(f'"@@ARRAY{k}@@"', _fmt_array(a), 1)
    return doc + "\n"


def _layer_from_entry(entry: dict) -> Layer:
    kind = entry["kind"]
    if kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r} in checkpoint")
    cfg = entry.get("config", {})
    p = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in entry["params"].items()}
    if kind == "Dense":
        return Dense(entry["n_in"], entry["n_out"], bits=cfg.get("bits"), W=p["W"], b=p["b"])
    if kind == "BinaryDense":
        return BinaryDense(entry["n_in"], entry["n_out"], sign_inputs=cfg["sign_inputs"], W=p["W"], b=p["b"])
    if kind == "InvertedNorm":
        return InvertedNorm(
            InvertedNormParams(p["gamma"], p["beta"], cfg["eps"], cfg["p"], cfg["groups"], cfg["mask_mode"])
        )
    if kind == "Norm":
        return Norm(entry["n_in"], cfg["eps"], cfg["groups"], gamma=p["gamma"], beta=p["beta"])
    return LAYER_KINDS[kind]()


def loads_checkpoint(text: str) -> tuple[Model, int]:
    doc = json.loads(text)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {doc.get('format_version')!r}")
    return Model([_layer_from_entry(e) for e in doc["layers"]]), int(doc["seed"])


def save_checkpoint(model: Model, path, seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_checkpoint(model, seed))


def load_checkpoint(path) -> tuple[Model, int]:
    with open(path, encoding="utf-8") as fh:
        return loads_checkpoint(fh.read())
