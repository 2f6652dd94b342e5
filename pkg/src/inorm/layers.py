"""Layer kinds with hand-written backward passes.

Each layer exposes ``params`` (name -> array, updated in place by the
optimizer), ``forward(x, ctx) -> (y, cache)`` and
``backward(cache, dy) -> (dx, grads)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import invnorm
from .invnorm import InvertedNormParams
from .quantize import binarize_backward, binarize_forward, fake_quantize
from .rng import RngStream


@dataclass
class ForwardContext:
    layer_index: int
    rng: RngStream | None


class Layer:
    kind = "Layer"
    n_in: int | None = None
    n_out: int | None = None
    # parameters exempt from weight decay
    no_decay: tuple[str, ...] = ()

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {}

    def config(self) -> dict:
        return {}

    def forward(self, x, ctx):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def __repr__(self):
        dims = f"{self.n_in}->{self.n_out}" if self.n_in is not None else ""
        return f"{self.kind}({dims})"


class Dense(Layer):
    """Fully connected layer ``y = x @ W.T + b`` with ``W`` of shape (out, in).

    With ``bits`` set, the forward pass uses fake-quantized weights and the
    weight gradient passes straight through the rounding.
    """

    kind = "Dense"

    def __init__(self, n_in: int, n_out: int, bits: int | None = None, W=None, b=None):
        self.n_in, self.n_out, self.bits = n_in, n_out, bits
        self.W = np.zeros((n_out, n_in)) if W is None else np.asarray(W, dtype=np.float64)
        self.b = np.zeros(n_out) if b is None else np.asarray(b, dtype=np.float64)
        if self.W.shape != (n_out, n_in) or self.b.shape != (n_out,):
            raise ValueError(f"{self.kind}: parameter shapes do not match dims {n_in}->{n_out}")
        # set by fault injection: the deployed (possibly corrupted) weight matrix
        self.weight_override: np.ndarray | None = None

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def config(self):
        return {"bits": self.bits}

    def effective_weight(self) -> np.ndarray:
        if self.weight_override is not None:
            return self.weight_override
        if self.bits is not None:
            return fake_quantize(self.W, self.bits)
        return self.W

    def forward(self, x, ctx):
        W = self.effective_weight()
        return x @ W.T + self.b, (x, W)

    def backward(self, cache, dy):
        x, W = cache
        return dy @ W, {"W": dy.T @ x, "b": dy.sum(axis=0)}


class BinaryDense(Dense):
    """Dense layer whose weights are binarized to +-1 in the forward pass.

    ``sign_inputs`` also binarizes the incoming activations; ``input_noise``
    (installed by fault injection) perturbs them just before the sign.
    """

    kind = "BinaryDense"

    def __init__(self, n_in: int, n_out: int, sign_inputs: bool = False, W=None, b=None):
        super().__init__(n_in, n_out, None, W, b)
        self.sign_inputs = sign_inputs
        self.input_noise: Callable[[np.ndarray], np.ndarray] | None = None

    def config(self):
        return {"sign_inputs": self.sign_inputs}

    def effective_weight(self):
        if self.weight_override is not None:
            return self.weight_override
        return binarize_forward(self.W)

    def forward(self, x, ctx):
        x_pre = x
        if self.sign_inputs:
            if self.input_noise is not None:
                x_pre = x + self.input_noise(x)
            x = binarize_forward(x_pre)
        W = self.effective_weight()
        return x @ W.T + self.b, (x, x_pre, W)

    def backward(self, cache, dy):
        x, x_pre, W = cache
        dx = dy @ W
        if self.sign_inputs:
            dx = binarize_backward(dx, x_pre)
        dW = binarize_backward(dy.T @ x, self.W)
        return dx, {"W": dW, "b": dy.sum(axis=0)}


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, ctx):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, dy):
        return dy * cache, {}


class Softmax(Layer):
    kind = "Softmax"

    def forward(self, x, ctx):
        e = np.exp(x - x.max(axis=1, keepdims=True))
        y = e / e.sum(axis=1, keepdims=True)
        return y, y

    def backward(self, cache, dy):
        y = cache
        return y * (dy - np.sum(dy * y, axis=1, keepdims=True)), {}


class InvertedNorm(Layer):
    """Affine-then-normalize block with stochastic affine dropout.

    When the forward context carries an RNG stream, fresh masks are drawn
    from that stream re-keyed to this layer's index; without one, every
    affine parameter is kept.
    """

    kind = "InvertedNorm"
    no_decay = ("gamma", "beta")

    def __init__(self, norm: InvertedNormParams):
        self.norm = norm
        self.n_in = self.n_out = norm.channels

    @property
    def params(self):
        return {"gamma": self.norm.gamma, "beta": self.norm.beta}

    def config(self):
        n = self.norm
        return {"eps": n.eps, "p": n.p, "groups": n.groups, "mask_mode": n.mask_mode}

    def forward(self, x, ctx):
        if ctx.rng is None:
            masks = invnorm.keep_masks(self.norm)
        else:
            masks = invnorm.sample_masks(self.norm, ctx.rng.for_layer(ctx.layer_index))
        return invnorm.inorm_forward(x, self.norm, masks)

    def backward(self, cache, dy):
        dx, dgamma, dbeta = invnorm.inorm_backward(cache, dy)
        return dx, {"gamma": dgamma, "beta": dbeta}


class Norm(Layer):
    """Conventional-order normalization: standardize, then ``y_hat * gamma + beta``.

    Deterministic; used as the baseline the inverted layer is compared to.
    """

    kind = "Norm"
    no_decay = ("gamma", "beta")

    def __init__(self, C: int, eps: float = 1e-5, groups: int = 1, gamma=None, beta=None):
        if groups < 1 or C % groups:
            raise ValueError(f"groups={groups} does not divide C={C}")
        self.n_in = self.n_out = C
        self.eps, self.groups = eps, groups
        self.gamma = np.ones(C) if gamma is None else np.asarray(gamma, dtype=np.float64)
        self.beta = np.zeros(C) if beta is None else np.asarray(beta, dtype=np.float64)

    @property
    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def config(self):
        return {"eps": self.eps, "groups": self.groups}

    def forward(self, x, ctx):
        y_hat, inv_std = invnorm.normalize_regions(x, self.groups, self.eps)
        return y_hat * self.gamma + self.beta, (y_hat, inv_std)

    def backward(self, cache, dy):
        y_hat, inv_std = cache
        grads = {"gamma": np.sum(dy * y_hat, axis=0), "beta": dy.sum(axis=0)}
        dx = invnorm.normalize_regions_backward(dy * self.gamma, y_hat, inv_std, self.groups)
        return dx, grads


LAYER_KINDS = {cls.kind: cls for cls in (Dense, BinaryDense, ReLU, Softmax, InvertedNorm, Norm)}
