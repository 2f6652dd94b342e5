"""Inverted normalization with affine dropout.

The affine transform runs first, ``z = x * gamma_eff + beta_eff``, and
the result is then standardized per region (a whole row, or contiguous
channel groups within a row).  ``gamma`` and ``beta`` are dropped
stochastically: a dropped weight becomes exactly one, a dropped bias
exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .rng import RngStream

MaskMode = Literal["vector", "element"]


@dataclass
class InvertedNormParams:
    """Learnable affine vectors plus the layer's dropout/normalization settings.

    ``groups`` is the number of contiguous channel blocks normalized
    separately; ``groups=1`` normalizes the whole instance.
    """

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    p: float = 0.3
    groups: int = 1
    mask_mode: MaskMode = "vector"

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma and beta must be 1-D vectors of equal length")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {self.p}")
        if self.groups < 1 or self.channels % self.groups:
            raise ValueError(f"groups={self.groups} does not divide C={self.channels}")
        if self.mask_mode not in ("vector", "element"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class NormalInit:
    sigma_gamma: float = 0.3
    sigma_beta: float = 0.3


@dataclass(frozen=True)
class UniformInit:
    k_gamma: float = 1.0
    k_beta: float = 0.0


class AffineMasks(NamedTuple):
    m_gamma: np.ndarray
    m_beta: np.ndarray


def keep_masks(params: InvertedNormParams) -> AffineMasks:
    """Masks that keep every parameter (deterministic, debugging path)."""
    shape = () if params.mask_mode == "vector" else (params.channels,)
    return AffineMasks(np.ones(shape), np.ones(shape))


def init_affine(C: int, spec: NormalInit | UniformInit, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Random affine init: gamma ~ N(1, sg), beta ~ N(0, sb), or U(0, kg), U(-kb, kb)."""
    if C < 1:
        raise ValueError("C must be >= 1")
    gen = rng.generator()
    if isinstance(spec, NormalInit):
        if spec.sigma_gamma <= 0 or spec.sigma_beta <= 0:
            raise ValueError("normal init spreads must be positive")
        gamma = 1.0 + spec.sigma_gamma * gen.standard_normal(C)
        beta = spec.sigma_beta * gen.standard_normal(C)
    elif isinstance(spec, UniformInit):
        if spec.k_gamma <= 0 or spec.k_beta < 0:
            raise ValueError("uniform init requires k_gamma > 0 and k_beta >= 0")
        gamma = gen.uniform(0.0, spec.k_gamma, C)
        beta = gen.uniform(-spec.k_beta, spec.k_beta, C) if spec.k_beta > 0 else np.zeros(C)
    else:
        raise TypeError(f"unsupported init spec {spec!r}")
    return gamma, beta


def sample_masks(params: InvertedNormParams, rng: RngStream) -> AffineMasks:
    """Independent Bernoulli(1 - p) keep masks for gamma and beta.

    Vector-wise mode consumes exactly two uniforms per call.
    """
    gen = rng.generator()
    n = 1 if params.mask_mode == "vector" else params.channels
    u = gen.random(2 * n)
    keep = (u >= params.p).astype(np.float64)
    if params.mask_mode == "vector":
        return AffineMasks(keep[0].reshape(()), keep[1].reshape(()))
    return AffineMasks(keep[:n], keep[n:])


def apply_masks(gamma, beta, masks: AffineMasks) -> tuple[np.ndarray, np.ndarray]:
    m_g, m_b = masks
    gamma_eff = m_g * gamma + (1.0 - m_g)
    beta_eff = m_b * beta
    return np.broadcast_to(gamma_eff, np.shape(gamma)).copy(), np.broadcast_to(beta_eff, np.shape(beta)).copy()


def normalize_regions(z: np.ndarray, groups: int, eps: float):
    """Standardize each row (or each of ``groups`` channel blocks per row).

    Uses the population variance.  Returns ``(y, inv_std)`` where
    ``inv_std`` has shape ``(N, groups, 1)``.
    """
    N, C = z.shape
    size = C // groups
    if size < 2:
        raise ValueError(f"normalization region has {size} element(s); need at least 2")
    zg = z.reshape(N, groups, size)
    mu = zg.mean(axis=2, keepdims=True)
    zc = zg - mu
    var = np.mean(zc * zc, axis=2, keepdims=True)
    denom = var + eps
    if np.any(denom == 0.0):
        raise ZeroDivisionError("constant normalization region with eps=0")
    inv_std = 1.0 / np.sqrt(denom)
    return (zc * inv_std).reshape(N, C), inv_std


def normalize_regions_backward(dy: np.ndarray, y: np.ndarray, inv_std: np.ndarray, groups: int) -> np.ndarray:
    N, C = dy.shape
    size = C // groups
    dyg = dy.reshape(N, groups, size)
    yg = y.reshape(N, groups, size)
    dz = inv_std * (
        dyg - dyg.mean(axis=2, keepdims=True) - yg * np.mean(dyg * yg, axis=2, keepdims=True)
    )
    return dz.reshape(N, C)


@dataclass
class InvNormCache:
    x: np.ndarray
    y: np.ndarray
    inv_std: np.ndarray
    gamma_eff: np.ndarray
    masks: AffineMasks
    groups: int


def inorm_forward(x: np.ndarray, params: InvertedNormParams, masks: AffineMasks):
    """Affine first, then normalize.  Returns ``(y, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.channels:
        raise ValueError(f"expected input of shape (N, {params.channels}), got {x.shape}")
    gamma_eff, beta_eff = apply_masks(params.gamma, params.beta, masks)
    z = x * gamma_eff + beta_eff
    y, inv_std = normalize_regions(z, params.groups, params.eps)
    return y, InvNormCache(x, y, inv_std, gamma_eff, masks, params.groups)


def inorm_backward(cache: InvNormCache, dy: np.ndarray):
    """Exact gradients through the region mean and variance.

    Returns ``(dx, dgamma, dbeta)``; entries at dropped positions are zero.
    """
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != cache.x.shape:
        raise ValueError(f"gradient shape {dy.shape} does not match cached input {cache.x.shape}")
    dz = normalize_regions_backward(dy, cache.y, cache.inv_std, cache.groups)
    dx = dz * cache.gamma_eff
    m_g, m_b = cache.masks
    dgamma = m_g * np.sum(dz * cache.x, axis=0)
    dbeta = m_b * np.sum(dz, axis=0)
    return dx, dgamma, dbeta
