"""Weight binarization and symmetric k-bit fake quantization.

Codes are signed integers stored in two's complement on ``bits`` bits so a
fault injector can flip individual stored bits.  For 1-bit (binary) tensors
the single stored bit is the sign: pattern 0 is +1, pattern 1 is -1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SUPPORTED_BITS = (1, 4, 8)


@dataclass(frozen=True)
class QuantSpec:
    bits: int

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValueError(f"bits must be one of {SUPPORTED_BITS}, got {self.bits}")

    @property
    def qmax(self) -> int:
        return 1 if self.bits == 1 else 2 ** (self.bits - 1) - 1


@dataclass
class BitTensor:
    codes: np.ndarray  # int64, same shape as the source tensor
    bits: int
    scale: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape


def binarize_forward(w: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(np.asarray(w) >= 0, 1.0, -1.0)


def binarize_backward(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Clipped straight-through estimator: pass ``dy`` where ``|w| <= 1``."""
    dy = np.asarray(dy, dtype=np.float64)
    w = np.asarray(w)
    if dy.shape != w.shape:
        raise ValueError(f"shape mismatch: dy {dy.shape} vs w {w.shape}")
    return np.where(np.abs(w) <= 1.0, dy, 0.0)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(w: np.ndarray, bits: int) -> BitTensor:
    w = np.asarray(w, dtype=np.float64)
    spec = QuantSpec(bits)
    if bits == 1:
        return BitTensor(binarize_forward(w).astype(np.int64), 1, 1.0)
    qmax = spec.qmax
    max_abs = float(np.max(np.abs(w))) if w.size else 0.0
    if max_abs == 0.0:
        warnings.warn("all-zero tensor: quantization scale undefined, using 1.0", RuntimeWarning)
        return BitTensor(np.zeros(w.shape, dtype=np.int64), bits, 1.0)
    # w * (qmax / max_abs) keeps exact half-way points exact (0.5 * 7 == 3.5)
    codes = _round_half_away(w * (qmax / max_abs))
    codes = np.clip(codes, -qmax, qmax).astype(np.int64)
    return BitTensor(codes, bits, max_abs / qmax)


def dequantize(t: BitTensor) -> np.ndarray:
    return t.codes.astype(np.float64) * t.scale


def fake_quantize(w: np.ndarray, bits: int) -> np.ndarray:
    """Round-trip through the integer grid; gradients pass straight through."""
    if bits == 1:
        return binarize_forward(w)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return dequantize(quantize(w, bits))


def code_bits(code, bits: int):
    """Two's-complement bit pattern of ``code`` on ``bits`` bits (array-friendly)."""
    code = np.asarray(code, dtype=np.int64)
    if bits == 1:
        out = (code < 0).astype(np.int64)
    else:
        out = code & ((1 << bits) - 1)
    return int(out) if out.ndim == 0 else out


def bits_to_code(pattern, bits: int):
    """Inverse of :func:`code_bits`; every pattern decodes, including -2**(bits-1)."""
    pattern = np.asarray(pattern, dtype=np.int64)
    if np.any((pattern < 0) | (pattern >= (1 << bits))):
        raise ValueError(f"bit pattern out of range for {bits} bits")
    if bits == 1:
        out = np.where(pattern == 1, -1, 1).astype(np.int64)
    else:
        out = np.where(pattern >= (1 << (bits - 1)), pattern - (1 << bits), pattern)
    return int(out) if out.ndim == 0 else out
