"""Integer LayerNorm with the normalized value kept as x_norm * 2**7 in 16 bits.

Per token the kernel forms the exact integer moments of the zero-point
adjusted input, takes an integer square root, and divides to get
``x_norm * 128`` rounded to INT16.  The affine step multiplies by the INT8
gamma and adds an INT32 beta at the same accumulator scale; the 1/128 factor
is folded into the requantization multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..compress.calibrate import LN_SHIFT
from ..compress.quant import requantize_scaled
from ..ir.types import QuantParams, TensorI8

# Fractional bits carried by the integer standard deviation.
SQRT_FRAC_BITS = 8
EPS = 1  # variance guard, in squared input steps

_I16 = np.iinfo(np.int16)


@dataclass(frozen=True)
class ScaledLayerNormParams:
    gamma: np.ndarray          # int8 per channel, scale gamma_qparams.scale
    beta: np.ndarray           # int32 per channel, scale gamma scale / 2**LN_SHIFT
    gamma_qparams: QuantParams
    out_qparams: QuantParams
    epsilon: int = EPS

    @property
    def folded_scale(self) -> float:
        """Accumulator scale with the 1/2**7 factor folded in."""
        return self.gamma_qparams.scale / (1 << LN_SHIFT)


def isqrt(n) -> np.ndarray:
    """Elementwise floor(sqrt(n)) for non-negative int64 by bitwise binary search."""
    n = np.asarray(n, dtype=np.int64)
    if n.size and n.min() < 0:
        raise ValueError("isqrt of a negative value")
    root = np.zeros_like(n)
    for bit in range(30, -1, -1):  # root < 2**31 keeps trial**2 in int64
        trial = root | (np.int64(1) << bit)
        root = np.where(trial * trial <= n, trial, root)
    return root


def _div_round(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num / den rounded half away from zero (den > 0)."""
    mag = (2 * np.abs(num) + den) // (2 * den)
    return np.where(num < 0, -mag, mag)


def normalize_int16(xi: np.ndarray, shift: int = LN_SHIFT, epsilon: int = EPS) -> np.ndarray:
    """x_norm * 2**shift as int16 for zero-point adjusted rows ``xi`` (tokens, C)."""
    xi = xi.astype(np.int64)
    c = xi.shape[-1]
    s = xi.sum(axis=-1, keepdims=True)
    d = c * (xi * xi).sum(axis=-1, keepdims=True) - s * s      # c**2 * variance
    den = isqrt((d + c * c * epsilon) << (2 * SQRT_FRAC_BITS))   # c * sigma * 2**F
    num = (c * xi - s) << (shift + SQRT_FRAC_BITS)
    return np.clip(_div_round(num, den), _I16.min, _I16.max).astype(np.int16)


def _affine(x: TensorI8, xn16: np.ndarray, params: ScaledLayerNormParams, scale: float) -> TensorI8:
    acc = params.gamma.astype(np.int64) * xn16 + params.beta.astype(np.int64)
    y = requantize_scaled(acc, scale / params.out_qparams.scale, params.out_qparams)
    return TensorI8(x.shape, y.reshape(x.shape), params.out_qparams)


def scaled_layernorm(x: TensorI8, params: ScaledLayerNormParams) -> TensorI8:
    c = x.shape[-1]
    xi = x.data.reshape(-1, c).astype(np.int64) - x.qparams.zero_point
    xn16 = normalize_int16(xi, LN_SHIFT, params.epsilon)
    return _affine(x, xn16, params, params.folded_scale)


def unscaled_layernorm(x: TensorI8, params: ScaledLayerNormParams) -> TensorI8:
    """Comparison variant: x_norm rounded straight to an integer, no 2**7 headroom."""
    c = x.shape[-1]
    xi = x.data.reshape(-1, c).astype(np.int64) - x.qparams.zero_point
    xn = normalize_int16(xi, 0, params.epsilon).astype(np.int64) << LN_SHIFT
    return _affine(x, xn, params, params.folded_scale)


__all__ = ["SQRT_FRAC_BITS", "EPS", "ScaledLayerNormParams", "isqrt", "normalize_int16",
           "scaled_layernorm", "unscaled_layernorm"]
