"""Post-training INT8 quantization parameters and integer requantization."""
from __future__ import annotations

import math
import warnings

import numpy as np

from ..errors import DegenerateRange
from ..ir.types import INT8_MAX, INT8_MIN, QuantParams

_I32_LIMIT = 1 << 31


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def calibrate_ptq(lo: float, hi: float, kind: str = "activation") -> QuantParams:
    """Scale/zero-point from an observed real range.

    Weights are symmetric (zero point 0, range +-127); activations are
    asymmetric over the full [-128, 127] code range.  A degenerate range
    warns and returns scale 1 with the constant mapped to code 0.
    """
    lo, hi = float(lo), float(hi)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"invalid calibration range [{lo}, {hi}]")
    if kind not in ("weight", "activation"):
        raise ValueError(f"kind must be 'weight' or 'activation', got {kind!r}")
    if kind == "weight":
        amax = max(abs(lo), abs(hi))
        if amax == 0:
            warnings.warn("degenerate weight range", DegenerateRange, stacklevel=2)
            return QuantParams(1.0, 0)
        return QuantParams(amax / 127.0, 0)
    if lo == hi:
        warnings.warn("degenerate activation range", DegenerateRange, stacklevel=2)
        zp = int(np.clip(-round_half_away(lo), INT8_MIN, INT8_MAX))
        return QuantParams(1.0, zp)
    scale = (hi - lo) / 255.0
    qp = QuantParams(scale, 0)
    zp = INT8_MIN - int(round_half_away(lo / qp.scale))
    return QuantParams(qp.scale, int(np.clip(zp, INT8_MIN, INT8_MAX)))


def calibrate_activation(lo: float, hi: float) -> QuantParams:
    """Activation qparams over a range widened to contain zero, so real 0 (padding, ReLU) is exact."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    if lo == hi:
        return QuantParams(1.0 / 255.0, INT8_MIN)
    return calibrate_ptq(lo, hi, "activation")


def quantize_multiplier(real: float) -> tuple[int, int]:
    """Express a positive real as ``multiplier * 2**-shift`` with a 31-bit mantissa.

    ``multiplier`` lies in [2**30, 2**31); ``shift`` may be negative for reals >= 1.
    """
    real = float(real)
    if real < 0 or not math.isfinite(real):
        raise ValueError(f"multiplier must be a finite non-negative real, got {real}")
    if real == 0:
        return 0, 0
    mant, exp = math.frexp(real)
    m = int(math.floor(mant * (1 << 31) + 0.5))
    if m == 1 << 31:
        m //= 2
        exp += 1
    return m, 31 - exp


def rounding_shift(x, shift: int) -> np.ndarray:
    """Divide int64 values by ``2**shift`` rounding half away from zero (left shift if negative)."""
    x = np.asarray(x, dtype=np.int64)
    if shift <= 0:
        return x << -shift
    if shift > 62:
        return np.zeros_like(x)
    mag = (np.abs(x) + (np.int64(1) << (shift - 1))) >> shift
    return np.where(x < 0, -mag, mag)


def requantize(acc, multiplier: int, shift: int, zero_point: int = 0,
               lo: int = INT8_MIN, hi: int = INT8_MAX) -> np.ndarray:
    """clamp(round(acc * multiplier / 2**shift) + zero_point, lo, hi) on 32-bit accumulators."""
    acc = np.asarray(acc, dtype=np.int64)
    if acc.size and np.abs(acc).max() >= _I32_LIMIT:
        raise OverflowError("accumulator exceeds 32 bits")
    out = rounding_shift(acc * np.int64(multiplier), shift) + zero_point
    out = np.clip(out, lo, hi)
    if lo >= INT8_MIN and hi <= INT8_MAX:
        return out.astype(np.int8)
    return out


def requantize_scaled(acc, effective_scale: float, out: QuantParams,
                      lo: int = INT8_MIN, hi: int = INT8_MAX) -> np.ndarray:
    """Requantize with a real effective scale (``in_scale * w_scale / out.scale``)."""
    m, s = quantize_multiplier(effective_scale)
    return requantize(acc, m, s, out.zero_point, lo, hi)


def requantize_to(acc, in_scale: float, out: QuantParams, relu: bool = False) -> np.ndarray:
    """Requantize an accumulator of real scale ``in_scale`` into ``out``; ``relu`` clamps at real 0."""
    lo = max(INT8_MIN, out.zero_point) if relu else INT8_MIN
    return requantize_scaled(acc, in_scale / out.scale, out, lo=lo)


def rescale_add(x1, q1: QuantParams, x2, q2: QuantParams, out: QuantParams) -> np.ndarray:
    """Saturating residual add of two INT8 tensors with different quantizations."""
    m1, s1 = quantize_multiplier(q1.scale / out.scale)
    m2, s2 = quantize_multiplier(q2.scale / out.scale)
    p1 = (np.asarray(x1, np.int64) - q1.zero_point) * m1
    p2 = (np.asarray(x2, np.int64) - q2.zero_point) * m2
    # products hold < 40 bits, so at most 23 bits of left alignment are safe
    s = min(max(s1, s2), min(s1, s2) + 23)
    total = _align(p1, s1, s) + _align(p2, s2, s)
    return np.clip(rounding_shift(total, s) + out.zero_point, INT8_MIN, INT8_MAX).astype(np.int8)


def _align(p, shift_from: int, shift_to: int) -> np.ndarray:
    if shift_from <= shift_to:
        return p << (shift_to - shift_from)
    return rounding_shift(p, shift_from - shift_to)
