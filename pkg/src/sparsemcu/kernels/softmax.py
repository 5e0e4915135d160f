"""Integer softmax with max subtraction and a lazily filled exponent table.

With INT8 inputs the exponent index ``x_max - x`` lies in [0, 255], so a
257-entry table covers every case.  A bitmap marks which entries have been
computed; each exponent is evaluated at most once per table.
"""
from __future__ import annotations

import math

import numpy as np

from ..ir.types import SOFTMAX_QPARAMS, QuantParams, TensorI8
from .stats import OpCounter

LUT_ENTRIES = 257
_Q31 = 1 << 31
# probabilities are emitted with SOFTMAX_QPARAMS: q = round(p * 256) - 128
_OUT_ONE = 256


def exp_q31(d: int, scale: float) -> int:
    """exp(-d * scale) as Q0.31, saturated below 2**31."""
    v = math.floor(math.exp(-d * scale) * _Q31 + 0.5)
    return min(v, _Q31 - 1)


class SoftmaxLUT:
    """Bitmap-guarded exp table for one input scale.

    Footprint is a 257-bit bitmap (33 bytes) plus 257 uint32 entries.
    """

    def __init__(self, scale: float):
        self.scale = float(scale)
        self.bitmap = np.zeros((LUT_ENTRIES + 7) // 8, dtype=np.uint8)
        self.table = np.zeros(LUT_ENTRIES, dtype=np.uint32)
        self.exp_calls = 0

    @property
    def footprint(self) -> int:
        return self.bitmap.nbytes + self.table.nbytes

    def has(self, d: int) -> bool:
        return bool(self.bitmap[d >> 3] >> (d & 7) & 1)

    def lookup(self, d: np.ndarray) -> np.ndarray:
        """Table values for exponent indices ``d``, computing missing entries once."""
        d = np.asarray(d, dtype=np.int64)
        if d.size and (d.min() < 0 or d.max() >= LUT_ENTRIES):
            raise ValueError("exponent index outside [0, 256]")
        for k in np.unique(d).tolist():
            if not self.has(k):
                self.table[k] = exp_q31(k, self.scale)
                self.bitmap[k >> 3] |= np.uint8(1 << (k & 7))
                self.exp_calls += 1
        return self.table[d].astype(np.int64)


def _normalize(e: np.ndarray) -> np.ndarray:
    """Q0.31 exponents (rows on the last axis) to INT8 probabilities, rounding half up."""
    total = e.sum(axis=-1, keepdims=True)
    q = (2 * e * _OUT_ONE + total) // (2 * total) + SOFTMAX_QPARAMS.zero_point
    return np.minimum(q, 127).astype(np.int8)


def _indices(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.int64)
    return x.max(axis=-1, keepdims=True) - x


def softmax_lut(x: TensorI8, lut: SoftmaxLUT | None = None,
                counter: OpCounter | None = None) -> TensorI8:
    """Row softmax over the last axis using a shared exp table for the whole call."""
    if lut is None:
        lut = SoftmaxLUT(x.qparams.scale)
    before = lut.exp_calls
    e = lut.lookup(_indices(x.data))
    if counter is not None:
        counter.add(exp_calls=lut.exp_calls - before)
    return TensorI8(x.shape, _normalize(e), SOFTMAX_QPARAMS)


def softmax_nolut(x: TensorI8, counter: OpCounter | None = None) -> TensorI8:
    """Same arithmetic with one exp evaluation per element."""
    d = _indices(x.data)
    scale = x.qparams.scale
    e = np.array([exp_q31(k, scale) for k in d.ravel().tolist()], dtype=np.int64).reshape(d.shape)
    if counter is not None:
        counter.add(exp_calls=d.size)
    return TensorI8(x.shape, _normalize(e), SOFTMAX_QPARAMS)


def softmax_probs(x: np.ndarray, qparams: QuantParams, lut: SoftmaxLUT | None = None,
                  counter: OpCounter | None = None) -> np.ndarray:
    """Array-level helper used inside attention and sequence pooling."""
    return softmax_lut(TensorI8(x.shape, x, qparams), lut, counter).data


__all__ = ["LUT_ENTRIES", "exp_q31", "SoftmaxLUT", "softmax_lut", "softmax_nolut", "softmax_probs"]
