"""Dual 16-bit multiply-accumulate, as on Cortex-M DSP cores.

Two INT8 weights are sign-extended to 16 bits and packed into one 32-bit
word; two input values likewise.  One SMLAD-style instruction then adds both
lane products to a 32-bit accumulator, wrapping on overflow.
"""
from __future__ import annotations

import numpy as np

_MASK16 = 0xFFFF
_MASK32 = 0xFFFFFFFF


def wrap32(v: int) -> int:
    v &= _MASK32
    return v - (1 << 32) if v >= 1 << 31 else v


def sxt16(v: int) -> int:
    """Sign-extend the low 16 bits."""
    v &= _MASK16
    return v - (1 << 16) if v >= 1 << 15 else v


def pack16x2(lo: int, hi: int) -> int:
    """Concatenate two 16-bit lanes into an unsigned 32-bit word (``lo`` in bits 0-15)."""
    return ((hi & _MASK16) << 16) | (lo & _MASK16)


def smlad(a: int, b: int, acc: int) -> int:
    """acc + a.lo * b.lo + a.hi * b.hi with 32-bit wraparound."""
    lo = sxt16(a) * sxt16(b)
    hi = sxt16(a >> 16) * sxt16(b >> 16)
    return wrap32(acc + lo + hi)


def paired_mac(acc: int, w_pair, x_pair) -> int:
    """Accumulate ``w1*x1 + w2*x2`` through the packed dual-MAC path."""
    w = pack16x2(int(w_pair[0]), int(w_pair[1]))
    x = pack16x2(int(x_pair[0]), int(x_pair[1]))
    return smlad(w, x, int(acc))


def scalar_mac2(acc: int, w_pair, x_pair) -> int:
    """Reference: two ordinary multiply-accumulates on 32-bit integers."""
    return wrap32(int(acc) + int(w_pair[0]) * int(x_pair[0]) + int(w_pair[1]) * int(x_pair[1]))


def dual_mac(acc: np.ndarray, w1: int, x1: np.ndarray, w2: int, x2: np.ndarray) -> None:
    """Vector form used by the kernels: ``acc += w1*x1 + w2*x2`` in place, int32 wraparound.

    ``x1`` / ``x2`` are zero-point-adjusted inputs, which fit the 16-bit lanes.
    """
    acc += np.int32(w1) * x1 + np.int32(w2) * x2


def single_mac(acc: np.ndarray, w: int, x: np.ndarray) -> None:
    acc += np.int32(w) * x


__all__ = ["wrap32", "sxt16", "pack16x2", "smlad", "paired_mac", "scalar_mac2", "dual_mac",
           "single_mac"]
