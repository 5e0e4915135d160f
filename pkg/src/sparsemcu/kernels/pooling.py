"""Pooling, ReLU and residual add on INT8 tensors."""
from __future__ import annotations

import numpy as np

from ..compress.quant import requantize_scaled, requantize_to, rescale_add
from ..errors import ShapeMismatch
from ..ir.types import SOFTMAX_QPARAMS, QuantParams, TensorI8
from .conv import linear_acc
from .softmax import softmax_probs
from .stats import OpCounter


def _windows(x: TensorI8) -> np.ndarray:
    if x.data.ndim != 3:
        raise ShapeMismatch(f"2x2 pooling needs (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"2x2 pooling needs even spatial dims, got {x.shape}")
    return x.data.reshape(h // 2, 2, w // 2, 2, c)


def maxpool2x2(x: TensorI8) -> TensorI8:
    y = _windows(x).max(axis=(1, 3))
    return TensorI8(y.shape, y, x.qparams)


def avgpool2x2(x: TensorI8, out_qparams: QuantParams) -> TensorI8:
    acc = (_windows(x).astype(np.int32) - x.qparams.zero_point).sum(axis=(1, 3))
    y = requantize_scaled(acc, x.qparams.scale / (4 * out_qparams.scale), out_qparams)
    return TensorI8(y.shape, y, out_qparams)


def seqpool(x: TensorI8, weights, bias, w_qparams: QuantParams, logits_qparams: QuantParams,
            out_qparams: QuantParams, counter: OpCounter | None = None) -> TensorI8:
    """Attention pooling over tokens: softmax(linear(x)) weighted token sum -> (C,)."""
    if x.data.ndim not in (2, 3):
        raise ShapeMismatch(f"sequence pooling needs tokens, got {x.shape}")
    c = x.shape[-1]
    xs = x.data.reshape(-1, c).astype(np.int32) - np.int32(x.qparams.zero_point)
    acc = linear_acc(xs, weights, 1, counter).astype(np.int64) + np.asarray(bias, np.int64)
    logits = requantize_to(acc, x.qparams.scale * w_qparams.scale, logits_qparams)
    p = softmax_probs(logits[:, 0], logits_qparams, counter=counter)
    weights_t = p.astype(np.int32) - SOFTMAX_QPARAMS.zero_point
    pooled = weights_t @ xs
    if counter is not None:
        counter.add(macs=xs.size)
    y = requantize_to(pooled, SOFTMAX_QPARAMS.scale * x.qparams.scale, out_qparams)
    return TensorI8((c,), y, out_qparams)


def relu_int8(x: TensorI8) -> TensorI8:
    y = np.maximum(x.data, np.int8(x.qparams.zero_point))
    return TensorI8(x.shape, y, x.qparams)


def add_int8(a: TensorI8, b: TensorI8, out_qparams: QuantParams) -> TensorI8:
    if a.shape != b.shape:
        raise ShapeMismatch(f"residual add of {a.shape} and {b.shape}")
    y = rescale_add(a.data, a.qparams, b.data, b.qparams, out_qparams)
    return TensorI8(a.shape, y, out_qparams)


__all__ = ["maxpool2x2", "avgpool2x2", "seqpool", "relu_int8", "add_int8"]
