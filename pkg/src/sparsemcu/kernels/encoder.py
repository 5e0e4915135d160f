"""Integer-only pre-norm transformer encoder with a ReLU MLP."""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..compress.quant import requantize_scaled, requantize_to
from ..ir.types import SOFTMAX_QPARAMS, QuantParams, TensorI8
from .conv import linear_int8
from .layernorm import ScaledLayerNormParams, scaled_layernorm
from .pooling import add_int8
from .softmax import SoftmaxLUT, softmax_probs
from .stats import OpCounter


def _ln(x: TensorI8, t, qp, name: str) -> TensorI8:
    return scaled_layernorm(x, ScaledLayerNormParams(
        t[f"{name}.gamma"], t[f"{name}.beta"], qp[f"{name}.gamma"], qp[name]))


def _lin(x: TensorI8, t, qp, w, name: str, counter, relu=False) -> TensorI8:
    return linear_int8(x, w.get(f"{name}.weight", t.get(f"{name}.weight")), t[f"{name}.bias"],
                       qp[f"{name}.weight"], qp[name], relu=relu, counter=counter)


def attention(q: TensorI8, k: TensorI8, v: TensorI8, heads: int, scores_q: QuantParams,
              ctx_q: QuantParams, counter: OpCounter | None = None) -> TensorI8:
    """Multi-head scaled dot-product attention on (T, C) INT8 projections.

    The 1/sqrt(d_head) factor is folded into the score requantization; the
    probabilities (INT8, scale 1/256, zero point -128) aggregate the values.
    One exp table serves every head, since all scores share one scale.
    """
    t_len, c = q.shape
    dh = c // heads
    qi = q.data.astype(np.int32) - np.int32(q.qparams.zero_point)
    ki = k.data.astype(np.int32) - np.int32(k.qparams.zero_point)
    vi = v.data.astype(np.int32) - np.int32(v.qparams.zero_point)
    score_eff = q.qparams.scale * k.qparams.scale / (math.sqrt(dh) * scores_q.scale)
    ctx_scale = SOFTMAX_QPARAMS.scale * v.qparams.scale
    lut = SoftmaxLUT(scores_q.scale)
    out = np.empty((t_len, c), dtype=np.int8)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s_acc = qi[:, sl] @ ki[:, sl].T
        scores = requantize_scaled(s_acc, score_eff, scores_q)
        p = softmax_probs(scores, scores_q, lut, counter).astype(np.int32) - SOFTMAX_QPARAMS.zero_point
        out[:, sl] = requantize_to(p @ vi[:, sl], ctx_scale, ctx_q)
    if counter is not None:
        counter.add(macs=2 * heads * t_len * t_len * dh)
    return TensorI8((t_len, c), out, ctx_q)


def encoder_forward(x: TensorI8, tensors: Mapping[str, np.ndarray],
                    qparams: Mapping[str, QuantParams], heads: int,
                    weights: Mapping | None = None,
                    counter: OpCounter | None = None) -> TensorI8:
    """LN -> Q/K/V -> attention -> proj -> add -> LN -> fc1+ReLU -> fc2 -> add.

    ``weights`` optionally maps ``"<lin>.weight"`` to stored (dense or
    encoded) weights; otherwise the dense arrays in ``tensors`` are used.
    """
    w = dict(weights or {})
    t, qp = tensors, qparams
    shape = x.shape
    tok = TensorI8((int(np.prod(shape[:-1])), shape[-1]), x.data.reshape(-1, shape[-1]), x.qparams)
    h = _ln(tok, t, qp, "ln1")
    q = _lin(h, t, qp, w, "q", counter)
    k = _lin(h, t, qp, w, "k", counter)
    v = _lin(h, t, qp, w, "v", counter)
    ctx = attention(q, k, v, heads, qp["scores"], qp["ctx"], counter)
    proj = _lin(ctx, t, qp, w, "proj", counter)
    res1 = add_int8(tok, proj, qp["res1"])
    h2 = _ln(res1, t, qp, "ln2")
    f1 = _lin(h2, t, qp, w, "fc1", counter, relu=True)
    f2 = _lin(f1, t, qp, w, "fc2", counter)
    out = add_int8(res1, f2, qp["out"])
    return TensorI8(shape, out.data.reshape(shape), qp["out"])


__all__ = ["attention", "encoder_forward"]
