"""Post-training quantization of a float graph into INT8 weights and qparams."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import DegenerateRange
from ..ir.graph import infer_shapes
from ..ir.layers import ENCODER_LINEARS
from ..ir.types import SOFTMAX_QPARAMS, LayerKind, LayerSpec, ModelGraph, QuantParams
from . import reference
from .quant import calibrate_activation, calibrate_ptq, round_half_away

K = LayerKind

# Scaled-LayerNorm keeps the normalized value multiplied by 2**LN_SHIFT.
LN_SHIFT = 7

_I32 = np.iinfo(np.int32)


class RangeObserver:
    """Running min/max per (layer index, slot name)."""

    def __init__(self):
        self.ranges: dict[tuple[int, str], list[float]] = {}

    def __call__(self, layer: int, name: str, arr) -> None:
        a = np.asarray(arr)
        if not a.size:
            return
        lo, hi = float(a.min()), float(a.max())
        r = self.ranges.get((layer, name))
        if r is None:
            self.ranges[(layer, name)] = [lo, hi]
        else:
            r[0], r[1] = min(r[0], lo), max(r[1], hi)

    def act(self, layer: int, name: str = "out") -> QuantParams:
        lo, hi = self.ranges.get((layer, name), (0.0, 0.0))
        return calibrate_activation(lo, hi)


def quantize_weight(w) -> tuple[np.ndarray, QuantParams]:
    w = np.asarray(w, dtype=np.float64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRange)
        qp = calibrate_ptq(float(w.min()) if w.size else 0.0,
                           float(w.max()) if w.size else 0.0, "weight")
    return qp.quantize(w), qp


def quantize_bias(b, scale: float) -> np.ndarray:
    q = round_half_away(np.asarray(b, dtype=np.float64) / scale)
    return np.clip(q, _I32.min, _I32.max).astype(np.int32)


def _linear(t: dict, name: str, in_scale: float, out_t: dict, out_q: dict, prefix: str = ""):
    """Quantize ``name.weight`` / ``name.bias`` against an input scale."""
    w, wq = quantize_weight(t[f"{prefix}weight"])
    out_t[f"{prefix}weight"] = w
    out_t[f"{prefix}bias"] = quantize_bias(t[f"{prefix}bias"], in_scale * wq.scale)
    out_q[f"{prefix}weight"] = wq


def _layernorm(t: dict, prefix: str, out_t: dict, out_q: dict):
    g, gq = quantize_weight(t[f"{prefix}gamma"])
    out_t[f"{prefix}gamma"] = g
    # beta shares the accumulator scale of gamma * (x_norm * 2**LN_SHIFT)
    out_t[f"{prefix}beta"] = quantize_bias(t[f"{prefix}beta"], gq.scale / (1 << LN_SHIFT))
    out_q[f"{prefix}gamma"] = gq


def quantize_layer(layer: LayerSpec, index: int, in_q: QuantParams, obs: RangeObserver) -> LayerSpec:
    t = {k: np.asarray(v, dtype=np.float64) for k, v in layer.tensors.items()}
    tensors: dict = {}
    qp: dict = {}
    kind = layer.kind
    if kind in (K.CONV3X3, K.CONV1X1, K.CONV_MAXPOOL, K.DWCONV3X3, K.LINEAR):
        _linear(t, "", in_q.scale, tensors, qp)
        qp["out"] = obs.act(index)
    elif kind == K.SEQPOOL:
        _linear(t, "", in_q.scale, tensors, qp)
        qp["logits"] = obs.act(index, "logits")
        qp["out"] = obs.act(index)
    elif kind == K.LAYERNORM:
        _layernorm(t, "", tensors, qp)
        qp["out"] = obs.act(index)
    elif kind == K.ENCODER:
        _layernorm(t, "ln1.", tensors, qp)
        qp["ln1"] = obs.act(index, "ln1")
        for lin in ENCODER_LINEARS:
            src = {"q": "ln1", "k": "ln1", "v": "ln1", "proj": "ctx", "fc1": "ln2",
                   "fc2": "fc1"}[lin]
            if lin == "proj":
                qp["scores"] = obs.act(index, "scores")
                qp["ctx"] = obs.act(index, "ctx")
            if lin == "fc1":
                qp["res1"] = obs.act(index, "res1")
                _layernorm(t, "ln2.", tensors, qp)
                qp["ln2"] = obs.act(index, "ln2")
            _linear(t, lin, qp[src].scale, tensors, qp, prefix=f"{lin}.")
            qp[lin] = obs.act(index, lin)
        qp["out"] = obs.act(index)
    elif kind in (K.MAXPOOL, K.RELU):
        qp["out"] = in_q
    elif kind == K.SOFTMAX:
        qp["out"] = SOFTMAX_QPARAMS
    else:
        qp["out"] = obs.act(index)
    return layer.replace(tensors=tensors, qparams=qp)


def quantize_graph(graph: ModelGraph, calib_inputs) -> ModelGraph:
    """Calibrate activation ranges on ``calib_inputs`` and quantize every layer.

    Weights become symmetric per-tensor INT8, biases INT32 at the accumulator
    scale, and each activation gets asymmetric qparams from its observed range.
    """
    graph = infer_shapes(graph)
    obs = RangeObserver()
    lo, hi = np.inf, -np.inf
    for x in calib_inputs:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = min(lo, float(x.min())), max(hi, float(x.max()))
        reference.forward(graph, x, record=obs)
    if not np.isfinite(lo):
        raise ValueError("need at least one calibration input")
    in_q = calibrate_activation(lo, hi)
    out_q = {-1: in_q}
    layers = []
    for i, layer in enumerate(graph.layers):
        q = quantize_layer(layer, i, out_q[layer.inputs[0]], obs)
        out_q[i] = q.qparams["out"]
        layers.append(q)
    return graph.replace(layers=tuple(layers), input_qparams=in_q)


def synthetic_inputs(shape, n: int = 4, seed: int = 0) -> list[np.ndarray]:
    """Seeded standard-normal calibration batch (no dataset is in scope)."""
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(shape) for _ in range(n)]


__all__ = ["LN_SHIFT", "RangeObserver", "quantize_weight", "quantize_bias", "quantize_layer",
           "quantize_graph", "synthetic_inputs"]
