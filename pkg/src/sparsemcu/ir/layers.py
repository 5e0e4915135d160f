"""Per-kind layer metadata: output shapes, tensor layouts, qparam slots.

Activation layout is channels-last: spatial tensors are (H, W, C), token
tensors (T, C), pooled vectors (C,).  Convolution weights are stored
(C_out, KH, KW, C_in) and linear weights (out, in), so a block of ``b``
contiguous weights always runs along the input dimension.  Depthwise weights
are (C, 3, 3); a width-3 block is one kernel row.
"""
from __future__ import annotations

import math

from ..errors import ShapeMismatch
from .types import LayerKind, LayerSpec

K = LayerKind

CONV_KINDS = {K.CONV3X3, K.CONV1X1, K.CONV_MAXPOOL}
WEIGHTED_LINEAR_KINDS = CONV_KINDS | {K.DWCONV3X3, K.LINEAR}

ENCODER_LINEARS = ("q", "k", "v", "proj", "fc1", "fc2")

# Attribute names in serialization order (at most six per kind).
ATTR_NAMES = {
    K.CONV3X3: ("out_channels", "stride", "relu"),
    K.CONV1X1: ("out_channels", "relu"),
    K.CONV_MAXPOOL: ("out_channels", "relu"),
    K.DWCONV3X3: ("stride", "relu"),
    K.LINEAR: ("out_features", "flatten", "relu"),
    K.ENCODER: ("heads", "mlp_dim"),
    K.MAXPOOL: (),
    K.AVGPOOL: (),
    K.SEQPOOL: (),
    K.LAYERNORM: (),
    K.SOFTMAX: (),
    K.RELU: (),
    K.ADD: (),
}

ATTR_DEFAULTS = {"stride": 1, "relu": False, "flatten": False}


def tensor_names(kind: LayerKind) -> tuple[str, ...]:
    """All tensor slots of a kind, in serialization order."""
    if kind in WEIGHTED_LINEAR_KINDS:
        return ("weight", "bias")
    if kind == K.SEQPOOL:
        return ("weight", "bias")
    if kind == K.LAYERNORM:
        return ("gamma", "beta")
    if kind == K.ENCODER:
        names = ["ln1.gamma", "ln1.beta"]
        for lin in ENCODER_LINEARS[:4]:
            names += [f"{lin}.weight", f"{lin}.bias"]
        names += ["ln2.gamma", "ln2.beta"]
        for lin in ENCODER_LINEARS[4:]:
            names += [f"{lin}.weight", f"{lin}.bias"]
        return tuple(names)
    return ()


def prunable_tensors(kind: LayerKind) -> tuple[str, ...]:
    """Weight tensors that take part in blockwise pruning and sparse coding."""
    if kind in WEIGHTED_LINEAR_KINDS:
        return ("weight",)
    if kind == K.ENCODER:
        return tuple(f"{lin}.weight" for lin in ENCODER_LINEARS)
    return ()


def qparam_names(kind: LayerKind) -> tuple[str, ...]:
    """Quantization parameter slots, in serialization order.  "out" is always last."""
    if kind in WEIGHTED_LINEAR_KINDS:
        return ("weight", "out")
    if kind == K.SEQPOOL:
        return ("weight", "logits", "out")
    if kind == K.LAYERNORM:
        return ("gamma", "out")
    if kind == K.ENCODER:
        return ("ln1.gamma", "ln1", "q.weight", "q", "k.weight", "k", "v.weight", "v",
                "scores", "ctx", "proj.weight", "proj", "res1", "ln2.gamma", "ln2",
                "fc1.weight", "fc1", "fc2.weight", "fc2", "out")
    return ("out",)


def tensor_dtype(name: str) -> str:
    """Integer storage type of a quantized tensor slot."""
    if name.endswith("bias") or name.endswith("beta"):
        return "i32"
    return "i8"


def _need_spatial(layer: LayerSpec, shape: tuple) -> tuple[int, int, int]:
    if len(shape) != 3:
        raise ShapeMismatch(f"{layer.name}: {layer.kind} needs an (H, W, C) input, got {shape}")
    return shape


def _conv_out(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def _positive(layer: LayerSpec, key: str) -> int:
    v = layer.attr(key)
    if not isinstance(v, (int,)) or isinstance(v, bool) or v < 1:
        raise ShapeMismatch(f"{layer.name}: attribute {key!r} must be a positive integer, got {v!r}")
    return v


def layer_shapes(layer: LayerSpec, in_shapes: list[tuple]) -> tuple[tuple, dict[str, tuple]]:
    """Return (output shape, {tensor name: shape}) for ``layer`` given its input shapes."""
    kind = layer.kind
    n_in = 2 if kind == K.ADD else 1
    if len(in_shapes) != n_in:
        raise ShapeMismatch(f"{layer.name}: {kind} takes {n_in} input(s), got {len(in_shapes)}")
    shape = tuple(in_shapes[0])

    if kind in (K.CONV3X3, K.CONV1X1, K.CONV_MAXPOOL):
        h, w, c = _need_spatial(layer, shape)
        cout = _positive(layer, "out_channels")
        k = 1 if kind == K.CONV1X1 else 3
        stride = layer.attr("stride", 1) if kind == K.CONV3X3 else 1
        if stride not in (1, 2):
            raise ShapeMismatch(f"{layer.name}: stride must be 1 or 2")
        pad = 1 if k == 3 else 0
        ho, wo = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
        if kind == K.CONV_MAXPOOL:
            if ho % 2 or wo % 2:
                raise ShapeMismatch(f"{layer.name}: conv-maxpool needs even spatial dims")
            ho, wo = ho // 2, wo // 2
        return (ho, wo, cout), {"weight": (cout, k, k, c), "bias": (cout,)}

    if kind == K.DWCONV3X3:
        h, w, c = _need_spatial(layer, shape)
        stride = layer.attr("stride", 1)
        if stride not in (1, 2):
            raise ShapeMismatch(f"{layer.name}: stride must be 1 or 2")
        return (_conv_out(h, 3, stride, 1), _conv_out(w, 3, stride, 1), c), \
            {"weight": (c, 3, 3), "bias": (c,)}

    if kind == K.LINEAR:
        out = _positive(layer, "out_features")
        if layer.attr("flatten", False):
            return (out,), {"weight": (out, math.prod(shape)), "bias": (out,)}
        if not shape:
            raise ShapeMismatch(f"{layer.name}: linear needs at least one dim")
        return shape[:-1] + (out,), {"weight": (out, shape[-1]), "bias": (out,)}

    if kind in (K.MAXPOOL, K.AVGPOOL):
        h, w, c = _need_spatial(layer, shape)
        if h % 2 or w % 2:
            raise ShapeMismatch(f"{layer.name}: 2x2 pooling needs even spatial dims, got {shape}")
        return (h // 2, w // 2, c), {}

    if kind == K.SEQPOOL:
        if len(shape) not in (2, 3):
            raise ShapeMismatch(f"{layer.name}: sequence pooling needs tokens, got {shape}")
        c = shape[-1]
        return (c,), {"weight": (1, c), "bias": (1,)}

    if kind == K.ENCODER:
        if len(shape) not in (2, 3):
            raise ShapeMismatch(f"{layer.name}: encoder needs (T, C) or (H, W, C), got {shape}")
        c = shape[-1]
        heads = _positive(layer, "heads")
        hidden = _positive(layer, "mlp_dim")
        if c % heads:
            raise ShapeMismatch(f"{layer.name}: {heads} heads do not divide {c} channels")
        ts = {"ln1.gamma": (c,), "ln1.beta": (c,), "ln2.gamma": (c,), "ln2.beta": (c,)}
        for lin in ("q", "k", "v", "proj"):
            ts[f"{lin}.weight"] = (c, c)
            ts[f"{lin}.bias"] = (c,)
        ts["fc1.weight"], ts["fc1.bias"] = (hidden, c), (hidden,)
        ts["fc2.weight"], ts["fc2.bias"] = (c, hidden), (c,)
        return shape, ts

    if kind == K.LAYERNORM:
        if not shape:
            raise ShapeMismatch(f"{layer.name}: layernorm needs at least one dim")
        return shape, {"gamma": (shape[-1],), "beta": (shape[-1],)}

    if kind in (K.SOFTMAX, K.RELU):
        if not shape:
            raise ShapeMismatch(f"{layer.name}: {kind} needs at least one dim")
        return shape, {}

    if kind == K.ADD:
        if tuple(in_shapes[1]) != shape:
            raise ShapeMismatch(f"{layer.name}: residual add of {shape} and {tuple(in_shapes[1])}")
        return shape, {}

    raise ShapeMismatch(f"{layer.name}: unknown layer kind {kind}")
