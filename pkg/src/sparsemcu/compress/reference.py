"""Float64 forward pass over float-weighted graphs.

Only used to collect activation ranges for post-training quantization; the
deployed path is integer-only.
"""
from __future__ import annotations

import numpy as np

from ..ir.types import LayerKind, LayerSpec, ModelGraph

K = LayerKind

LN_EPS = 1e-5


def conv2d(x, w, b, stride=1, pad=1):
    """x (H, W, Cin), w (Cout, KH, KW, Cin) -> (Ho, Wo, Cout)."""
    cout, kh, kw, _ = w.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ho = (xp.shape[0] - kh) // stride + 1
    wo = (xp.shape[1] - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(kh):
        for j in range(kw):
            patch = xp[i:i + stride * ho:stride, j:j + stride * wo:stride, :]
            out += patch @ w[:, i, j, :].T
    return out + b


def dwconv2d(x, w, b, stride=1):
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ho = (xp.shape[0] - 3) // stride + 1
    wo = (xp.shape[1] - 3) // stride + 1
    out = np.zeros((ho, wo, x.shape[2]))
    for i in range(3):
        for j in range(3):
            out += xp[i:i + stride * ho:stride, j:j + stride * wo:stride, :] * w[:, i, j]
    return out + b


def maxpool(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))


def avgpool(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def layernorm(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _lin(x, t, name):
    return x @ t[f"{name}.weight"].T + t[f"{name}.bias"]


def encoder(x, t, heads, record=None):
    """Pre-norm encoder with ReLU MLP.  ``record(name, array)`` observes intermediates."""
    rec = record or (lambda *_: None)
    shape = x.shape
    x = x.reshape(-1, shape[-1])
    T, C = x.shape
    dh = C // heads
    h = layernorm(x, t["ln1.gamma"], t["ln1.beta"])
    rec("ln1", h)
    q, k, v = _lin(h, t, "q"), _lin(h, t, "k"), _lin(h, t, "v")
    rec("q", q), rec("k", k), rec("v", v)
    ctx = np.zeros_like(q)
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        rec("scores", scores)
        ctx[:, sl] = softmax(scores) @ v[:, sl]
    rec("ctx", ctx)
    proj = _lin(ctx, t, "proj")
    rec("proj", proj)
    r1 = x + proj
    rec("res1", r1)
    h2 = layernorm(r1, t["ln2.gamma"], t["ln2.beta"])
    rec("ln2", h2)
    f1 = np.maximum(_lin(h2, t, "fc1"), 0)
    rec("fc1", f1)
    f2 = _lin(f1, t, "fc2")
    rec("fc2", f2)
    out = r1 + f2
    return out.reshape(shape)


def forward_layer(layer: LayerSpec, inputs: list[np.ndarray], record=None) -> np.ndarray:
    t = {k: np.asarray(v, dtype=np.float64) for k, v in layer.tensors.items()}
    x = inputs[0]
    kind = layer.kind
    relu = layer.attr("relu", False)
    if kind == K.CONV3X3:
        y = conv2d(x, t["weight"], t["bias"], layer.attr("stride", 1), 1)
    elif kind == K.CONV1X1:
        y = conv2d(x, t["weight"], t["bias"], 1, 0)
    elif kind == K.CONV_MAXPOOL:
        y = conv2d(x, t["weight"], t["bias"], 1, 1)
        if relu:
            y = np.maximum(y, 0)
        y = maxpool(y)
    elif kind == K.DWCONV3X3:
        y = dwconv2d(x, t["weight"], t["bias"], layer.attr("stride", 1))
    elif kind == K.LINEAR:
        xin = x.reshape(-1) if layer.attr("flatten", False) else x
        y = xin @ t["weight"].T + t["bias"]
    elif kind == K.MAXPOOL:
        y = maxpool(x)
    elif kind == K.AVGPOOL:
        y = avgpool(x)
    elif kind == K.SEQPOOL:
        tokens = x.reshape(-1, x.shape[-1])
        logits = tokens @ t["weight"].T + t["bias"]
        if record:
            record("logits", logits)
        y = softmax(logits[:, 0]) @ tokens
    elif kind == K.ENCODER:
        y = encoder(x, t, layer.attr("heads"), record)
    elif kind == K.LAYERNORM:
        y = layernorm(x, t["gamma"], t["beta"])
    elif kind == K.SOFTMAX:
        y = softmax(x)
    elif kind == K.RELU:
        y = np.maximum(x, 0)
    elif kind == K.ADD:
        y = x + inputs[1]
    else:
        raise ValueError(f"no reference for {kind}")
    if relu and kind != K.CONV_MAXPOOL:
        y = np.maximum(y, 0)
    return y


def forward(graph: ModelGraph, x: np.ndarray, record=None) -> np.ndarray:
    """Run the float graph; ``record(layer_index, name, array)`` sees every output."""
    outs = {-1: np.asarray(x, dtype=np.float64)}
    for i, layer in enumerate(graph.layers):
        sub = (lambda name, a, i=i: record(i, name, a)) if record else None
        outs[i] = forward_layer(layer, [outs[s] for s in layer.inputs], sub)
        if record:
            record(i, "out", outs[i])
    return outs[len(graph.layers) - 1] if graph.layers else outs[-1]


def init_float_weights(graph: ModelGraph, seed=0) -> ModelGraph:
    """Deterministic He-style random float weights for every tensor slot."""
    from ..ir.graph import tensor_shapes

    rng = np.random.default_rng(seed)
    layers = []
    for layer, shapes in zip(graph.layers, tensor_shapes(graph)):
        tensors = {}
        for name, shape in shapes.items():
            if name.endswith("gamma"):
                a = 1.0 + 0.1 * rng.standard_normal(shape)
            elif name.endswith("beta") or name.endswith("bias"):
                a = 0.05 * rng.standard_normal(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
                a = rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))
            tensors[name] = a.astype(np.float32)
        layers.append(layer.replace(tensors=tensors))
    return graph.with_layers(layers)
