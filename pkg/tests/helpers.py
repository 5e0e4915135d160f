"""Shared generators and independent oracles for the test suite."""
from __future__ import annotations

import math

import numpy as np

from sparsemcu.ir import LayerKind, LayerSpec, ModelGraph, QuantParams, SparseConfig, TensorI8
from sparsemcu.ir.graph import default_block_size, infer_shapes, is_prunable

K = LayerKind


# ---------------------------------------------------------------- random graphs

def random_graph(rng: np.random.Generator, max_layers: int = 8, max_hw: int = 8,
                 max_c: int = 8, tail: bool = True) -> ModelGraph:
    """Random chain of spatial layers with residual adds, optionally ending in
    token layers (encoder, layernorm, softmax, seqpool) and a linear head."""
    hw = int(rng.choice([s for s in (2, 4, 6, 8) if s <= max_hw]))
    c0 = int(rng.integers(1, max_c + 1))
    layers: list[LayerSpec] = []
    shapes = {-1: (hw, hw, c0)}

    def add(layer: LayerSpec) -> None:
        layers.append(layer)
        g = infer_shapes(ModelGraph(shapes[-1], tuple(layers)))
        shapes[len(layers) - 1] = g.layers[-1].out_shape

    for _ in range(int(rng.integers(1, max_layers + 1))):
        cur = len(layers) - 1
        h, w, c = shapes[cur]
        even = h % 2 == 0 and w % 2 == 0
        ops = ["conv3", "conv1", "dw", "relu"]
        if even:
            ops += ["maxpool", "avgpool", "convmax"]
        same = [j for j in shapes if j != cur and shapes[j] == shapes[cur]]
        if same:
            ops += ["add", "add"]
        op = ops[int(rng.integers(len(ops)))]
        cout = int(rng.integers(1, max_c + 1))
        relu = bool(rng.integers(2))
        if op == "conv3":
            stride = 2 if (h > 2 and rng.integers(3) == 0) else 1
            add(LayerSpec(K.CONV3X3, {"out_channels": cout, "stride": stride, "relu": relu}))
        elif op == "conv1":
            add(LayerSpec(K.CONV1X1, {"out_channels": cout, "relu": relu}))
        elif op == "dw":
            add(LayerSpec(K.DWCONV3X3, {"stride": int(rng.integers(1, 3)), "relu": relu}))
        elif op == "relu":
            add(LayerSpec(K.RELU, {}))
        elif op == "maxpool":
            add(LayerSpec(K.MAXPOOL, {}))
        elif op == "avgpool":
            add(LayerSpec(K.AVGPOOL, {}))
        elif op == "convmax":
            add(LayerSpec(K.CONV_MAXPOOL, {"out_channels": cout, "relu": relu}))
        else:
            other = int(rng.choice(same))
            add(LayerSpec(K.ADD, {}, inputs=(cur, other)))
    if tail:
        c = shapes[len(layers) - 1][-1]
        r = int(rng.integers(4))
        if r == 0 and c % 2 == 0:
            add(LayerSpec(K.ENCODER, {"heads": 2, "mlp_dim": 2 * c}))
        elif r == 1:
            add(LayerSpec(K.LAYERNORM, {}))
        elif r == 2:
            add(LayerSpec(K.SOFTMAX, {}))
        if rng.integers(2):
            add(LayerSpec(K.SEQPOOL, {}))
            add(LayerSpec(K.LINEAR, {"out_features": int(rng.integers(2, 11))}))
        else:
            add(LayerSpec(K.LINEAR, {"out_features": int(rng.integers(2, 11)), "flatten": True}))
    return infer_shapes(ModelGraph(shapes[-1], tuple(layers)))


def random_sparse_cfg(graph: ModelGraph, rng: np.random.Generator,
                      rhos=(0.0, 0.25, 0.5, 0.75, 0.9)) -> dict[int, SparseConfig]:
    cfg = {}
    for i, layer in enumerate(graph.layers):
        if is_prunable(layer.kind):
            rho = float(rng.choice(rhos))
            cfg[i] = SparseConfig(rho, default_block_size(layer.kind, int(rng.choice([2, 4]))))
    return cfg


def blockwise_pruned(rng: np.random.Generator, n: int, rho: float, b: int) -> np.ndarray:
    """Random INT8 vector of ``n`` values with floor(rho * n_blocks) whole blocks zeroed.

    Kept blocks may still contain zeros (they are valid data)."""
    w = rng.integers(-128, 128, n, dtype=np.int8)
    n_blocks = n // b
    k = math.floor(round(rho * n_blocks, 9))
    drop = rng.choice(n_blocks, size=k, replace=False) if k else np.zeros(0, int)
    for j in drop:
        w[j * b:(j + 1) * b] = 0
    return w


def random_tensor(rng, shape, qparams: QuantParams | None = None) -> TensorI8:
    q = qparams or QuantParams(float(rng.uniform(0.005, 0.1)), int(rng.integers(-128, 128)))
    return TensorI8(tuple(shape), rng.integers(-128, 128, shape, dtype=np.int8), q)


# ---------------------------------------------------------------- oracles

def naive_conv_acc(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Loop-nest int64 convolution; ``x`` zero-point adjusted (H, W, Cin), ``w`` (Cout, k, k, Cin)."""
    h, wd, cin = x.shape
    cout, k, _, _ = w.shape
    xp = np.pad(x.astype(np.int64), ((pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((ho, wo, cout), dtype=np.int64)
    for oy in range(ho):
        for ox in range(wo):
            patch = xp[oy * stride:oy * stride + k, ox * stride:ox * stride + k, :]
            out[oy, ox] = np.einsum("kijc,ijc->k", w.astype(np.int64), patch)
    return out


def liveness(graph: ModelGraph) -> dict[int, tuple[int, int]]:
    """Buffer -> (first step, last step) straight from the edge list.

    The graph input is live from step 0; the final output stays live through
    the last step; a buffer without consumers is live only at its own step.
    """
    n = len(graph.layers)
    life = {-1: (0, 0)}
    for i in range(n):
        life[i] = (i, i)
    for i, layer in enumerate(graph.layers):
        for s in layer.inputs:
            life[s] = (life[s][0], max(life[s][1], i))
    return life


def plan_overlaps(graph: ModelGraph, plan) -> list[str]:
    """Brute force: at every step, every pair of live byte intervals (buffers
    plus that step's scratch) must be disjoint and inside the arena."""
    problems = []
    life = liveness(graph)
    for step in range(len(graph.layers)):
        iv = []
        for b, (first, last) in life.items():
            if first <= step <= last:
                p = plan.buffers[b]
                iv.append((p.offset, p.offset + p.length, f"buf{b}"))
        if step in plan.scratch:
            off, length = plan.scratch[step]
            iv.append((off, off + length, f"scratch{step}"))
        for lo, hi, name in iv:
            if lo < 0 or hi > plan.arena_size:
                problems.append(f"step {step}: {name} [{lo},{hi}) outside arena {plan.arena_size}")
        for a in range(len(iv)):
            for b in range(a + 1, len(iv)):
                (l1, h1, n1), (l2, h2, n2) = iv[a], iv[b]
                if l1 < h1 and l2 < h2 and l1 < h2 and l2 < h1:
                    problems.append(f"step {step}: {n1} [{l1},{h1}) overlaps {n2} [{l2},{h2})")
    return problems
