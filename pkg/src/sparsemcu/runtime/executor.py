"""Graph execution over the kernels, inside one planned INT8 arena."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..codec import DenseWeights
from ..errors import ShapeMismatch
from ..ir.graph import infer_shapes
from ..ir.types import LayerKind, LayerSpec, ModelGraph, QuantParams, SparseConfig, TensorI8
from ..kernels import (OpCounter, add_int8, avgpool2x2, conv2d_int8, conv_maxpool_int8,
                       dwconv2d_int8, encoder_forward, linear_int8, maxpool2x2, relu_int8,
                       scaled_layernorm, seqpool, softmax_lut)
from ..kernels.layernorm import ScaledLayerNormParams
from .layout import store_tensors
from .planner import INPUT, MemoryPlan, plan_memory

K = LayerKind

SCRATCH_FILL = np.int8(0x55)


@dataclass
class CompiledModel:
    """A quantized graph with its stored (dense or coded) tensors and memory plan."""

    graph: ModelGraph
    stored: dict
    plan: MemoryPlan
    flags: int = 0

    def layer_tensors(self, i: int) -> dict:
        return {name: s for (j, name), s in self.stored.items() if j == i}


@dataclass
class ExecutionStats:
    layer_names: list = field(default_factory=list)
    layer_seconds: list = field(default_factory=list)
    layer_macs: list = field(default_factory=list)
    layer_exp_calls: list = field(default_factory=list)
    arena_high_water: int = 0
    arena_size: int = 0

    @property
    def macs(self) -> int:
        return sum(self.layer_macs)

    @property
    def exp_calls(self) -> int:
        return sum(self.layer_exp_calls)

    @property
    def seconds(self) -> float:
        return sum(self.layer_seconds)


def compile_model(graph: ModelGraph, cfg: Mapping[int, SparseConfig] | None = None,
                  force_dense: bool = False) -> CompiledModel:
    """Pick storage formats for a quantized graph and plan its arena."""
    if cfg is not None:
        graph = graph.with_sparse_configs(cfg)
    graph = infer_shapes(graph)
    if graph.input_qparams is None:
        raise ValueError("graph is not quantized (no input qparams)")
    return CompiledModel(graph, store_tensors(graph, force_dense=force_dense), plan_memory(graph))


def _dense(s) -> np.ndarray:
    return s.array() if isinstance(s, DenseWeights) else np.asarray(s)


def run_layer(layer: LayerSpec, inputs: list[TensorI8], stored: Mapping,
              counter: OpCounter | None = None) -> TensorI8:
    """Execute one quantized layer; ``stored`` maps tensor names to storage objects."""
    kind, qp = layer.kind, layer.qparams
    x = inputs[0]
    relu = bool(layer.attr("relu", False))
    if kind in (K.CONV3X3, K.CONV1X1):
        k = 3 if kind == K.CONV3X3 else 1
        return conv2d_int8(x, stored["weight"], _dense(stored["bias"]), qp["weight"], qp["out"],
                           stride=layer.attr("stride", 1), kernel=k, relu=relu, counter=counter)
    if kind == K.CONV_MAXPOOL:
        return conv_maxpool_int8(x, stored["weight"], _dense(stored["bias"]), qp["weight"],
                                 qp["out"], relu=relu, counter=counter)
    if kind == K.DWCONV3X3:
        return dwconv2d_int8(x, stored["weight"], _dense(stored["bias"]), qp["weight"], qp["out"],
                             stride=layer.attr("stride", 1), relu=relu, counter=counter)
    if kind == K.LINEAR:
        return linear_int8(x, stored["weight"], _dense(stored["bias"]), qp["weight"], qp["out"],
                           relu=relu, flatten=bool(layer.attr("flatten", False)), counter=counter)
    if kind == K.MAXPOOL:
        return maxpool2x2(x)
    if kind == K.AVGPOOL:
        return avgpool2x2(x, qp["out"])
    if kind == K.SEQPOOL:
        return seqpool(x, stored["weight"], _dense(stored["bias"]), qp["weight"], qp["logits"],
                       qp["out"], counter=counter)
    if kind == K.LAYERNORM:
        return scaled_layernorm(x, ScaledLayerNormParams(
            _dense(stored["gamma"]), _dense(stored["beta"]), qp["gamma"], qp["out"]))
    if kind == K.SOFTMAX:
        return softmax_lut(x, counter=counter)
    if kind == K.RELU:
        return relu_int8(x)
    if kind == K.ADD:
        return add_int8(x, inputs[1], qp["out"])
    if kind == K.ENCODER:
        tensors = {n: _dense(s) for n, s in stored.items() if not n.endswith(".weight")}
        weights = {n: s for n, s in stored.items() if n.endswith(".weight")}
        return encoder_forward(x, tensors, qp, layer.attr("heads"), weights, counter)
    raise ValueError(f"cannot execute layer kind {kind}")


def _out_qparams(graph: ModelGraph, b: int) -> QuantParams:
    return graph.input_qparams if b == INPUT else graph.layers[b].qparams["out"]


def _check_input(graph: ModelGraph, x: TensorI8) -> None:
    if tuple(x.shape) != graph.input_shape:
        raise ShapeMismatch(f"input shape {x.shape} does not match model input {graph.input_shape}")
    if x.qparams != graph.input_qparams:
        raise ValueError(f"input qparams {x.qparams} differ from model input {graph.input_qparams}")


def run_inference(model, x: TensorI8, verify: bool = False) -> tuple[TensorI8, ExecutionStats]:
    """Run a compiled model (or package bytes) on one input inside its planned arena.

    Every activation lives at its planned arena offset and each layer's
    scratch region is filled while the layer runs.  With ``verify`` each
    buffer is compared on read against a private copy, so any overlap in the
    plan surfaces as an error.
    """
    from .package import DeployPackage, load_package
    if isinstance(model, (bytes, bytearray)):
        model = load_package(bytes(model))
    if isinstance(model, DeployPackage):
        model = model.model
    graph, plan = model.graph, model.plan
    _check_input(graph, x)
    stats = ExecutionStats(arena_size=plan.arena_size)
    if not graph.layers:
        return x, stats
    arena = np.zeros(plan.arena_size, dtype=np.int8)
    shadow: dict[int, np.ndarray] = {}

    def touch(off: int, length: int) -> None:
        if off < 0 or off + length > plan.arena_size:
            raise RuntimeError(f"access [{off}, {off + length}) outside arena of {plan.arena_size}")
        stats.arena_high_water = max(stats.arena_high_water, off + length)

    def write(b: int, data: np.ndarray) -> None:
        p = plan.buffers[b]
        touch(p.offset, p.length)
        arena[p.offset:p.offset + p.length] = data.ravel()
        if verify:
            shadow[b] = data.ravel().copy()

    def read(b: int) -> TensorI8:
        p = plan.buffers[b]
        data = arena[p.offset:p.offset + p.length]
        if verify and not np.array_equal(data, shadow[b]):
            raise RuntimeError(f"buffer {b} was overwritten while live")
        return TensorI8(graph.shape_of(b), data, _out_qparams(graph, b))

    write(INPUT, x.data)
    per_layer = [model.layer_tensors(i) for i in range(len(graph.layers))]
    for i, layer in enumerate(graph.layers):
        counter = OpCounter()
        t0 = time.perf_counter()
        inputs = [read(s) for s in layer.inputs]
        if i in plan.scratch:
            off, length = plan.scratch[i]
            touch(off, length)
            arena[off:off + length] = SCRATCH_FILL
        y = run_layer(layer, inputs, per_layer[i], counter)
        write(i, y.data)
        stats.layer_seconds.append(time.perf_counter() - t0)
        stats.layer_names.append(layer.name)
        stats.layer_macs.append(counter.macs)
        stats.layer_exp_calls.append(counter.exp_calls)
    out = read(len(graph.layers) - 1)
    return out, stats


def run_in_memory(graph: ModelGraph, x: TensorI8,
                  cfg: Mapping[int, SparseConfig] | None = None) -> TensorI8:
    """Reference executor: same kernels, every activation kept in its own array."""
    model = compile_model(graph, cfg)
    g = model.graph
    _check_input(g, x)
    outs = {INPUT: x}
    for i, layer in enumerate(g.layers):
        outs[i] = run_layer(layer, [outs[s] for s in layer.inputs], model.layer_tensors(i))
    return outs[len(g.layers) - 1] if g.layers else x


__all__ = ["CompiledModel", "ExecutionStats", "compile_model", "run_layer", "run_inference",
           "run_in_memory"]
