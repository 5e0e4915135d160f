"""Shape inference, structural validation and parameter counting."""
from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass
from typing import Mapping

from ..errors import ShapeMismatch
from .layers import layer_shapes, prunable_tensors, WEIGHTED_LINEAR_KINDS
from .types import LayerKind, ModelGraph, SparseConfig


def _check_order(graph: ModelGraph) -> None:
    for i, layer in enumerate(graph.layers):
        for src in layer.inputs:
            if not -1 <= src < i:
                raise ShapeMismatch(
                    f"{layer.name}: input {src} is not an earlier layer (graph must be acyclic "
                    "and listed in execution order)")


def infer_shapes(graph: ModelGraph) -> ModelGraph:
    """Annotate every layer with its output shape.

    Raises ShapeMismatch when a layer cannot consume its inputs.
    """
    _check_order(graph)
    layers = []
    shapes: dict[int, tuple] = {-1: graph.input_shape}
    for i, layer in enumerate(graph.layers):
        out, _ = layer_shapes(layer, [shapes[s] for s in layer.inputs])
        shapes[i] = out
        layers.append(layer if layer.out_shape == out else layer.replace(out_shape=out))
    return graph.with_layers(layers)


def tensor_shapes(graph: ModelGraph) -> list[dict[str, tuple]]:
    """Expected tensor shapes for each layer (graph must be shape-consistent)."""
    shapes: dict[int, tuple] = {-1: graph.input_shape}
    out = []
    for i, layer in enumerate(graph.layers):
        o, ts = layer_shapes(layer, [shapes[s] for s in layer.inputs])
        shapes[i] = o
        out.append(ts)
    return out


@dataclass(frozen=True)
class Violation:
    layer: int | None
    code: str
    message: str

    def __str__(self):
        where = "graph" if self.layer is None else f"layer {self.layer}"
        return f"{where}: [{self.code}] {self.message}"


def _find_cycle(graph: ModelGraph) -> list[int] | None:
    ts = graphlib.TopologicalSorter()
    for src, dst in graph.edges:
        ts.add(dst, src)
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        return list(exc.args[1])
    return None


def validate_graph(graph: ModelGraph) -> list[Violation]:
    """Collect every invariant violation; an empty list means the graph is well formed."""
    v: list[Violation] = []
    n = len(graph.layers)
    for i, layer in enumerate(graph.layers):
        for src in layer.inputs:
            if not -1 <= src < n:
                v.append(Violation(i, "dangling-edge", f"input {src} does not exist"))

    cycle = _find_cycle(graph)
    if cycle:
        v.append(Violation(None, "cycle", f"cycle through layers {cycle}"))
    else:
        for i, layer in enumerate(graph.layers):
            if any(src >= i for src in layer.inputs if src < n):
                v.append(Violation(i, "order", "layer consumes a later layer's output"))

    for i, layer in enumerate(graph.layers):
        want = 2 if layer.kind == LayerKind.ADD else 1
        if len(layer.inputs) != want:
            v.append(Violation(i, "fan-in", f"{layer.kind} needs {want} input(s), has {len(layer.inputs)}"))

    consumers = graph.consumers()
    for src, dsts in consumers.items():
        if len(dsts) > 2:
            v.append(Violation(src if src >= 0 else None, "fan-out",
                               f"output consumed {len(dsts)} times (at most 2 allowed)"))
    sinks = [i for i in range(n) if not consumers.get(i)]
    if n and sinks != [n - 1]:
        v.append(Violation(None, "outputs", f"graph must have a single output (the last layer), found {sinks}"))

    if v:
        return v

    try:
        typed = infer_shapes(graph)
    except ShapeMismatch as exc:
        return [Violation(None, "shape", str(exc))]

    expected = tensor_shapes(typed)
    for i, layer in enumerate(typed.layers):
        for name, arr in layer.tensors.items():
            if name not in expected[i]:
                v.append(Violation(i, "tensor", f"unexpected tensor {name!r}"))
            elif tuple(arr.shape) != expected[i][name]:
                v.append(Violation(i, "tensor", f"{name} has shape {arr.shape}, expected {expected[i][name]}"))
        cfg = layer.sparse_cfg
        if cfg is None:
            continue
        if not prunable_tensors(layer.kind):
            v.append(Violation(i, "sparse-cfg", f"{layer.kind} has no prunable weights"))
        elif layer.kind == LayerKind.DWCONV3X3 and cfg.block_size != 3:
            v.append(Violation(i, "dw-block-size",
                               f"dw block size must be 3, got {cfg.block_size}"))
        elif layer.kind != LayerKind.DWCONV3X3 and cfg.block_size not in (2, 4):
            v.append(Violation(i, "block-size",
                               f"conv/linear block size must be 2 or 4, got {cfg.block_size}"))
    return v


def pruned_block_count(n_elements: int, cfg: SparseConfig | None) -> int:
    """Number of whole blocks removed when pruning ``n_elements`` weights to ``cfg``."""
    if cfg is None or cfg.sparsity == 0:
        return 0
    n_blocks = n_elements // cfg.block_size
    return math.floor(round(cfg.sparsity * n_blocks, 9))


def count_params(graph: ModelGraph, cfg: Mapping[int, SparseConfig] | None = None,
                 effective: bool = True) -> int:
    """Parameter count; with ``effective`` pruned weights are not counted."""
    cfg = graph.sparse_configs() if cfg is None else cfg
    total = 0
    for i, shapes in enumerate(tensor_shapes(graph)):
        kind = graph.layers[i].kind
        prunable = set(prunable_tensors(kind))
        for name, shape in shapes.items():
            n = math.prod(shape)
            if effective and name in prunable:
                c = cfg.get(i)
                if c is not None:
                    n -= pruned_block_count(n, c) * c.block_size
            total += n
    return total


def default_block_size(kind: LayerKind, preferred: int) -> int:
    """Depthwise layers always code width-3 rows; everything else uses ``preferred``."""
    if kind == LayerKind.DWCONV3X3:
        return 3
    return preferred


def is_prunable(kind: LayerKind) -> bool:
    return kind in WEIGHTED_LINEAR_KINDS or kind == LayerKind.ENCODER
