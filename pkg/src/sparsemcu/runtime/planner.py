"""Static arena planning with head-tail alternation.

Activation buffers are stacked from the two ends of one arena.  Each layer
writes its output at the end opposite its primary input (for a residual add,
the most recently produced input), so producer and consumer never compete
for the same side.  A buffer stays live from its producing step through its
last consumer; a freed buffer only returns space once nothing above it on
the same end is still live.  Per-layer scratch sits above the output for the
duration of the step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..ir.graph import infer_shapes
from ..ir.types import LayerKind, ModelGraph

K = LayerKind

HEAD, TAIL = "head", "tail"
INPUT = -1


@dataclass(frozen=True)
class Placement:
    offset: int
    length: int
    end: str
    first_step: int  # producing step (-1 for the graph input)
    last_step: int   # last step that reads it (inclusive)


@dataclass(frozen=True)
class MemoryPlan:
    arena_size: int
    buffers: dict = field(default_factory=dict)   # buffer id -> Placement
    scratch: dict = field(default_factory=dict)   # layer index -> (offset, length)

    def live_at(self, step: int) -> list[int]:
        return [b for b, p in self.buffers.items() if p.first_step <= step <= p.last_step]

    def occupancy(self, step: int) -> int:
        used = sum(self.buffers[b].length for b in self.live_at(step))
        return used + self.scratch.get(step, (0, 0))[1]


def scratch_bytes(kind: LayerKind, in_shape: tuple, attrs: dict) -> int:
    """Transient INT8 working space a layer needs besides its input and output."""
    if kind == K.ENCODER:
        c = in_shape[-1]
        t = math.prod(in_shape[:-1])
        hidden = attrs.get("mlp_dim", 0)
        # ln, q, k, v, ctx, res1 token maps, one head of scores, the MLP hidden map;
        # proj / ln2 / fc2 reuse slots that are dead by then
        return 6 * t * c + t * t + t * hidden
    if kind == K.SEQPOOL:
        t = math.prod(in_shape[:-1])
        return 2 * t  # logits and probabilities
    return 0


def _last_use(graph: ModelGraph) -> dict[int, int]:
    n = len(graph.layers)
    last = {INPUT: 0 if n else -1}
    for i in range(n):
        last[i] = i
    for i, layer in enumerate(graph.layers):
        for src in layer.inputs:
            last[src] = max(last[src], i)
    if n:
        last[n - 1] = n - 1  # the output is read after the final step
    return last


def plan_memory(graph: ModelGraph) -> MemoryPlan:
    graph = infer_shapes(graph)
    n = len(graph.layers)
    if n == 0:
        return MemoryPlan(0)
    last = _last_use(graph)
    sizes = {INPUT: math.prod(graph.input_shape)}
    sizes.update({i: math.prod(l.out_shape) for i, l in enumerate(graph.layers)})

    rel: dict[int, tuple[int, str]] = {}   # buffer -> (offset from its end, end)
    live: set[int] = set()

    def top(end: str) -> int:
        return max((rel[b][0] + sizes[b] for b in live if rel[b][1] == end), default=0)

    rel[INPUT] = (0, HEAD)
    live.add(INPUT)
    scratch_rel: dict[int, tuple[int, int, str]] = {}
    arena = 0
    for i, layer in enumerate(graph.layers):
        primary = max(layer.inputs)
        end = TAIL if rel[primary][1] == HEAD else HEAD
        rel[i] = (top(end), end)
        live.add(i)
        s = scratch_bytes(layer.kind, graph.shape_of(layer.inputs[0]), layer.attrs)
        if s:
            scratch_rel[i] = (top(end), s, end)
        arena = max(arena, top(HEAD) + top(TAIL) + s)
        live -= {b for b in live if last[b] <= i and b != n - 1}

    def absolute(off: int, length: int, end: str) -> int:
        return off if end == HEAD else arena - off - length

    buffers = {}
    for b, (off, end) in rel.items():
        first = INPUT if b == INPUT else b
        buffers[b] = Placement(absolute(off, sizes[b], end), sizes[b], end, first,
                               n - 1 if b == n - 1 else last[b])
    scratch = {i: (absolute(off, s, end), s) for i, (off, s, end) in scratch_rel.items()}
    return MemoryPlan(arena, buffers, scratch)


__all__ = ["HEAD", "TAIL", "INPUT", "Placement", "MemoryPlan", "scratch_bytes", "plan_memory"]
