"""Deployment package: a self-describing little-endian binary.

Layout::

    header        32 B   magic "TFPK", version u16, flags u16, layer_count u32,
                         arena_size u32, input ndim u8, pad u8, dims 3 x u16,
                         input scale f32, input zero point i32
    layer table   32 B each: kind u8, n_inputs u8, n_tensors u8, n_qparams u8,
                         inputs 2 x i16, attrs 6 x i32
    tensors       16 B each: slot u8, format u8, dtype u8, block size u8,
                         blob offset u32, blob length u32, record count u32
    qparams        8 B each: scale f32, zero point i32
    memory plan   n_buffers u32, n_scratch u32, then 12 B per buffer
                  (offset, length, end) and per scratch region (layer, offset, length)
    blobs         dense bytes, coded record streams (+ dense trailer), raw int32

Tensors and qparams follow each layer's slot order; every offset is u32.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..codec import DenseWeights, EncodedWeights, decode_blockwise_rle
from ..errors import BadMagic, BadPackage, BudgetExceeded, ShapeMismatch
from ..ir.graph import infer_shapes, tensor_shapes
from ..ir.layers import ATTR_DEFAULTS, ATTR_NAMES, qparam_names, tensor_dtype, tensor_names
from ..ir.types import LayerKind, LayerSpec, ModelGraph, QuantParams, SparseConfig
from .executor import CompiledModel, compile_model
from .layout import (DTYPE_CODES, FORMAT_DENSE, FORMAT_RAW, FORMAT_SPARSE, HEADER_BYTES, MAGIC,
                     VERSION, metadata_bytes, stored_nbytes)
from .planner import HEAD, INPUT, TAIL, MemoryPlan, Placement, _last_use
from .resources import Budgets, ResourceReport, resource_eval

KIND_CODES = {k: i for i, k in enumerate(LayerKind)}
KINDS = list(LayerKind)

FLAG_LITTLE_ENDIAN = 1
FLAG_OVERRIDE = 2

_HEADER = struct.Struct("<4sHHIIBB3Hfi")
_LAYER = struct.Struct("<BBBBhh6i")
_TENSOR = struct.Struct("<BBBBIII")
_QP = struct.Struct("<fi")
_PLAN_HDR = struct.Struct("<II")
_PLAN_ENTRY = struct.Struct("<III")

assert _HEADER.size == HEADER_BYTES and _LAYER.size == 32 and _TENSOR.size == 16


@dataclass(frozen=True)
class PackageHeader:
    version: int
    flags: int
    layer_count: int
    arena_size: int
    input_shape: tuple
    input_qparams: QuantParams


@dataclass(frozen=True)
class DeployPackage:
    header: PackageHeader
    model: CompiledModel
    data: bytes

    @property
    def nbytes(self) -> int:
        return len(self.data)


def _attr_values(layer: LayerSpec) -> list[int]:
    vals = []
    for name in ATTR_NAMES[layer.kind]:
        v = layer.attr(name, ATTR_DEFAULTS.get(name, 0))
        vals.append(int(v))
    return vals + [0] * (6 - len(vals))


def _encode(model: CompiledModel, flags: int) -> bytes:
    g, plan = model.graph, model.plan
    if len(g.input_shape) > 3:
        raise ShapeMismatch("package input supports at most 3 dims")
    dims = list(g.input_shape) + [0] * (3 - len(g.input_shape))
    layer_tab, tensor_tab, qp_tab = [], [], []
    blobs: list[bytes] = []
    n_tensors = sum(len(tensor_names(l.kind)) for l in g.layers)
    n_qparams = sum(len(qparam_names(l.kind)) for l in g.layers)
    blob_pos = metadata_bytes(g, len(plan.scratch))
    for i, layer in enumerate(g.layers):
        ins = list(layer.inputs) + [0] * (2 - len(layer.inputs))
        tnames, qnames = tensor_names(layer.kind), qparam_names(layer.kind)
        layer_tab.append(_LAYER.pack(KIND_CODES[layer.kind], len(layer.inputs), len(tnames),
                                     len(qnames), ins[0], ins[1], *_attr_values(layer)))
        for slot, name in enumerate(tnames):
            s = model.stored[(i, name)]
            if isinstance(s, EncodedWeights):
                blob, fmt, b, nrec = s.stream + s.trailer, FORMAT_SPARSE, s.block_size, s.n_records
            elif isinstance(s, DenseWeights):
                blob, fmt, b, nrec = s.data, FORMAT_DENSE, 0, 0
            else:
                blob, fmt, b, nrec = np.asarray(s, "<i4").tobytes(), FORMAT_RAW, 0, 0
            tensor_tab.append(_TENSOR.pack(slot, fmt, DTYPE_CODES[tensor_dtype(name)], b,
                                           blob_pos, len(blob), nrec))
            blobs.append(blob)
            blob_pos += len(blob)
        for name in qnames:
            q = layer.qparams[name]
            qp_tab.append(_QP.pack(q.scale, q.zero_point))
    plan_tab = []
    if g.layers:
        plan_tab.append(_PLAN_HDR.pack(len(g.layers) + 1, len(plan.scratch)))
        for b in [INPUT] + list(range(len(g.layers))):
            p = plan.buffers[b]
            plan_tab.append(_PLAN_ENTRY.pack(p.offset, p.length, 0 if p.end == HEAD else 1))
        for i in sorted(plan.scratch):
            plan_tab.append(_PLAN_ENTRY.pack(i, *plan.scratch[i]))
    else:
        plan_tab.append(_PLAN_HDR.pack(0, 0))
    q = g.input_qparams
    header = _HEADER.pack(MAGIC, VERSION, flags | FLAG_LITTLE_ENDIAN, len(g.layers),
                          plan.arena_size, len(g.input_shape), 0, *dims, q.scale, q.zero_point)
    assert len(tensor_tab) == n_tensors and len(qp_tab) == n_qparams
    out = b"".join([header, *layer_tab, *tensor_tab, *qp_tab, *plan_tab, *blobs])
    return out


def emit_package(graph, cfg: Mapping[int, SparseConfig] | None = None,
                 plan: MemoryPlan | None = None, budgets: Budgets = Budgets(),
                 override: bool = False) -> bytes:
    """Serialize a quantized graph (or CompiledModel) to package bytes.

    Raises BudgetExceeded when the package or its arena exceeds ``budgets``,
    unless ``override`` is set (recorded in the header flags).
    """
    model = graph if isinstance(graph, CompiledModel) else compile_model(graph, cfg)
    if plan is not None:
        model = CompiledModel(model.graph, model.stored, plan, model.flags)
    report = package_report(model, budgets)
    if not report.ok and not override:
        raise BudgetExceeded(report)
    return _encode(model, FLAG_OVERRIDE if (override and not report.ok) else 0)


def package_report(model: CompiledModel, budgets: Budgets = Budgets()) -> ResourceReport:
    """Resource report of a compiled model using its actual stored tensors."""
    rep = resource_eval(model.graph, None, budgets, model.plan)
    actual = metadata_bytes(model.graph, len(model.plan.scratch)) + sum(
        stored_nbytes(s) for s in model.stored.values())
    per_layer = [0] * len(model.graph.layers)
    for (i, _), s in model.stored.items():
        per_layer[i] += stored_nbytes(s)
    return ResourceReport(actual, rep.peak_memory_bytes, budgets.storage, budgets.memory,
                          rep.arena_bytes, rep.metadata_bytes, tuple(per_layer), model.plan)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, st: struct.Struct):
        if self.pos + st.size > len(self.data):
            raise BadPackage(f"package truncated at byte {self.pos}")
        vals = st.unpack_from(self.data, self.pos)
        self.pos += st.size
        return vals


def read_header(data: bytes) -> PackageHeader:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"not a package (magic {data[:4]!r})")
    r = _Reader(data)
    _, version, flags, n, arena, ndim, _, d0, d1, d2, scale, zp = r.take(_HEADER)
    if version != VERSION:
        raise BadPackage(f"unsupported package version {version}")
    if not flags & FLAG_LITTLE_ENDIAN:
        raise BadPackage("package is not little-endian")
    if ndim > 3:
        raise BadPackage(f"input rank {ndim} unsupported")
    try:
        qp = QuantParams(scale, zp)
    except ValueError as exc:
        raise BadPackage(f"bad input qparams: {exc}") from None
    return PackageHeader(version, flags, n, arena, (d0, d1, d2)[:ndim], qp)


def load_package(data: bytes) -> DeployPackage:
    """Parse package bytes back into an executable CompiledModel."""
    data = bytes(data)
    hdr = read_header(data)
    r = _Reader(data)
    r.pos = HEADER_BYTES
    recs = [r.take(_LAYER) for _ in range(hdr.layer_count)]
    layers = []
    for i, (code, n_in, n_t, n_q, in0, in1, *attrs) in enumerate(recs):
        if code >= len(KINDS):
            raise BadPackage(f"layer {i}: unknown kind code {code}")
        kind = KINDS[code]
        if n_t != len(tensor_names(kind)) or n_q != len(qparam_names(kind)) or n_in not in (1, 2):
            raise BadPackage(f"layer {i}: slot counts do not match kind {kind}")
        a = {}
        for name, v in zip(ATTR_NAMES[kind], attrs):
            a[name] = bool(v) if name in ("relu", "flatten") else int(v)
        layers.append(LayerSpec(kind, a, inputs=(in0, in1)[:n_in]))
    tdescs = [[r.take(_TENSOR) for _ in range(len(tensor_names(l.kind)))] for l in layers]
    qps = []
    for l in layers:
        q = {}
        for name in qparam_names(l.kind):
            scale, zp = r.take(_QP)
            try:
                q[name] = QuantParams(scale, zp)
            except ValueError as exc:
                raise BadPackage(f"bad qparams {name!r}: {exc}") from None
        qps.append(q)
    n_buf, n_scr = r.take(_PLAN_HDR)
    if hdr.layer_count and n_buf != hdr.layer_count + 1:
        raise BadPackage("memory plan does not cover every buffer")
    buf_entries = [r.take(_PLAN_ENTRY) for _ in range(n_buf)]
    scr_entries = [r.take(_PLAN_ENTRY) for _ in range(n_scr)]

    graph = ModelGraph(hdr.input_shape, tuple(layers), hdr.input_qparams)
    try:
        graph = infer_shapes(graph)
        shapes = tensor_shapes(graph)
    except ShapeMismatch as exc:
        raise BadPackage(f"inconsistent layer table: {exc}") from None

    stored, final_layers = {}, []
    for i, layer in enumerate(graph.layers):
        tensors = {}
        for name, (slot, fmt, dt, b, off, length, nrec) in zip(tensor_names(layer.kind), tdescs[i]):
            if off + length > len(data):
                raise BadPackage(f"layer {i} tensor {name!r} blob outside package")
            blob = data[off:off + length]
            n = math.prod(shapes[i][name])
            if fmt == FORMAT_SPARSE:
                k = nrec * (1 + b)
                s = EncodedWeights(blob[:k], b, n, nrec, blob[k:])
                tensors[name] = decode_blockwise_rle(s).reshape(shapes[i][name])
            elif fmt == FORMAT_DENSE:
                if length != n:
                    raise BadPackage(f"layer {i} tensor {name!r}: {length} bytes for {n} values")
                s = DenseWeights(blob)
                tensors[name] = s.array().reshape(shapes[i][name])
            elif fmt == FORMAT_RAW:
                if length != 4 * n:
                    raise BadPackage(f"layer {i} tensor {name!r}: {length} bytes for {n} int32")
                s = np.frombuffer(blob, "<i4").astype(np.int32)
                tensors[name] = s.reshape(shapes[i][name])
            else:
                raise BadPackage(f"layer {i} tensor {name!r}: unknown format {fmt}")
            stored[(i, name)] = s
        final_layers.append(layer.replace(tensors=tensors, qparams=qps[i]))
    graph = graph.with_layers(final_layers)

    buffers = {}
    if hdr.layer_count:
        last = _last_use(graph)
        n = hdr.layer_count
        for b, (off, length, end) in zip([INPUT] + list(range(n)), buf_entries):
            if off + length > hdr.arena_size:
                raise BadPackage(f"buffer {b} outside arena")
            buffers[b] = Placement(off, length, HEAD if end == 0 else TAIL, b,
                                   n - 1 if b == n - 1 else last[b])
    scratch = {}
    for layer_i, off, length in scr_entries:
        if off + length > hdr.arena_size:
            raise BadPackage(f"scratch of layer {layer_i} outside arena")
        scratch[layer_i] = (off, length)
    plan = MemoryPlan(hdr.arena_size, buffers, scratch)
    return DeployPackage(hdr, CompiledModel(graph, stored, plan, hdr.flags), data)


__all__ = ["PackageHeader", "DeployPackage", "emit_package", "package_report", "read_header",
           "load_package", "FLAG_OVERRIDE"]
