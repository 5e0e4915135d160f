"""Byte layout of deployment packages and per-tensor storage decisions.

Shared by the resource evaluator (which needs the exact size before any
bytes exist) and the package writer.
"""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..codec import DenseWeights, EncodedWeights, choose_storage_format
from ..ir.graph import pruned_block_count, tensor_shapes
from ..ir.layers import prunable_tensors, qparam_names, tensor_dtype, tensor_names
from ..ir.types import ModelGraph, SparseConfig

MAGIC = b"TFPK"
VERSION = 1
HEADER_BYTES = 32
LAYER_RECORD_BYTES = 32   # fixed per-layer metadata
TENSOR_DESC_BYTES = 16
QPARAM_BYTES = 8
PLAN_HEADER_BYTES = 8
PLAN_ENTRY_BYTES = 12

FORMAT_DENSE, FORMAT_SPARSE, FORMAT_RAW = 0, 1, 2
DTYPE_CODES = {"i8": 0, "i32": 1}
DTYPE_SIZES = {"i8": 1, "i32": 4}


def store_tensor(name: str, arr, kind, cfg: SparseConfig | None):
    """Storage object for one quantized tensor.

    Prunable INT8 weights go through the dense/sparse choice when the layer
    has a sparse config; other INT8 tensors are dense; INT32 tensors raw.
    """
    a = np.asarray(arr)
    if tensor_dtype(name) == "i32":
        return a.astype("<i4").ravel()
    if cfg is not None and name in prunable_tensors(kind):
        return choose_storage_format(a.ravel(), cfg)
    return DenseWeights(a.astype(np.int8).tobytes())


def store_tensors(graph: ModelGraph, cfg: Mapping[int, SparseConfig] | None = None,
                  force_dense: bool = False) -> dict:
    """{(layer, tensor name): storage object} for a quantized graph.

    ``force_dense`` stores every INT8 tensor dense regardless of sparsity.
    """
    cfg = {} if force_dense else graph.sparse_configs() if cfg is None else cfg
    out = {}
    for i, layer in enumerate(graph.layers):
        for name in tensor_names(layer.kind):
            if name not in layer.tensors:
                raise ValueError(f"layer {i} ({layer.name}) is missing tensor {name!r}")
            out[(i, name)] = store_tensor(name, layer.tensors[name], layer.kind, cfg.get(i))
    return out


def stored_nbytes(stored) -> int:
    if isinstance(stored, (EncodedWeights, DenseWeights)):
        return stored.nbytes
    return int(np.asarray(stored).nbytes)


def estimate_tensor_bytes(name: str, n: int, kind, cfg: SparseConfig | None) -> int:
    """Analytic stored size (no padding records) for a tensor of ``n`` values."""
    if tensor_dtype(name) == "i32":
        return 4 * n
    if cfg is None or name not in prunable_tensors(kind):
        return n
    b = cfg.block_size
    kept = n // b - pruned_block_count(n, cfg)
    sparse = kept * (1 + b) + n % b
    return sparse if sparse < n else n


def tensor_bytes(graph: ModelGraph, cfg: Mapping[int, SparseConfig] | None = None) -> dict:
    """{(layer, name): stored bytes}; exact for quantized INT8 weights, analytic otherwise."""
    cfg = graph.sparse_configs() if cfg is None else cfg
    out = {}
    for i, (layer, shapes) in enumerate(zip(graph.layers, tensor_shapes(graph))):
        for name in tensor_names(layer.kind):
            n = math.prod(shapes[name])
            arr = layer.tensors.get(name)
            c = cfg.get(i)
            if (arr is not None and c is not None and name in prunable_tensors(layer.kind)
                    and np.asarray(arr).dtype == np.int8):
                out[(i, name)] = store_tensor(name, arr, layer.kind, c).nbytes
            else:
                out[(i, name)] = estimate_tensor_bytes(name, n, layer.kind, c)
    return out


def metadata_bytes(graph: ModelGraph, n_scratch: int) -> int:
    """Everything but the blobs: header, layer table, descriptors, qparams, memory plan."""
    n = len(graph.layers)
    n_tensors = sum(len(tensor_names(l.kind)) for l in graph.layers)
    n_qparams = sum(len(qparam_names(l.kind)) for l in graph.layers)
    plan = PLAN_HEADER_BYTES + PLAN_ENTRY_BYTES * ((n + 1 if n else 0) + n_scratch)
    return (HEADER_BYTES + LAYER_RECORD_BYTES * n + TENSOR_DESC_BYTES * n_tensors
            + QPARAM_BYTES * n_qparams + plan)


__all__ = ["MAGIC", "VERSION", "HEADER_BYTES", "LAYER_RECORD_BYTES", "TENSOR_DESC_BYTES",
           "QPARAM_BYTES", "PLAN_HEADER_BYTES", "PLAN_ENTRY_BYTES", "FORMAT_DENSE",
           "FORMAT_SPARSE", "FORMAT_RAW", "DTYPE_CODES", "DTYPE_SIZES", "store_tensor",
           "store_tensors", "stored_nbytes", "estimate_tensor_bytes", "tensor_bytes",
           "metadata_bytes"]
