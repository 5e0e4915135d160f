"""Model description files.

A model is a JSON document::

    {"format": "sparsemcu-model", "version": 1,
     "input_shape": [32, 32, 3],
     "input_qparams": {"scale": 0.0078, "zero_point": 0},      # optional
     "weights": "model.bin",                                    # sidecar, optional
     "sparse_cfg": {"sparsity": 0.75, "block_size": 4},         # default, optional
     "layers": [
        {"kind": "Conv3x3", "name": "stem", "attrs": {"out_channels": 16, "stride": 2},
         "inputs": [-1],
         "tensors": {"weight": {"dtype": "f32", "shape": [16, 3, 3, 3],
                                "offset": 0, "length": 1728}},
         "qparams": {"out": {"scale": 0.05, "zero_point": -128}},
         "sparse_cfg": {"sparsity": 0.5, "block_size": 2}}]}

Tensor blobs live in the sidecar file, little-endian, addressed by byte
offset and length.  Everything optional may be omitted: a file without
``weights`` describes an architecture only.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from .types import LayerKind, LayerSpec, ModelGraph, QuantParams, SparseConfig

FORMAT = "sparsemcu-model"

DTYPES = {"i8": np.dtype("<i1"), "i16": np.dtype("<i2"), "i32": np.dtype("<i4"),
          "f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(v).str: k for k, v in DTYPES.items()}


def _dtype_name(a: np.ndarray) -> str:
    key = a.dtype.newbyteorder("<").str if a.dtype.itemsize > 1 else a.dtype.str
    if key not in _DTYPE_NAMES:
        if np.issubdtype(a.dtype, np.floating):
            return "f32"
        raise ValueError(f"unsupported tensor dtype {a.dtype}")
    return _DTYPE_NAMES[key]


def graph_to_dict(graph: ModelGraph, weights_name: str | None = None) -> tuple[dict, bytes]:
    """Serialize a graph; returns the JSON document and the sidecar blob."""
    blob = bytearray()
    layers = []
    for layer in graph.layers:
        entry = {"kind": layer.kind.value, "name": layer.name,
                 "attrs": dict(layer.attrs), "inputs": list(layer.inputs)}
        if layer.tag:
            entry["tag"] = layer.tag
        if layer.tensors:
            ts = {}
            for name, arr in layer.tensors.items():
                dt = _dtype_name(arr)
                raw = np.ascontiguousarray(arr, dtype=DTYPES[dt]).tobytes()
                ts[name] = {"dtype": dt, "shape": list(arr.shape),
                            "offset": len(blob), "length": len(raw)}
                blob += raw
            entry["tensors"] = ts
        if layer.qparams:
            entry["qparams"] = {k: q.to_dict() for k, q in layer.qparams.items()}
        if layer.sparse_cfg is not None:
            entry["sparse_cfg"] = layer.sparse_cfg.to_dict()
        layers.append(entry)
    doc = {"format": FORMAT, "version": 1, "name": graph.name,
           "input_shape": list(graph.input_shape)}
    if graph.input_qparams is not None:
        doc["input_qparams"] = graph.input_qparams.to_dict()
    if blob:
        doc["weights"] = weights_name or "weights.bin"
    doc["layers"] = layers
    return doc, bytes(blob)


def save_model(graph: ModelGraph, path) -> Path:
    """Write ``path`` (JSON) and, if the graph has tensors, a ``.bin`` sidecar next to it."""
    path = Path(path)
    weights_name = path.with_suffix(".bin").name
    doc, blob = graph_to_dict(graph, weights_name)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    if blob:
        (path.parent / weights_name).write_bytes(blob)
    return path


def _req(d: dict, key: str, where: str, typ=None):
    if not isinstance(d, dict):
        raise ModelFormatError(where, "expected an object")
    if key not in d:
        raise ModelFormatError(f"{where}.{key}" if where else key, "missing required field")
    v = d[key]
    if typ is not None and not isinstance(v, typ):
        raise ModelFormatError(f"{where}.{key}" if where else key,
                               f"expected {typ.__name__ if isinstance(typ, type) else typ}, got {type(v).__name__}")
    return v


def _qparams(d, where) -> QuantParams:
    try:
        return QuantParams(float(_req(d, "scale", where)), int(d.get("zero_point", 0)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(where, str(exc)) from None


def _sparse_cfg(d, where) -> SparseConfig:
    try:
        return SparseConfig(float(_req(d, "sparsity", where)), int(_req(d, "block_size", where)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(where, str(exc)) from None


def parse_json_text(text: str, source: str = "<input>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{source}:{exc.lineno}:{exc.colno}", exc.msg) from None


def graph_from_dict(doc: dict, blob: bytes | None = None) -> ModelGraph:
    if not isinstance(doc, dict):
        raise ModelFormatError("document", "expected a JSON object")
    fmt = doc.get("format", FORMAT)
    if fmt != FORMAT:
        raise ModelFormatError("format", f"expected {FORMAT!r}, got {fmt!r}")
    shape = _req(doc, "input_shape", "", list)
    if not shape or not all(isinstance(s, int) and s > 0 for s in shape):
        raise ModelFormatError("input_shape", "expected a list of positive integers")
    default_cfg = _sparse_cfg(doc["sparse_cfg"], "sparse_cfg") if "sparse_cfg" in doc else None
    raw_layers = _req(doc, "layers", "", list)
    layers = []
    for i, ld in enumerate(raw_layers):
        where = f"layers[{i}]"
        kind_s = _req(ld, "kind", where, str)
        try:
            kind = LayerKind(kind_s)
        except ValueError:
            raise ModelFormatError(f"{where}.kind", f"unknown layer kind {kind_s!r}") from None
        attrs = ld.get("attrs", {})
        if not isinstance(attrs, dict):
            raise ModelFormatError(f"{where}.attrs", "expected an object")
        inputs = ld.get("inputs")
        if inputs is not None and not (isinstance(inputs, list)
                                       and all(isinstance(x, int) for x in inputs)):
            raise ModelFormatError(f"{where}.inputs", "expected a list of layer indices")
        tensors = {}
        for tname, td in ld.get("tensors", {}).items():
            tw = f"{where}.tensors.{tname}"
            if blob is None:
                raise ModelFormatError(tw, "tensor references a weights file that was not provided")
            dt = _req(td, "dtype", tw, str)
            if dt not in DTYPES:
                raise ModelFormatError(f"{tw}.dtype", f"unknown dtype {dt!r}")
            tshape = _req(td, "shape", tw, list)
            off = _req(td, "offset", tw, int)
            length = _req(td, "length", tw, int)
            n = int(np.prod(tshape, dtype=np.int64)) * DTYPES[dt].itemsize
            if length != n:
                raise ModelFormatError(f"{tw}.length", f"{length} bytes does not match shape {tshape}")
            if off < 0 or off + length > len(blob):
                raise ModelFormatError(f"{tw}.offset", "blob reference beyond end of weights file")
            arr = np.frombuffer(blob, dtype=DTYPES[dt], count=n // DTYPES[dt].itemsize, offset=off)
            tensors[tname] = arr.reshape(tshape).astype(DTYPES[dt].newbyteorder("="))
        qparams = {k: _qparams(q, f"{where}.qparams.{k}") for k, q in ld.get("qparams", {}).items()}
        cfg = _sparse_cfg(ld["sparse_cfg"], f"{where}.sparse_cfg") if ld.get("sparse_cfg") else None
        layers.append(LayerSpec(kind, attrs, name=ld.get("name", ""), inputs=inputs,
                                tensors=tensors, qparams=qparams, sparse_cfg=cfg,
                                tag=ld.get("tag", "")))
    in_q = _qparams(doc["input_qparams"], "input_qparams") if "input_qparams" in doc else None
    graph = ModelGraph(tuple(shape), tuple(layers), in_q, doc.get("name", "model"))
    if default_cfg is not None:
        from .graph import default_block_size, is_prunable
        graph = graph.with_layers(
            l if l.sparse_cfg is not None or not is_prunable(l.kind) else
            l.replace(sparse_cfg=SparseConfig(default_cfg.sparsity,
                                              default_block_size(l.kind, default_cfg.block_size)))
            for l in graph.layers)
    return graph


def load_model(path) -> ModelGraph:
    """Read a model file (and its weights sidecar, when referenced)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFormatError(str(path), exc.strerror or str(exc)) from None
    doc = parse_json_text(text, str(path))
    blob = None
    if isinstance(doc, dict) and doc.get("weights"):
        wpath = path.parent / doc["weights"]
        try:
            blob = wpath.read_bytes()
        except OSError as exc:
            raise ModelFormatError("weights", f"cannot read {wpath}: {exc.strerror}") from None
    return graph_from_dict(doc, blob)
