"""Core IR values: quantization params, INT8 tensors, layers and graphs."""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

INT8_MIN, INT8_MAX = -128, 127


class LayerKind(str, enum.Enum):
    CONV3X3 = "Conv3x3"
    CONV1X1 = "Conv1x1"
    DWCONV3X3 = "DWConv3x3"
    LINEAR = "Linear"
    MAXPOOL = "MaxPool2x2"
    AVGPOOL = "AvgPool2x2"
    SEQPOOL = "SeqPool"
    CONV_MAXPOOL = "ConvMaxPool"
    ENCODER = "Encoder"
    LAYERNORM = "ScaledLayerNorm"
    SOFTMAX = "Softmax"
    RELU = "ReLU"
    ADD = "ResidualAdd"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class QuantParams:
    """Affine INT8 quantization: real = scale * (q - zero_point).

    The scale is snapped to the nearest float32 so that a model serialized
    into a package requantizes with exactly the same multipliers.
    """

    scale: float
    zero_point: int = 0

    def __post_init__(self):
        s = float(np.float32(self.scale))
        if not (math.isfinite(s) and s > 0):
            raise ValueError(f"quantization scale must be positive, got {self.scale!r}")
        zp = int(self.zero_point)
        if not INT8_MIN <= zp <= INT8_MAX:
            raise ValueError(f"zero point {zp} outside [-128, 127]")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "zero_point", zp)

    def quantize(self, x) -> np.ndarray:
        q = np.asarray(x, dtype=np.float64) / self.scale
        q = np.sign(q) * np.floor(np.abs(q) + 0.5) + self.zero_point
        return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)

    def dequantize(self, q) -> np.ndarray:
        return self.scale * (np.asarray(q, dtype=np.float64) - self.zero_point)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "zero_point": self.zero_point}


# Softmax probabilities always use this encoding: [0, 1] over the full INT8 range.
SOFTMAX_QPARAMS = QuantParams(1.0 / 256.0, -128)


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TensorI8:
    shape: tuple
    data: np.ndarray
    qparams: QuantParams

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        data = np.asarray(self.data)
        if data.dtype != np.int8:
            if data.size and (data.min() < INT8_MIN or data.max() > INT8_MAX):
                raise ValueError("TensorI8 values must lie in [-128, 127]")
            data = data.astype(np.int8)
        if math.prod(shape) != data.size:
            raise ValueError(f"shape {shape} does not match {data.size} values")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", _frozen_array(data.reshape(shape)))

    @classmethod
    def from_real(cls, x, qparams: QuantParams) -> "TensorI8":
        x = np.asarray(x)
        return cls(x.shape, qparams.quantize(x), qparams)

    def dequantize(self) -> np.ndarray:
        return self.qparams.dequantize(self.data)

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __eq__(self, other):
        if not isinstance(other, TensorI8):
            return NotImplemented
        return (self.shape == other.shape and self.qparams == other.qparams
                and np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"TensorI8(shape={self.shape}, qparams={self.qparams})"


@dataclass(frozen=True)
class SparseConfig:
    """Per-layer pruning/coding configuration: sparsity and block size."""

    sparsity: float
    block_size: int

    def __post_init__(self):
        rho = float(self.sparsity)
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"sparsity must lie in [0, 1), got {rho}")
        if int(self.block_size) not in (2, 3, 4):
            raise ValueError(f"block size must be 2, 3 or 4, got {self.block_size}")
        object.__setattr__(self, "sparsity", rho)
        object.__setattr__(self, "block_size", int(self.block_size))

    def to_dict(self) -> dict:
        return {"sparsity": self.sparsity, "block_size": self.block_size}


def _arrays_equal(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray]) -> bool:
    if a.keys() != b.keys():
        return False
    return all(a[k].dtype == b[k].dtype and np.array_equal(a[k], b[k]) for k in a)


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One typed layer.

    ``inputs`` lists producer layer indices, ``-1`` being the graph input; when
    left as ``None`` the graph wires the layer to its predecessor.  ``tensors``
    holds weight arrays (INT8 weights and INT32 biases once quantized, float
    arrays before), ``qparams`` the named quantization parameters.
    """

    kind: LayerKind
    attrs: Mapping[str, Any] = field(default_factory=dict)
    name: str = ""
    inputs: tuple | None = None
    tensors: Mapping[str, np.ndarray] = field(default_factory=dict)
    qparams: Mapping[str, QuantParams] = field(default_factory=dict)
    sparse_cfg: SparseConfig | None = None
    out_shape: tuple | None = None
    tag: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "attrs", dict(self.attrs))
        if self.inputs is not None:
            object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))
        object.__setattr__(self, "tensors",
                           {k: _frozen_array(v) for k, v in self.tensors.items()})
        object.__setattr__(self, "qparams", dict(self.qparams))
        if self.out_shape is not None:
            object.__setattr__(self, "out_shape", tuple(int(d) for d in self.out_shape))

    def attr(self, key: str, default=None):
        return self.attrs.get(key, default)

    def replace(self, **changes) -> "LayerSpec":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (self.kind == other.kind and self.attrs == other.attrs
                and self.name == other.name and self.inputs == other.inputs
                and self.qparams == other.qparams and self.sparse_cfg == other.sparse_cfg
                and self.out_shape == other.out_shape and self.tag == other.tag
                and _arrays_equal(self.tensors, other.tensors))


@dataclass(frozen=True, eq=False)
class ModelGraph:
    """Sequential graph with explicit residual edges.

    Layers execute in list order; the last layer is the output.
    """

    input_shape: tuple
    layers: tuple = ()
    input_qparams: QuantParams | None = None
    name: str = "model"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        wired = []
        for i, layer in enumerate(self.layers):
            if layer.inputs is None:
                layer = layer.replace(inputs=(i - 1,))
            if not layer.name:
                layer = layer.replace(name=f"{layer.kind.value.lower()}_{i}")
            wired.append(layer)
        object.__setattr__(self, "layers", tuple(wired))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(src, dst) for dst, layer in enumerate(self.layers) for src in layer.inputs]

    def consumers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {i: [] for i in range(-1, len(self.layers))}
        for src, dst in self.edges:
            out.setdefault(src, []).append(dst)
        return out

    @property
    def output_shape(self) -> tuple:
        if not self.layers:
            return self.input_shape
        return self.layers[-1].out_shape

    def shape_of(self, index: int) -> tuple:
        return self.input_shape if index < 0 else self.layers[index].out_shape

    def replace(self, **changes) -> "ModelGraph":
        return dataclasses.replace(self, **changes)

    def with_layers(self, layers) -> "ModelGraph":
        return dataclasses.replace(self, layers=tuple(layers))

    def sparse_configs(self) -> dict[int, SparseConfig]:
        return {i: l.sparse_cfg for i, l in enumerate(self.layers) if l.sparse_cfg is not None}

    def with_sparse_configs(self, cfg: Mapping[int, SparseConfig | None]) -> "ModelGraph":
        return self.with_layers(
            l.replace(sparse_cfg=cfg.get(i, l.sparse_cfg)) for i, l in enumerate(self.layers))

    def __eq__(self, other):
        if not isinstance(other, ModelGraph):
            return NotImplemented
        return (self.input_shape == other.input_shape and self.layers == other.layers
                and self.input_qparams == other.input_qparams and self.name == other.name)

    def __len__(self):
        return len(self.layers)
