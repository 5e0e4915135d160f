from .types import (INT8_MAX, INT8_MIN, SOFTMAX_QPARAMS, LayerKind, LayerSpec, ModelGraph,
                    QuantParams, SparseConfig, TensorI8)
from .graph import (Violation, count_params, default_block_size, infer_shapes, is_prunable,
                    pruned_block_count, tensor_shapes, validate_graph)
from .layers import prunable_tensors, qparam_names, tensor_names
from .supernet import (ChoiceBlock, PathChoice, SupernetSpec, build_single_path, dot_supernet,
                       enumerate_path_choices, sample_path_choices, sample_single_path,
                       supernet_violations)
from .modelfile import load_model, save_model

__all__ = [
    "INT8_MAX", "INT8_MIN", "SOFTMAX_QPARAMS", "LayerKind", "LayerSpec", "ModelGraph",
    "QuantParams", "SparseConfig", "TensorI8", "Violation", "count_params", "default_block_size",
    "infer_shapes", "is_prunable", "pruned_block_count", "tensor_shapes", "validate_graph",
    "prunable_tensors", "qparam_names", "tensor_names", "ChoiceBlock", "PathChoice",
    "SupernetSpec", "build_single_path", "dot_supernet", "enumerate_path_choices",
    "sample_path_choices", "sample_single_path", "supernet_violations", "load_model",
    "save_model",
]
