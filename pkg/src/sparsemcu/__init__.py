"""Sparse INT8 model toolkit: coding, quantization, kernels, planning, packaging and search."""

__version__ = "0.1.0"
