from .stats import OpCounter
from .simd import dual_mac, pack16x2, paired_mac, scalar_mac2, smlad
from .conv import conv2d_int8, conv_maxpool_int8, dwconv2d_int8, linear_acc, linear_int8
from .layernorm import ScaledLayerNormParams, isqrt, scaled_layernorm, unscaled_layernorm
from .softmax import SoftmaxLUT, softmax_lut, softmax_nolut
from .pooling import add_int8, avgpool2x2, maxpool2x2, relu_int8, seqpool
from .encoder import attention, encoder_forward

__all__ = [
    "OpCounter", "dual_mac", "pack16x2", "paired_mac", "scalar_mac2", "smlad", "conv2d_int8",
    "conv_maxpool_int8", "dwconv2d_int8", "linear_acc", "linear_int8", "ScaledLayerNormParams",
    "isqrt", "scaled_layernorm", "unscaled_layernorm", "SoftmaxLUT", "softmax_lut",
    "softmax_nolut", "add_int8", "avgpool2x2", "maxpool2x2", "relu_int8", "seqpool",
    "attention", "encoder_forward",
]
