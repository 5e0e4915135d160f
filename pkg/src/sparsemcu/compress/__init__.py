from .quant import (calibrate_activation, calibrate_ptq, quantize_multiplier, requantize,
                    requantize_scaled, requantize_to, rescale_add, round_half_away, rounding_shift)
from .prune import (AGPSchedule, PruneMask, agp_target_sparsity, iterative_prune, prune_blockwise,
                    prune_graph, sparsity_of)
from .reference import init_float_weights
from .calibrate import LN_SHIFT, quantize_graph, synthetic_inputs

__all__ = [
    "calibrate_activation", "calibrate_ptq", "quantize_multiplier", "requantize",
    "requantize_scaled", "requantize_to", "rescale_add", "round_half_away", "rounding_shift",
    "AGPSchedule", "PruneMask", "agp_target_sparsity", "iterative_prune", "prune_blockwise",
    "prune_graph", "sparsity_of", "init_float_weights", "LN_SHIFT", "quantize_graph",
    "synthetic_inputs",
]
