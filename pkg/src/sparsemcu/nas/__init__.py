from .space import (PRESETS, AGPConfig, Iterations, SearchSpace, enumerate_supernets, load_space,
                    sample_sparse_config, sample_supernet, space_from_dict, sparse_groups)
from .evaluators import (AccuracyEvaluator, CallableEvaluator, CommandEvaluator,
                         SurrogateEvaluator, evaluator_from_dict)
from .search import (SearchLog, SinglePathResult, SupernetResult, accept_search_space,
                     analyze_search_space, search_single_path, search_supernet, test_supernet)

__all__ = [
    "PRESETS", "AGPConfig", "Iterations", "SearchSpace", "enumerate_supernets", "load_space",
    "sample_sparse_config", "sample_supernet", "space_from_dict", "sparse_groups",
    "AccuracyEvaluator", "CallableEvaluator", "CommandEvaluator", "SurrogateEvaluator",
    "evaluator_from_dict", "SearchLog", "SinglePathResult", "SupernetResult",
    "accept_search_space", "analyze_search_space", "search_single_path", "search_supernet",
    "test_supernet",
]
