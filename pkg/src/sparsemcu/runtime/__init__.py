from .planner import HEAD, INPUT, TAIL, MemoryPlan, Placement, plan_memory, scratch_bytes
from .resources import LUT_RESERVE, Budgets, ResourceReport, resource_eval
from .executor import (CompiledModel, ExecutionStats, compile_model, run_in_memory, run_inference,
                       run_layer)
from .package import DeployPackage, emit_package, load_package, package_report, read_header

__all__ = [
    "HEAD", "INPUT", "TAIL", "MemoryPlan", "Placement", "plan_memory", "scratch_bytes",
    "LUT_RESERVE", "Budgets", "ResourceReport", "resource_eval", "CompiledModel",
    "ExecutionStats", "compile_model", "run_in_memory", "run_inference", "run_layer",
    "DeployPackage", "emit_package", "load_package", "package_report", "read_header",
]
