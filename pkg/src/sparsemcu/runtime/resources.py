"""Storage and peak-memory accounting against hardware budgets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from ..ir.graph import infer_shapes
from ..ir.types import ModelGraph, SparseConfig
from .layout import metadata_bytes, tensor_bytes
from .planner import MemoryPlan, plan_memory

DEFAULT_STORAGE_BUDGET = 1 << 20        # 1 MB flash
DEFAULT_MEMORY_BUDGET = 320 * 1024      # 320 KB SRAM
LUT_RESERVE = 1228                      # softmax exp table + bitmap, reserved in SRAM


@dataclass(frozen=True)
class Budgets:
    storage: int = DEFAULT_STORAGE_BUDGET
    memory: int = DEFAULT_MEMORY_BUDGET


@dataclass(frozen=True)
class ResourceReport:
    storage_bytes: int
    peak_memory_bytes: int
    storage_limit: int
    memory_limit: int
    arena_bytes: int = 0
    metadata_bytes: int = 0
    layer_bytes: tuple = ()
    plan: MemoryPlan | None = field(default=None, compare=False, repr=False)

    @property
    def fits_storage(self) -> bool:
        return self.storage_bytes <= self.storage_limit

    @property
    def fits_memory(self) -> bool:
        return self.peak_memory_bytes <= self.memory_limit

    @property
    def fits(self) -> tuple[bool, bool]:
        return self.fits_storage, self.fits_memory

    @property
    def ok(self) -> bool:
        return self.fits_storage and self.fits_memory

    def to_dict(self) -> dict:
        return {"storage_bytes": self.storage_bytes, "peak_memory_bytes": self.peak_memory_bytes,
                "storage_limit": self.storage_limit, "memory_limit": self.memory_limit,
                "arena_bytes": self.arena_bytes, "fits_storage": self.fits_storage,
                "fits_memory": self.fits_memory}


def resource_eval(graph: ModelGraph, cfg: Mapping[int, SparseConfig] | None = None,
                  budgets: Budgets = Budgets(), plan: MemoryPlan | None = None) -> ResourceReport:
    """Package size and peak SRAM of ``graph`` pruned/coded per ``cfg``.

    Storage is the exact size of the deployment package: per-layer stored
    tensors (smaller of dense and sparse coding), plus header, layer table,
    tensor descriptors, qparams and the memory plan.  Memory is the planned
    arena plus the softmax table reserve.
    """
    graph = infer_shapes(graph)
    plan = plan_memory(graph) if plan is None else plan
    sizes = tensor_bytes(graph, cfg)
    per_layer = [0] * len(graph.layers)
    for (i, _), nb in sizes.items():
        per_layer[i] += nb
    meta = metadata_bytes(graph, len(plan.scratch))
    return ResourceReport(
        storage_bytes=meta + sum(per_layer),
        peak_memory_bytes=plan.arena_size + LUT_RESERVE,
        storage_limit=budgets.storage, memory_limit=budgets.memory,
        arena_bytes=plan.arena_size, metadata_bytes=meta, layer_bytes=tuple(per_layer),
        plan=plan)


__all__ = ["DEFAULT_STORAGE_BUDGET", "DEFAULT_MEMORY_BUDGET", "LUT_RESERVE", "Budgets",
           "ResourceReport", "resource_eval"]
