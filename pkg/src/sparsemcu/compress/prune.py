"""Blockwise magnitude pruning and the gradual (cubic) sparsity schedule."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import OutOfWindow
from ..ir.graph import pruned_block_count
from ..ir.layers import prunable_tensors
from ..ir.types import ModelGraph, SparseConfig


@dataclass(frozen=True)
class PruneMask:
    """Keep-map over the aligned blocks of one tensor (True = kept)."""

    kept: np.ndarray
    block_size: int

    @property
    def n_blocks(self) -> int:
        return int(self.kept.size)

    @property
    def n_kept(self) -> int:
        return int(np.count_nonzero(self.kept))


def prune_blockwise(weights, cfg: SparseConfig) -> tuple[np.ndarray, PruneMask]:
    """Zero the ``floor(rho * n_blocks)`` aligned blocks of smallest L1 norm.

    Ties prune the lower index first.  A trailing partial block (length not a
    multiple of the block size) is never pruned.  Returns the pruned copy with
    the input's shape and dtype, and the block mask.
    """
    w = np.asarray(weights)
    flat = w.ravel().copy()
    b = cfg.block_size
    n_blocks = flat.size // b
    blocks = flat[:n_blocks * b].reshape(n_blocks, b)
    norms = np.abs(blocks.astype(np.float64)).sum(axis=1)
    n_prune = pruned_block_count(flat.size, cfg)
    kept = np.ones(n_blocks, dtype=bool)
    if n_prune:
        order = np.argsort(norms, kind="stable")
        kept[order[:n_prune]] = False
        blocks[~kept] = 0
    return flat.reshape(w.shape), PruneMask(kept, b)


def prune_graph(graph: ModelGraph, cfg: Mapping[int, SparseConfig] | None = None
                ) -> tuple[ModelGraph, dict[tuple[int, str], PruneMask]]:
    """One-shot prune every prunable tensor of every layer that has a sparse config."""
    cfg = graph.sparse_configs() if cfg is None else cfg
    layers, masks = [], {}
    for i, layer in enumerate(graph.layers):
        c = cfg.get(i)
        if c is None or not layer.tensors:
            layers.append(layer if c is None else layer.replace(sparse_cfg=c))
            continue
        tensors = dict(layer.tensors)
        for name in prunable_tensors(layer.kind):
            if name in tensors:
                tensors[name], masks[(i, name)] = prune_blockwise(tensors[name], c)
        layers.append(layer.replace(tensors=tensors, sparse_cfg=c))
    return graph.with_layers(layers), masks


@dataclass(frozen=True)
class AGPSchedule:
    s_init: float
    s_final: float
    t0: int = 0
    n_steps: int = 10
    delta_t: int = 1

    def __post_init__(self):
        if not 0 <= self.s_init <= self.s_final < 1:
            raise ValueError("need 0 <= s_init <= s_final < 1")
        if self.n_steps < 1 or self.delta_t < 1:
            raise ValueError("n_steps and delta_t must be positive")

    @property
    def t_end(self) -> int:
        return self.t0 + self.n_steps * self.delta_t

    def steps(self):
        """Pruning steps (t, target sparsity) from t0 through the end of the ramp."""
        for k in range(self.n_steps + 1):
            t = self.t0 + k * self.delta_t
            yield t, agp_target_sparsity(self, t)


def agp_target_sparsity(sched: AGPSchedule, t) -> float:
    """Cubic ramp s_f + (s_i - s_f) * (1 - (t - t0) / (n * dt))**3, clamped to [s_i, s_f].

    Steps before ``t0`` warn with OutOfWindow and return s_i.
    """
    if t < sched.t0:
        warnings.warn(f"step {t} precedes schedule start {sched.t0}", OutOfWindow, stacklevel=2)
        return sched.s_init
    frac = min(1.0, (t - sched.t0) / (sched.n_steps * sched.delta_t))
    if frac == 0.0:
        return sched.s_init         # exact; the cubic form can land an ulp above
    s = sched.s_final + (sched.s_init - sched.s_final) * (1.0 - frac) ** 3
    return float(min(max(s, sched.s_init), sched.s_final))


def iterative_prune(graph: ModelGraph, cfg: Mapping[int, SparseConfig], sched_factory,
                    on_step=None) -> ModelGraph:
    """Prune gradually along per-layer schedules, calling ``on_step(t)`` between steps.

    ``sched_factory(final_sparsity)`` builds the schedule for one layer.  The
    last step prunes exactly to the configured sparsity.
    """
    scheds = {i: sched_factory(c.sparsity) for i, c in cfg.items()}
    if not scheds:
        return graph
    t_points = sorted({t for s in scheds.values() for t, _ in s.steps()})
    current = graph
    for t in t_points:
        step_cfg = {}
        for i, c in cfg.items():
            s = agp_target_sparsity(scheds[i], t) if t >= scheds[i].t0 else scheds[i].s_init
            step_cfg[i] = SparseConfig(s, c.block_size)
        current, _ = prune_graph(current, step_cfg)
        if on_step is not None:
            on_step(t)
    # land exactly on the requested configs
    current, _ = prune_graph(current, cfg)
    return current


def sparsity_of(n_elements: int, cfg: SparseConfig) -> float:
    """Realized fraction of pruned weights for a tensor of ``n_elements``."""
    if n_elements == 0:
        return 0.0
    return pruned_block_count(n_elements, cfg) * cfg.block_size / n_elements


__all__ = ["PruneMask", "prune_blockwise", "prune_graph", "AGPSchedule", "agp_target_sparsity",
           "iterative_prune", "sparsity_of"]
