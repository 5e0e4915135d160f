"""Accuracy evaluators.  Training is out of scope, so scores come from a
deterministic surrogate, a Python callable, or an external command."""
from __future__ import annotations

import json
import math
import subprocess
import tempfile
from pathlib import Path
from typing import Callable, Mapping, Protocol

from ..ir.graph import count_params
from ..ir.modelfile import save_model
from ..ir.types import ModelGraph, SparseConfig


class AccuracyEvaluator(Protocol):
    def evaluate(self, model: ModelGraph, sparse_cfg: Mapping[int, SparseConfig]) -> float: ...

    def train_hint(self, epochs: int) -> None: ...


class SurrogateEvaluator:
    """Score peaks when the dense parameter count hits ``target_params`` and
    falls with the fraction of weights pruned.

    score = base + gain * exp(-ln(P / target)**2 / (2 width**2)) - penalty * pruned_fraction**2
    clipped to [0, 1].  Pure function of the architecture and sparse config.
    """

    def __init__(self, target_params: float = 300_000, width: float = 1.0, base: float = 0.5,
                 gain: float = 0.45, sparsity_penalty: float = 0.2):
        self.target_params = float(target_params)
        self.width = float(width)
        self.base, self.gain, self.sparsity_penalty = float(base), float(gain), float(sparsity_penalty)
        self.epochs_hinted = 0

    def train_hint(self, epochs: int) -> None:
        self.epochs_hinted += int(epochs)

    def evaluate(self, model: ModelGraph, sparse_cfg: Mapping[int, SparseConfig]) -> float:
        dense = count_params(model, {}, effective=False)
        eff = count_params(model, sparse_cfg, effective=True)
        pruned = 1.0 - eff / dense if dense else 0.0
        fit = math.exp(-math.log(max(dense, 1) / self.target_params) ** 2 / (2 * self.width ** 2))
        return min(1.0, max(0.0, self.base + self.gain * fit - self.sparsity_penalty * pruned ** 2))


class CallableEvaluator:
    def __init__(self, fn: Callable[[ModelGraph, Mapping[int, SparseConfig]], float],
                 train_fn: Callable[[int], None] | None = None):
        self.fn, self.train_fn = fn, train_fn

    def evaluate(self, model, sparse_cfg) -> float:
        return float(self.fn(model, sparse_cfg))

    def train_hint(self, epochs: int) -> None:
        if self.train_fn is not None:
            self.train_fn(epochs)


class CommandEvaluator:
    """Runs ``argv + [model.json, sparse_cfg.json]`` and reads an accuracy from stdout.

    The model file is the standard model description (with weights sidecar);
    the config file maps layer indices to ``{"sparsity", "block_size"}``.
    ``train_hint`` runs ``train_argv + [epochs]`` when given.
    """

    def __init__(self, argv: list[str], train_argv: list[str] | None = None, timeout: float = 600):
        self.argv, self.train_argv, self.timeout = list(argv), train_argv, timeout

    def train_hint(self, epochs: int) -> None:
        if self.train_argv:
            subprocess.run(self.train_argv + [str(epochs)], check=True, timeout=self.timeout,
                           capture_output=True)

    def evaluate(self, model, sparse_cfg) -> float:
        with tempfile.TemporaryDirectory() as d:
            mpath = save_model(model, Path(d) / "model.json")
            cpath = Path(d) / "sparse_cfg.json"
            cpath.write_text(json.dumps({str(i): c.to_dict() for i, c in sorted(sparse_cfg.items())}))
            res = subprocess.run(self.argv + [str(mpath), str(cpath)], check=True,
                                 capture_output=True, text=True, timeout=self.timeout)
        lines = res.stdout.strip().splitlines()
        if not lines:
            raise RuntimeError(f"evaluator command {self.argv} printed nothing")
        return float(lines[-1])


def evaluator_from_dict(doc: Mapping | None):
    doc = dict(doc or {})
    kind = doc.pop("type", "surrogate")
    if kind == "surrogate":
        return SurrogateEvaluator(**doc)
    if kind == "command":
        return CommandEvaluator(doc["argv"], doc.get("train_argv"), doc.get("timeout", 600))
    raise ValueError(f"unknown evaluator type {kind!r}")


__all__ = ["AccuracyEvaluator", "SurrogateEvaluator", "CallableEvaluator", "CommandEvaluator",
           "evaluator_from_dict"]
