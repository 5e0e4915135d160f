"""Search-space configuration and the samplers built on it."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from ..ir.graph import default_block_size, is_prunable
from ..ir.modelfile import parse_json_text
from ..ir.supernet import SupernetSpec, dot_supernet
from ..ir.types import ModelGraph, SparseConfig
from ..runtime.resources import Budgets

CONFIG_FORMAT = "sparsemcu-search"

STAGE_KEYS = ("down", "mbv2", "mbv2_repeats", "dim", "tr_repeats")

# Channel ranges per DoT stack.  The three presets differ only in model size.
PRESETS = {
    "small": [
        dict(down=(8, 12, 16), mbv2=(8, 12, 16), mbv2_repeats=(1, 2), dim=(16, 24, 32), tr_repeats=(1,)),
        dict(down=(16, 24, 32), mbv2=(16, 24, 32), mbv2_repeats=(1, 2), dim=(32, 48, 64), tr_repeats=(1,)),
    ],
    "normal": [
        dict(down=(24, 32, 48), mbv2=(32, 48, 64), mbv2_repeats=(2,), dim=(44, 64, 88), tr_repeats=(1,)),
        dict(down=(64, 80, 96), mbv2=(96, 112, 128), mbv2_repeats=(2,), dim=(224, 240, 256), tr_repeats=(1,)),
    ],
    "large": [
        dict(down=(32, 48, 64), mbv2=(64, 96, 128), mbv2_repeats=(2, 3), dim=(96, 128, 192), tr_repeats=(1, 2)),
        dict(down=(128, 192, 256), mbv2=(192, 256, 320), mbv2_repeats=(2, 3), dim=(256, 320, 384), tr_repeats=(2, 3)),
    ],
}


@dataclass(frozen=True)
class AGPConfig:
    t0: int = 0
    n_steps: int = 4
    delta_t: int = 1


@dataclass(frozen=True)
class Iterations:
    analyze: int = 100          # T_sup
    supernets: int = 4          # T_i
    paths: int = 2              # T_j
    configs: int = 2            # T_k
    single_path: int = 8        # T_sin
    test_samples: int = 100     # paths drawn by the supernet memory test


@dataclass(frozen=True)
class SearchSpace:
    input_shape: tuple = (32, 32, 3)
    num_classes: int = 10
    stages: tuple = field(default_factory=lambda: tuple(PRESETS["normal"]))
    sparsity_options: tuple = (0.0, 0.25, 0.5, 0.75)
    block_size_options: tuple = (2, 4)
    sparsity_granularity: str = "block"
    budgets: Budgets = Budgets()
    lambda_lo: float = 0.8
    lambda_up: float = 2.8
    supernet_window: int = 2
    iterations: Iterations = Iterations()
    seed: int = 0
    agp: AGPConfig = AGPConfig()
    mlp_ratio: int = 2

    def __post_init__(self):
        if not self.lambda_lo < self.lambda_up:
            raise ValueError("lambda_lo must be below lambda_up")
        if not self.sparsity_options or any(not 0 <= r < 1 for r in self.sparsity_options):
            raise ValueError("sparsity options must lie in [0, 1)")
        if not self.block_size_options or any(b not in (2, 4) for b in self.block_size_options):
            raise ValueError("block size options must be 2 or 4")
        if self.sparsity_granularity not in ("block", "model"):
            raise ValueError("sparsity_granularity must be 'block' or 'model'")
        if self.supernet_window < 1:
            raise ValueError("supernet_window must be positive")
        stages = tuple({k: tuple(int(v) for v in st[k]) for k in STAGE_KEYS if k in st}
                       for st in self.stages)
        for st in stages:
            for k in ("down", "mbv2", "dim"):
                if not st.get(k):
                    raise ValueError(f"stage is missing channel options {k!r}")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "sparsity_options", tuple(float(r) for r in self.sparsity_options))
        object.__setattr__(self, "block_size_options", tuple(int(b) for b in self.block_size_options))

    def _stages_with_ratio(self, stages):
        return [dict(st, mlp_ratio=self.mlp_ratio) for st in stages]

    def full_supernet(self) -> SupernetSpec:
        """Supernet spanning every option of the space."""
        return dot_supernet(self.input_shape, self.num_classes, self._stages_with_ratio(self.stages))


def _window(opts: tuple, width: int, rng: np.random.Generator) -> tuple:
    if len(opts) <= width:
        return opts
    start = int(rng.integers(len(opts) - width + 1))
    return opts[start:start + width]


def sample_supernet(space: SearchSpace, rng) -> SupernetSpec:
    """A supernet whose channel and repeat options are a contiguous window of the space's."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    stages = [{k: _window(st[k], space.supernet_window, rng) for k in st} for st in space.stages]
    return dot_supernet(space.input_shape, space.num_classes, space._stages_with_ratio(stages))


def enumerate_supernets(space: SearchSpace) -> list[SupernetSpec]:
    """Every supernet sample_supernet can return, in a fixed order."""
    import itertools
    w = space.supernet_window
    per_key = []
    for st in space.stages:
        for k in st:
            opts = st[k]
            per_key.append([opts] if len(opts) <= w else
                           [opts[s:s + w] for s in range(len(opts) - w + 1)])
    out = []
    keys = [(si, k) for si, st in enumerate(space.stages) for k in st]
    for combo in itertools.product(*per_key):
        stages = [dict() for _ in space.stages]
        for (si, k), opts in zip(keys, combo):
            stages[si][k] = opts
        out.append(dot_supernet(space.input_shape, space.num_classes,
                                space._stages_with_ratio(stages)))
    return out


def sparse_groups(graph: ModelGraph) -> dict[int, str]:
    """Map each prunable layer to its configuration group (its choice block, or the head)."""
    groups = {}
    for i, layer in enumerate(graph.layers):
        if is_prunable(layer.kind):
            groups[i] = layer.tag.split(":")[0] if layer.tag else "head"
    return groups


def sample_sparse_config(graph: ModelGraph, space: SearchSpace, rng) -> dict[int, SparseConfig]:
    """One (sparsity, block size) per choice block, or one for the whole model.

    Depthwise layers always take block size 3.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    groups = sparse_groups(graph)
    if space.sparsity_granularity == "model":
        names = ["model"]
    else:
        names = sorted(set(groups.values()), key=lambda g: (g == "head", int(g) if g.isdigit() else 0))
    picks = {}
    for g in names:
        rho = space.sparsity_options[int(rng.integers(len(space.sparsity_options)))]
        b = space.block_size_options[int(rng.integers(len(space.block_size_options)))]
        picks[g] = (rho, b)
    cfg = {}
    for i, g in groups.items():
        rho, b = picks["model" if space.sparsity_granularity == "model" else g]
        cfg[i] = SparseConfig(rho, default_block_size(graph.layers[i].kind, b))
    return cfg


def _get(doc: dict, key: str, typ, default, where: str = ""):
    path = f"{where}.{key}" if where else key
    if key not in doc:
        return default
    v = doc[key]
    ok = isinstance(v, typ) and not (typ in (int, (int, float)) and isinstance(v, bool))
    if not ok:
        raise ModelFormatError(path, f"expected {getattr(typ, '__name__', 'number')}, got {v!r}")
    return v


def space_from_dict(doc) -> SearchSpace:
    if not isinstance(doc, dict):
        raise ModelFormatError("document", "expected a JSON object")
    fmt = doc.get("format", CONFIG_FORMAT)
    if fmt != CONFIG_FORMAT:
        raise ModelFormatError("format", f"expected {CONFIG_FORMAT!r}, got {fmt!r}")
    preset = _get(doc, "preset", str, "normal")
    if preset not in PRESETS:
        raise ModelFormatError("preset", f"unknown preset {preset!r} (small, normal, large)")
    stages = _get(doc, "stages", list, PRESETS[preset])
    for si, st in enumerate(stages):
        if not isinstance(st, dict):
            raise ModelFormatError(f"stages[{si}]", "expected an object")
        for k, v in st.items():
            if k not in STAGE_KEYS:
                raise ModelFormatError(f"stages[{si}].{k}", f"unknown key (expected one of {STAGE_KEYS})")
            if not isinstance(v, (list, tuple)) or not v or not all(
                    isinstance(x, int) and not isinstance(x, bool) and x > 0 for x in v):
                raise ModelFormatError(f"stages[{si}].{k}", "expected a non-empty list of positive integers")
    budgets = _get(doc, "budgets", dict, {})
    it = _get(doc, "iterations", dict, {})
    agp = _get(doc, "agp", dict, {})
    try:
        return SearchSpace(
            input_shape=tuple(_get(doc, "input_shape", list, [32, 32, 3])),
            num_classes=_get(doc, "num_classes", int, 10),
            stages=tuple(stages),
            sparsity_options=tuple(_get(doc, "sparsity_options", list, [0.0, 0.25, 0.5, 0.75])),
            block_size_options=tuple(_get(doc, "block_size_options", list, [2, 4])),
            sparsity_granularity=_get(doc, "sparsity_granularity", str, "block"),
            budgets=Budgets(_get(budgets, "storage", int, Budgets.storage, "budgets"),
                            _get(budgets, "memory", int, Budgets.memory, "budgets")),
            lambda_lo=float(_get(doc, "lambda_lo", (int, float), 0.8)),
            lambda_up=float(_get(doc, "lambda_up", (int, float), 2.8)),
            supernet_window=_get(doc, "supernet_window", int, 2),
            iterations=Iterations(**{k: _get(it, k, int, getattr(Iterations, k), "iterations")
                                     for k in Iterations.__dataclass_fields__}),
            seed=_get(doc, "seed", int, 0),
            agp=AGPConfig(**{k: _get(agp, k, int, getattr(AGPConfig, k), "agp")
                             for k in AGPConfig.__dataclass_fields__}),
            mlp_ratio=_get(doc, "mlp_ratio", int, 2),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError("document", str(exc)) from None


def load_space(path) -> tuple[SearchSpace, dict]:
    """Parse a search-space config file; returns the space and the raw document."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFormatError(str(path), exc.strerror or str(exc)) from None
    doc = parse_json_text(text, str(path))
    return space_from_dict(doc), doc


__all__ = ["CONFIG_FORMAT", "PRESETS", "AGPConfig", "Iterations", "SearchSpace",
           "sample_supernet", "enumerate_supernets", "sparse_groups", "sample_sparse_config",
           "space_from_dict", "load_space"]
