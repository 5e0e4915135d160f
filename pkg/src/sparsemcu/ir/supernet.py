"""Supernet family built from choice blocks, and single-path extraction.

Each choice block holds mutually exclusive candidates; a single path picks one
candidate, one channel option and one repeat count per block.  Layers carry a
``tag`` of the form ``"<block index>:<block type>:<candidate>"`` recording
which block produced them (the classifier head is tagged ``"head"``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .graph import infer_shapes
from .types import LayerKind, LayerSpec, ModelGraph

K = LayerKind

BLOCK_TYPES = ("Downsample", "MobileNetV2", "Transformer", "Pooling")

DEFAULT_CANDIDATES = {
    "Downsample": ("conv3x3_s2", "conv_maxpool"),
    "MobileNetV2": ("ir_e2", "ir_e4"),
    "Transformer": ("encoder_h2", "encoder_h4"),
    "Pooling": ("seqpool", "avgpool"),
}

_KNOWN = {
    "Downsample": {"conv3x3_s2", "conv_maxpool"},
    "Pooling": {"seqpool", "avgpool"},
}


def _suffix_int(name: str, prefix: str) -> int | None:
    if name.startswith(prefix) and name[len(prefix):].isdigit():
        return int(name[len(prefix):])
    return None


def _check_candidate(block_type: str, name: str) -> None:
    if block_type in _KNOWN:
        ok = name in _KNOWN[block_type]
    elif block_type == "MobileNetV2":
        ok = (_suffix_int(name, "ir_e") or 0) >= 1
    else:
        ok = (_suffix_int(name, "encoder_h") or 0) >= 1
    if not ok:
        raise ValueError(f"unknown {block_type} candidate {name!r}")


@dataclass(frozen=True)
class ChoiceBlock:
    """A supernet slot.  Pooling blocks ignore channel and repeat options."""

    block_type: str
    candidates: tuple = ()
    channel_options: tuple = (0,)
    repeat_options: tuple = (1,)
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise ValueError(f"unknown block type {self.block_type!r}")
        cands = tuple(self.candidates) or DEFAULT_CANDIDATES[self.block_type]
        if not 1 <= len(cands) <= 3:
            raise ValueError("a choice block holds 1 to 3 candidates")
        for c in cands:
            _check_candidate(self.block_type, c)
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "channel_options", tuple(int(c) for c in self.channel_options))
        object.__setattr__(self, "repeat_options", tuple(int(r) for r in self.repeat_options))
        if not self.channel_options or not self.repeat_options:
            raise ValueError("channel and repeat options must be non-empty")
        if self.block_type in ("Downsample", "MobileNetV2") and min(self.channel_options) < 1:
            raise ValueError(f"{self.block_type} needs positive channel options")
        if self.block_type == "Transformer" and min(self.channel_options) < 1:
            raise ValueError("Transformer needs positive encoder widths")
        if min(self.repeat_options) < 1:
            raise ValueError("repeat options must be positive")
        if self.block_type == "Downsample" and self.repeat_options != (1,):
            raise ValueError("Downsample blocks are not repeatable")

    @property
    def n_paths(self) -> int:
        return len(self.candidates) * len(self.channel_options) * len(self.repeat_options)

    def to_dict(self) -> dict:
        return {"block_type": self.block_type, "candidates": list(self.candidates),
                "channel_options": list(self.channel_options),
                "repeat_options": list(self.repeat_options), "mlp_ratio": self.mlp_ratio}


@dataclass(frozen=True)
class SupernetSpec:
    input_shape: tuple
    num_classes: int
    choice_blocks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "choice_blocks", tuple(self.choice_blocks))

    @property
    def n_paths(self) -> int:
        return int(np.prod([b.n_paths for b in self.choice_blocks], dtype=object))

    def dot_count(self) -> int:
        types = [b.block_type for b in self.choice_blocks]
        return sum(1 for i in range(len(types) - 2)
                   if types[i:i + 3] == ["Downsample", "MobileNetV2", "Transformer"])

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "num_classes": self.num_classes,
                "choice_blocks": [b.to_dict() for b in self.choice_blocks]}

    @classmethod
    def from_dict(cls, d: dict) -> "SupernetSpec":
        return cls(tuple(d["input_shape"]), int(d["num_classes"]),
                   tuple(ChoiceBlock(b["block_type"], tuple(b["candidates"]),
                                     tuple(b["channel_options"]), tuple(b["repeat_options"]),
                                     int(b.get("mlp_ratio", 2)))
                         for b in d["choice_blocks"]))


def supernet_violations(supernet: SupernetSpec, expect_dots: int | None = 2) -> list[str]:
    out = []
    for i, b in enumerate(supernet.choice_blocks):
        if not 2 <= len(b.candidates) <= 3:
            out.append(f"block {i}: {len(b.candidates)} candidates (expected 2 or 3)")
    types = [b.block_type for b in supernet.choice_blocks]
    if not types or types[-1] != "Pooling":
        out.append("supernet must end with a Pooling choice block")
    if expect_dots is not None and supernet.dot_count() != expect_dots:
        out.append(f"expected {expect_dots} DoT stacks, found {supernet.dot_count()}")
    return out


def dot_supernet(input_shape=(32, 32, 3), num_classes=10, stages=None) -> SupernetSpec:
    """Two Downsample-MobileNetV2-Transformer stacks, a Pooling block and a linear head.

    ``stages`` is a list of dicts with keys ``down``, ``mbv2``, ``mbv2_repeats``,
    ``dim``, ``tr_repeats`` giving option tuples for each stack.
    """
    if stages is None:
        stages = [dict(down=(16, 24), mbv2=(24, 32), mbv2_repeats=(1, 2), dim=(32, 48), tr_repeats=(1,)),
                  dict(down=(48, 64), mbv2=(64, 96), mbv2_repeats=(1, 2), dim=(96, 128), tr_repeats=(1,))]
    blocks = []
    for st in stages:
        blocks.append(ChoiceBlock("Downsample", channel_options=tuple(st["down"])))
        blocks.append(ChoiceBlock("MobileNetV2", channel_options=tuple(st["mbv2"]),
                                  repeat_options=tuple(st.get("mbv2_repeats", (1,)))))
        blocks.append(ChoiceBlock("Transformer", channel_options=tuple(st["dim"]),
                                  repeat_options=tuple(st.get("tr_repeats", (1,))),
                                  mlp_ratio=int(st.get("mlp_ratio", 2))))
    blocks.append(ChoiceBlock("Pooling"))
    return SupernetSpec(tuple(input_shape), num_classes, tuple(blocks))


@dataclass(frozen=True)
class PathChoice:
    """Indices (candidate, channel option, repeat option) for one choice block."""

    candidate: int
    channels: int
    repeats: int


class _Builder:
    def __init__(self, input_shape):
        self.layers: list[LayerSpec] = []
        self.channels = input_shape[-1]

    def add(self, kind, tag, inputs=None, **attrs) -> int:
        self.layers.append(LayerSpec(kind, attrs, inputs=inputs, tag=tag,
                                     name=f"{kind.value.lower()}_{len(self.layers)}"))
        return len(self.layers) - 1

    @property
    def last(self) -> int:
        return len(self.layers) - 1


def _expand(b: _Builder, block: ChoiceBlock, idx: int, choice: PathChoice) -> None:
    cand = block.candidates[choice.candidate]
    ch = block.channel_options[choice.channels]
    reps = block.repeat_options[choice.repeats]
    tag = f"{idx}:{block.block_type}:{cand}"

    if block.block_type == "Downsample":
        if cand == "conv3x3_s2":
            b.add(K.CONV3X3, tag, out_channels=ch, stride=2, relu=True)
        else:
            b.add(K.CONV_MAXPOOL, tag, out_channels=ch, relu=True)
        b.channels = ch

    elif block.block_type == "MobileNetV2":
        expansion = _suffix_int(cand, "ir_e")
        for _ in range(reps):
            src = b.last
            cin = b.channels
            b.add(K.CONV1X1, tag, out_channels=cin * expansion, relu=True)
            b.add(K.DWCONV3X3, tag, stride=1, relu=True)
            b.add(K.CONV1X1, tag, out_channels=ch, relu=False)
            if cin == ch:
                b.add(K.ADD, tag, inputs=(b.last, src))
            b.channels = ch

    elif block.block_type == "Transformer":
        heads = _suffix_int(cand, "encoder_h")
        c = b.channels
        b.add(K.CONV3X3, tag, out_channels=c, stride=1, relu=True)
        b.add(K.CONV1X1, tag, out_channels=ch, relu=False)
        for _ in range(reps):
            b.add(K.ENCODER, tag, heads=heads, mlp_dim=block.mlp_ratio * ch)
        b.add(K.CONV1X1, tag, out_channels=c, relu=True)
        b.add(K.CONV3X3, tag, out_channels=c, stride=1, relu=True)

    else:
        if cand == "seqpool":
            b.add(K.SEQPOOL, tag)
        else:
            b.add(K.AVGPOOL, tag)


def build_single_path(supernet: SupernetSpec, choices, name: str = "single_path") -> ModelGraph:
    """Flatten one path through the supernet into a shape-annotated graph."""
    choices = list(choices)
    if len(choices) != len(supernet.choice_blocks):
        raise ValueError("need exactly one choice per block")
    b = _Builder(supernet.input_shape)
    for idx, (block, choice) in enumerate(zip(supernet.choice_blocks, choices)):
        _expand(b, block, idx, choice)
    b.add(K.LINEAR, "head", out_features=supernet.num_classes, flatten=True, relu=False)
    return infer_shapes(ModelGraph(supernet.input_shape, tuple(b.layers), name=name))


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def sample_path_choices(supernet: SupernetSpec, rng_seed) -> list[PathChoice]:
    rng = _rng(rng_seed)
    return [PathChoice(int(rng.integers(len(b.candidates))),
                       int(rng.integers(len(b.channel_options))),
                       int(rng.integers(len(b.repeat_options))))
            for b in supernet.choice_blocks]


def sample_single_path(supernet: SupernetSpec, rng_seed) -> ModelGraph:
    """Uniformly sample one candidate, channel option and repeat count per block.

    ``rng_seed`` may be an integer seed or a numpy Generator (advanced in place).
    """
    return build_single_path(supernet, sample_path_choices(supernet, rng_seed))


def enumerate_path_choices(supernet: SupernetSpec):
    per_block = [[PathChoice(c, ch, r)
                  for c in range(len(b.candidates))
                  for ch in range(len(b.channel_options))
                  for r in range(len(b.repeat_options))]
                 for b in supernet.choice_blocks]
    return itertools.product(*per_block)
