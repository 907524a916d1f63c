"""Network architecture search space: candidate ops, layer expansion, encodings.

Canonical op order (stable across datasets, evaluator and search):

    MB3e3, MB3e6, MB5e3, MB5e6, MB7e3, MB7e6, Zero
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConvLayerSpec:
    n: int
    c: int
    k: int
    h: int
    w: int
    r: int
    s: int
    stride: int = 1
    depthwise: bool = False

    def __post_init__(self):
        for name in ("n", "c", "k", "h", "w", "r", "s", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.depthwise and self.c != self.k:
            raise ValueError("depthwise layer requires c == k")

    @property
    def p(self) -> int:
        return math.ceil(self.h / self.stride)

    @property
    def q(self) -> int:
        return math.ceil(self.w / self.stride)


@dataclass(frozen=True)
class CandidateOp:
    """MBConv(kernel, expand) or Zero (``kernel == 0``)."""

    kernel: int = 0
    expand: int = 0

    @property
    def is_zero(self) -> bool:
        return self.kernel == 0

    @property
    def name(self) -> str:
        return "Zero" if self.is_zero else f"MB{self.kernel}e{self.expand}"

    @classmethod
    def from_name(cls, name: str) -> "CandidateOp":
        try:
            return OPS[OP_NAMES.index(name)]
        except ValueError:
            raise ValueError(f"unknown op {name!r}; expected one of {OP_NAMES}") from None

    def __str__(self) -> str:
        return self.name


ZERO = CandidateOp()
OPS: tuple[CandidateOp, ...] = (
    CandidateOp(3, 3),
    CandidateOp(3, 6),
    CandidateOp(5, 3),
    CandidateOp(5, 6),
    CandidateOp(7, 3),
    CandidateOp(7, 6),
    ZERO,
)
OP_NAMES: tuple[str, ...] = tuple(op.name for op in OPS)
N_OPS = len(OPS)
ZERO_INDEX = OPS.index(ZERO)


@dataclass(frozen=True)
class ArchSpace:
    """Toy supernet shape.

    Channels double every ``double_every`` positions, starting at position 0,
    so the default schedule is 8->16, 16->16, 16->32, 32->32, 32->64, 64->64.
    All searchable cells are stride 1 with "same" padding.
    """

    positions: int = 6
    stem_width: int = 8
    double_every: int = 2
    input_hw: int = 16
    input_ch: int = 3
    batch: int = 1
    ops: tuple[CandidateOp, ...] = field(default=OPS, repr=False)

    def __post_init__(self):
        if self.positions < 1 or self.stem_width < 1 or self.double_every < 1:
            raise ValueError("positions, stem_width and double_every must be >= 1")

    @property
    def channel_schedule(self) -> list[tuple[int, int, int]]:
        sched = []
        in_ch = self.stem_width
        for i in range(self.positions):
            out_ch = self.stem_width * 2 ** (i // self.double_every + 1)
            sched.append((in_ch, out_ch, self.input_hw))
            in_ch = out_ch
        return sched

    @property
    def encoding_size(self) -> int:
        return self.positions * N_OPS

    def stem_layer(self) -> ConvLayerSpec:
        return ConvLayerSpec(self.batch, self.input_ch, self.stem_width,
                             self.input_hw, self.input_hw, 3, 3)

    def to_dict(self) -> dict:
        return {"positions": self.positions, "stem_width": self.stem_width,
                "double_every": self.double_every, "input_hw": self.input_hw,
                "input_ch": self.input_ch, "batch": self.batch}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpace":
        return cls(**{k: d[k] for k in ("positions", "stem_width", "double_every",
                                        "input_hw", "input_ch", "batch") if k in d})

    def fingerprint(self) -> str:
        d = self.to_dict()
        return ",".join(f"{k}={d[k]}" for k in sorted(d)) + ";ops=" + "|".join(OP_NAMES)


def expand_op(op: CandidateOp, in_ch: int, out_ch: int, spatial: int,
              batch: int = 1) -> list[ConvLayerSpec]:
    """Expand one candidate op into its concrete convolution layers."""
    if min(in_ch, out_ch, spatial, batch) < 1:
        raise ValueError("dimensions must be >= 1")
    if op.is_zero:
        return []
    mid = op.expand * in_ch
    return [
        ConvLayerSpec(batch, in_ch, mid, spatial, spatial, 1, 1),
        ConvLayerSpec(batch, mid, mid, spatial, spatial, op.kernel, op.kernel, depthwise=True),
        ConvLayerSpec(batch, mid, out_ch, spatial, spatial, 1, 1),
    ]


def _check_length(arch, space: ArchSpace):
    if len(arch) != space.positions:
        raise ValueError(f"architecture has {len(arch)} positions, space expects {space.positions}")


def encode_network(arch: list[CandidateOp], space: ArchSpace) -> np.ndarray:
    """One-hot encoding, shape ``(positions, 7)``."""
    _check_length(arch, space)
    enc = np.zeros((space.positions, N_OPS))
    for i, op in enumerate(arch):
        enc[i, OPS.index(op)] = 1.0
    return enc


def decode_network(encoding: np.ndarray, space: ArchSpace) -> list[CandidateOp]:
    """Per-position argmax; inverse of :func:`encode_network` on one-hot input."""
    enc = np.asarray(encoding, dtype=float).reshape(-1, N_OPS)
    _check_length(enc, space)
    return [OPS[int(j)] for j in enc.argmax(axis=1)]


def sample_random_network(space: ArchSpace, rng_seed) -> list[CandidateOp]:
    """Each position uniform over the 7 ops. ``rng_seed`` may be an int or a Generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return [OPS[int(j)] for j in rng.integers(0, N_OPS, size=space.positions)]


def sample_sparse_network(space: ArchSpace, rng: np.random.Generator) -> list[CandidateOp]:
    """Zero rate drawn uniformly per network, then each position Zero with that rate.

    Covers the mostly-Zero corner of the space, which uniform sampling almost
    never visits but a hardware-penalised search drives towards.
    """
    p_zero = rng.random()
    zero = rng.random(space.positions) < p_zero
    ops = rng.integers(0, N_OPS - 1, size=space.positions)
    return [ZERO if z else OPS[int(j)] for z, j in zip(zero, ops)]


def network_layers(arch: list[CandidateOp], space: ArchSpace) -> list[ConvLayerSpec]:
    _check_length(arch, space)
    layers = [space.stem_layer()]
    for op, (cin, cout, hw) in zip(arch, space.channel_schedule):
        layers.extend(expand_op(op, cin, cout, hw, space.batch))
    return layers


def arch_to_json(arch: list[CandidateOp], space: ArchSpace) -> dict:
    return {"positions": [{"op": op.name} for op in arch], "space": space.to_dict()}


def arch_from_json(doc: dict) -> tuple[list[CandidateOp], ArchSpace]:
    space = ArchSpace.from_dict(doc.get("space", {}))
    arch = [CandidateOp.from_name(p["op"]) for p in doc["positions"]]
    _check_length(arch, space)
    return arch, space
