"""Scalar hardware cost functions over (latency ms, energy mJ, area um^2)."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CostFunctionSpec:
    kind: str = "edap"  # "edap" | "linear"
    lam_latency: float = 0.0
    lam_energy: float = 0.0
    lam_area: float = 0.0

    def __post_init__(self):
        if self.kind not in ("edap", "linear"):
            raise ValueError(f"unknown cost function kind {self.kind!r}")
        if self.kind == "linear":
            lams = (self.lam_latency, self.lam_energy, self.lam_area)
            if min(lams) < 0 or max(lams) == 0:
                raise ValueError("linear weights must be >= 0 and not all zero")

    @classmethod
    def edap(cls) -> "CostFunctionSpec":
        return cls("edap")

    @classmethod
    def linear(cls, lam_latency: float, lam_energy: float, lam_area: float) -> "CostFunctionSpec":
        return cls("linear", float(lam_latency), float(lam_energy), float(lam_area))

    @classmethod
    def parse(cls, text: str) -> "CostFunctionSpec":
        """``edap``, ``linear:lL,lE,lA`` or a preset name."""
        text = text.strip()
        if text in PRESETS:
            return PRESETS[text]
        if text.startswith("linear:"):
            parts = text.split(":", 1)[1].split(",")
            if len(parts) != 3:
                raise ValueError("linear cost expects linear:lamL,lamE,lamA")
            return cls.linear(*(float(p) for p in parts))
        raise ValueError(f"cannot parse cost function {text!r}")

    def scaled(self, factor: float) -> "CostFunctionSpec":
        if self.kind != "linear":
            raise ValueError("only linear cost functions can be rescaled")
        return CostFunctionSpec.linear(self.lam_latency * factor, self.lam_energy * factor,
                                       self.lam_area * factor)

    def __str__(self) -> str:
        if self.kind == "edap":
            return "edap"
        return f"linear:{self.lam_latency:g},{self.lam_energy:g},{self.lam_area:g}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lam_latency": self.lam_latency,
                "lam_energy": self.lam_energy, "lam_area": self.lam_area}

    @classmethod
    def from_dict(cls, d: dict) -> "CostFunctionSpec":
        return cls(**d)


def cost_hw(latency, energy, area, spec: CostFunctionSpec):
    """Works on floats, numpy arrays and autodiff tensors alike."""
    if spec.kind == "edap":
        return latency * energy * area
    return spec.lam_latency * latency + spec.lam_energy * energy + spec.lam_area * area


def cost_of(metrics, spec: CostFunctionSpec) -> float:
    return cost_hw(metrics.latency, metrics.energy, metrics.area, spec)


# Linear weight presets (lambda_L, lambda_E, lambda_A).
PRESETS = {
    "edap": CostFunctionSpec("edap"),
    "latency": CostFunctionSpec("linear", 3.3, 0.8, 1.0),
    "energy": CostFunctionSpec("linear", 0.2, 2.8, 1.0),
    "balanced": CostFunctionSpec("linear", 0.6, 0.5, 1.0),
}
