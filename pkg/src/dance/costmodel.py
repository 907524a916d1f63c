"""Analytical accelerator cost oracle (latency / energy / area).

A three-level hierarchy (per-PE register file, shared global buffer, DRAM)
with a PE_X x PE_Y array. PE_X tiles output channels, PE_Y tiles output
pixels. Global-buffer traffic per dataflow:

    ====  ==================  =========================  ======================
    df    weights             inputs                     outputs
    ====  ==================  =========================  ======================
    WS    W_u                 I_u * T_k                  2 O_u ceil(crs / F)
    OS    W_u * T_s           I_u ceil(T_k / min(F,T_k)) O_u
    RS    W_u ceil(T_s/min)   I_u                        2 O_u ceil(c / F)
    ====  ==================  =========================  ======================

All functions are vectorised: accelerator fields may be numpy arrays, in
which case every output is an array over configurations.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from typing import Iterable

import numpy as np

from .workload import ConvLayerSpec

DATAFLOWS = ("WS", "OS", "RS")
WS, OS, RS = 0, 1, 2


@dataclass(frozen=True)
class AcceleratorConfig:
    dataflow: str
    pe_x: int
    pe_y: int
    rf_size: int

    def __post_init__(self):
        if self.dataflow not in DATAFLOWS:
            raise ValueError(f"unknown dataflow {self.dataflow!r}")
        if self.pe_x < 1 or self.pe_y < 1 or self.rf_size < 1:
            raise ValueError("pe_x, pe_y, rf_size must be positive")

    @property
    def df_index(self) -> int:
        return DATAFLOWS.index(self.dataflow)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CostMetrics:
    latency: float  # ms
    energy: float  # mJ
    area: float  # um^2

    def as_array(self) -> np.ndarray:
        return np.array([self.latency, self.energy, self.area])

    def to_dict(self) -> dict:
        return {"latency_ms": self.latency, "energy_mj": self.energy, "area_um2": self.area}


@dataclass(frozen=True)
class AccessCounts:
    macs: int
    rf_accesses: int
    gb_weights: int
    gb_inputs: int
    gb_outputs: int
    dram_accesses: int

    @property
    def gb_accesses(self) -> int:
        return self.gb_weights + self.gb_inputs + self.gb_outputs


@dataclass(frozen=True)
class CostModelConstants:
    e_mac: float = 1.0  # pJ
    e_rf: float = 1.0  # pJ
    e_gb: float = 6.0  # pJ
    e_dram: float = 200.0  # pJ
    p_leak_per_pe: float = 0.01  # mW
    clock: float = 1e9  # Hz
    dram_bw: float = 128e9  # bytes/s
    gb_capacity: int = 131072  # elements
    element_size: int = 1  # bytes
    a_pe_base: float = 2000.0  # um^2
    a_rf_entry: float = 50.0  # um^2
    a_gb: float = 500000.0  # um^2

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"cost model constant {f.name} must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "CostModelConstants":
        d = d or {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown cost_model keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CONSTANTS = CostModelConstants()


def _cdiv(a, b):
    return -(-a // b)


def macs(layer: ConvLayerSpec) -> int:
    per_out = layer.r * layer.s if layer.depthwise else layer.c * layer.r * layer.s
    return layer.n * layer.k * layer.p * layer.q * per_out


def _terms(layer: ConvLayerSpec, df, pe_x, pe_y, rf, const: CostModelConstants):
    """Raw integer counts; accelerator args are ints or int64 arrays."""
    df = np.asarray(df, dtype=np.int64)
    pe_x = np.asarray(pe_x, dtype=np.int64)
    pe_y = np.asarray(pe_y, dtype=np.int64)
    rf = np.asarray(rf, dtype=np.int64)
    n, c, k, r, s = layer.n, layer.c, layer.k, layer.r, layer.s
    pq = layer.p * layer.q
    red = r * s if layer.depthwise else c * r * s  # reduction length per output
    w_u = k * red
    i_u = n * c * layer.h * layer.w
    o_u = n * k * pq
    t_k = _cdiv(k, pe_x)
    t_s = _cdiv(pq, pe_y)

    ws_o = 2 * o_u * _cdiv(red, rf)
    rs_o = 2 * o_u if layer.depthwise else 2 * o_u * _cdiv(c, rf)
    a_w = np.where(df == WS, w_u,
                   np.where(df == OS, w_u * t_s, w_u * _cdiv(t_s, np.minimum(rf, t_s))))
    a_i = np.where(df == WS, i_u * t_k,
                   np.where(df == OS, i_u * _cdiv(t_k, np.minimum(rf, t_k)), i_u))
    a_o = np.where(df == WS, ws_o, np.where(df == OS, o_u, rs_o))

    n_mac = macs(layer)
    uniq = w_u + i_u + o_u
    dram = uniq * _cdiv(uniq, const.gb_capacity)
    compute_cycles = n * t_k * t_s * red
    return n_mac, a_w, a_i, a_o, dram, compute_cycles


def access_counts(layer: ConvLayerSpec, accel: AcceleratorConfig,
                  const: CostModelConstants = DEFAULT_CONSTANTS) -> AccessCounts:
    n_mac, a_w, a_i, a_o, dram, _ = _terms(layer, accel.df_index, accel.pe_x,
                                           accel.pe_y, accel.rf_size, const)
    return AccessCounts(macs=n_mac, rf_accesses=3 * n_mac, gb_weights=int(a_w),
                        gb_inputs=int(a_i), gb_outputs=int(a_o), dram_accesses=int(dram))


def area(pe_x, pe_y, rf, const: CostModelConstants = DEFAULT_CONSTANTS):
    return (np.asarray(pe_x) * np.asarray(pe_y) * (const.a_pe_base + const.a_rf_entry * np.asarray(rf))
            + const.a_gb)


def layer_costs(layer: ConvLayerSpec, df, pe_x, pe_y, rf,
                const: CostModelConstants = DEFAULT_CONSTANTS):
    """Vectorised ``(latency_ms, energy_mj)`` over configuration arrays."""
    n_mac, a_w, a_i, a_o, dram, cycles = _terms(layer, df, pe_x, pe_y, rf, const)
    gb = a_w + a_i + a_o
    pe_x = np.asarray(pe_x)
    pe_y = np.asarray(pe_y)
    t_compute = cycles / const.clock
    t_noc = gb / (2.0 * (pe_x + pe_y)) / const.clock
    t_dram = dram * const.element_size / const.dram_bw
    latency_s = np.maximum(np.maximum(t_compute, t_noc), t_dram)
    dyn_pj = const.e_mac * n_mac + const.e_rf * 3 * n_mac + const.e_gb * gb + const.e_dram * dram
    leak_j = const.p_leak_per_pe * 1e-3 * pe_x * pe_y * latency_s
    return latency_s * 1e3, dyn_pj * 1e-9 + leak_j * 1e3


def evaluate_layer(layer: ConvLayerSpec, accel: AcceleratorConfig,
                   const: CostModelConstants = DEFAULT_CONSTANTS) -> CostMetrics:
    lat, en = layer_costs(layer, accel.df_index, accel.pe_x, accel.pe_y, accel.rf_size, const)
    return CostMetrics(float(lat), float(en), float(area(accel.pe_x, accel.pe_y, accel.rf_size, const)))


def evaluate_network(layers: Iterable[ConvLayerSpec], accel: AcceleratorConfig,
                     const: CostModelConstants = DEFAULT_CONSTANTS) -> CostMetrics:
    lat = en = 0.0
    for layer in layers:
        m = evaluate_layer(layer, accel, const)
        lat += m.latency
        en += m.energy
    return CostMetrics(lat, en, float(area(accel.pe_x, accel.pe_y, accel.rf_size, const)))


BREAKDOWN_COLUMNS = ["layer_idx", "dataflow", "pe_x", "pe_y", "rf", "macs", "rf_acc",
                     "gb_acc", "dram_acc", "latency_ms", "energy_mj", "area_um2"]


def breakdown_rows(layers: list[ConvLayerSpec], accel: AcceleratorConfig,
                   const: CostModelConstants = DEFAULT_CONSTANTS) -> list[list]:
    rows = []
    for i, layer in enumerate(layers):
        acc = access_counts(layer, accel, const)
        m = evaluate_layer(layer, accel, const)
        rows.append([i, accel.dataflow, accel.pe_x, accel.pe_y, accel.rf_size, acc.macs,
                     acc.rf_accesses, acc.gb_accesses, acc.dram_accesses,
                     f"{m.latency:.9g}", f"{m.energy:.9g}", f"{m.area:.9g}"])
    return rows


def write_breakdown_csv(path, layers, accel, const: CostModelConstants = DEFAULT_CONSTANTS):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(BREAKDOWN_COLUMNS)
        wr.writerows(breakdown_rows(layers, accel, const))
