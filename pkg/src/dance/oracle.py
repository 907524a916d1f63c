"""Exact hardware generation by exhaustive search, and ground-truth datasets."""
from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .costfn import CostFunctionSpec, cost_hw
from .costmodel import (DATAFLOWS, DEFAULT_CONSTANTS, AcceleratorConfig, CostMetrics,
                        CostModelConstants, area, layer_costs)
from .workload import (N_OPS, ArchSpace, ConvLayerSpec, encode_network, network_layers,
                       sample_random_network, sample_sparse_network)


@dataclass(frozen=True)
class HwSpace:
    dataflows: tuple[str, ...] = DATAFLOWS
    pe_x_values: tuple[int, ...] = tuple(range(8, 25))
    pe_y_values: tuple[int, ...] = tuple(range(8, 25))
    rf_values: tuple[int, ...] = (4, 8, 16, 32, 64)

    def __post_init__(self):
        if not set(self.dataflows) <= set(DATAFLOWS):
            raise ValueError(f"dataflows must be drawn from {DATAFLOWS}")
        for vals in (self.dataflows, self.pe_x_values, self.pe_y_values, self.rf_values):
            if not vals or len(set(vals)) != len(vals):
                raise ValueError("hardware space axes must be non-empty and duplicate-free")

    @property
    def head_sizes(self) -> tuple[int, int, int, int]:
        return (len(self.dataflows), len(self.pe_x_values), len(self.pe_y_values), len(self.rf_values))

    @property
    def onehot_size(self) -> int:
        return sum(self.head_sizes)

    def __len__(self) -> int:
        n_df, n_x, n_y, n_rf = self.head_sizes
        return n_df * n_x * n_y * n_rf

    @cached_property
    def grid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Index arrays (df, pe_x, pe_y, rf) in canonical lexicographic order."""
        d, x, y, r = np.meshgrid(
            [DATAFLOWS.index(v) for v in self.dataflows], self.pe_x_values,
            self.pe_y_values, self.rf_values, indexing="ij")
        return (d.ravel().astype(np.int64), x.ravel().astype(np.int64),
                y.ravel().astype(np.int64), r.ravel().astype(np.int64))

    def config_at(self, idx: int) -> AcceleratorConfig:
        d, x, y, r = (int(a[idx]) for a in self.grid)
        return AcceleratorConfig(DATAFLOWS[d], x, y, r)

    def index_of(self, accel: AcceleratorConfig) -> int:
        n_df, n_x, n_y, n_rf = self.head_sizes
        i = (self.dataflows.index(accel.dataflow), self.pe_x_values.index(accel.pe_x),
             self.pe_y_values.index(accel.pe_y), self.rf_values.index(accel.rf_size))
        return ((i[0] * n_x + i[1]) * n_y + i[2]) * n_rf + i[3]

    def onehot(self, accel: AcceleratorConfig) -> np.ndarray:
        parts = []
        for vals, v in zip((self.dataflows, self.pe_x_values, self.pe_y_values, self.rf_values),
                           (accel.dataflow, accel.pe_x, accel.pe_y, accel.rf_size)):
            oh = np.zeros(len(vals))
            oh[vals.index(v)] = 1.0
            parts.append(oh)
        return np.concatenate(parts)

    def from_head_indices(self, idx) -> AcceleratorConfig:
        d, x, y, r = (int(i) for i in idx)
        return AcceleratorConfig(self.dataflows[d], self.pe_x_values[x], self.pe_y_values[y],
                                 self.rf_values[r])

    def from_onehot(self, vec) -> AcceleratorConfig:
        vec = np.asarray(vec)
        out, off = [], 0
        for size in self.head_sizes:
            out.append(int(np.argmax(vec[off:off + size])))
            off += size
        return self.from_head_indices(out)

    def to_dict(self) -> dict:
        return {"dataflows": list(self.dataflows), "pe_x_values": list(self.pe_x_values),
                "pe_y_values": list(self.pe_y_values), "rf_values": list(self.rf_values)}

    @classmethod
    def from_dict(cls, d: dict) -> "HwSpace":
        return cls(**{k: tuple(v) for k, v in d.items()})


def enumerate_space(space: HwSpace) -> list[AcceleratorConfig]:
    return [space.config_at(i) for i in range(len(space))]


def _chunks(n: int, parts: int) -> list[slice]:
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def network_cost_arrays(layers: list[ConvLayerSpec], space: HwSpace,
                        const: CostModelConstants = DEFAULT_CONSTANTS,
                        sl: slice = slice(None), cache: dict | None = None):
    """(latency, energy, area) arrays over ``space.grid[sl]``.

    ``cache`` memoises per-layer arrays over the full grid (one dataset run).
    """
    d, x, y, r = (a[sl] for a in space.grid)
    lat = np.zeros(len(d))
    en = np.zeros(len(d))
    for layer in layers:
        if cache is not None:
            if layer not in cache:
                cache[layer] = layer_costs(layer, *space.grid, const)
            l_lat, l_en = cache[layer]
            l_lat, l_en = l_lat[sl], l_en[sl]
        else:
            l_lat, l_en = layer_costs(layer, d, x, y, r, const)
        lat += l_lat
        en += l_en
    return lat, en, area(x, y, r, const).astype(float)


def optimal_hw(layers: list[ConvLayerSpec], cost_fn: CostFunctionSpec,
               space: HwSpace | None = None, const: CostModelConstants = DEFAULT_CONSTANTS,
               threads: int = 1, cache: dict | None = None) -> tuple[AcceleratorConfig, CostMetrics]:
    """Exhaustive argmin over ``space``; ties go to the first config in canonical order."""
    if not layers:
        raise ValueError("optimal_hw needs a non-empty layer list")
    space = space or HwSpace()
    idx, (lat, en, ar) = _argmin(layers, cost_fn, space, const, threads, cache)
    return space.config_at(idx), CostMetrics(float(lat[idx]), float(en[idx]), float(ar[idx]))


def _argmin(layers, cost_fn, space, const, threads, cache):
    n = len(space)
    if threads <= 1:
        arrays = network_cost_arrays(layers, space, const, cache=cache)
    else:
        slices = _chunks(n, threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda s: network_cost_arrays(layers, space, const, s), slices))
        arrays = tuple(np.concatenate([p[i] for p in parts]) for i in range(3))
    costs = cost_hw(*arrays, cost_fn)
    return int(np.argmin(costs)), arrays


@dataclass
class DatasetRecord:
    net_id: int
    kind: str  # "opt" | "rand"
    arch_onehot: np.ndarray
    hw_onehot: np.ndarray
    costs: CostMetrics
    accel: AcceleratorConfig = field(repr=False, default=None)


def generate_dataset(n_networks: int, space: HwSpace | None = None,
                     arch_space: ArchSpace | None = None,
                     cost_fn: CostFunctionSpec | None = None, rng_seed: int = 0,
                     n_random: int = 8, const: CostModelConstants = DEFAULT_CONSTANTS,
                     threads: int = 1, sparse_fraction: float = 0.5) -> list[DatasetRecord]:
    """Sample distinct random networks and label them with the exhaustive oracle.

    Each network yields one ``opt`` row and ``n_random`` ``rand`` rows at
    distinct random configurations (which may include the optimum). A
    ``sparse_fraction`` of the networks come from :func:`sample_sparse_network`
    and the rest are uniform per position.
    """
    if n_networks < 1:
        raise ValueError("n_networks must be >= 1")
    if not 0.0 <= sparse_fraction <= 1.0:
        raise ValueError("sparse_fraction must lie in [0, 1]")
    space = space or HwSpace()
    arch_space = arch_space or ArchSpace()
    cost_fn = cost_fn or CostFunctionSpec.edap()
    if n_networks > N_OPS ** arch_space.positions:
        raise ValueError("more networks requested than the architecture space holds")
    rng = np.random.default_rng(rng_seed)

    archs, seen = [], set()
    while len(archs) < n_networks:
        sparse = rng.random() < sparse_fraction
        arch = tuple(sample_sparse_network(arch_space, rng) if sparse
                     else sample_random_network(arch_space, rng))
        if arch not in seen:
            seen.add(arch)
            archs.append(list(arch))
    rand_idx = [rng.choice(len(space), size=min(n_random, len(space)), replace=False)
                for _ in archs]

    cache: dict = {}
    # warm the per-layer cache serially so worker threads only read it
    for arch in archs:
        for layer in network_layers(arch, arch_space):
            if layer not in cache:
                cache[layer] = layer_costs(layer, *space.grid, const)

    def label(i):
        arch = archs[i]
        layers = network_layers(arch, arch_space)
        best, arrays = _argmin(layers, cost_fn, space, const, 1, cache)
        enc = encode_network(arch, arch_space).ravel()
        rows = []
        for kind, j in [("opt", best)] + [("rand", int(j)) for j in rand_idx[i]]:
            accel = space.config_at(j)
            m = CostMetrics(float(arrays[0][j]), float(arrays[1][j]), float(arrays[2][j]))
            rows.append(DatasetRecord(i, kind, enc, space.onehot(accel), m, accel))
        return rows

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_net = list(pool.map(label, range(len(archs))))
    else:
        per_net = [label(i) for i in range(len(archs))]
    return [row for rows in per_net for row in rows]


def dataset_columns(arch_space: ArchSpace, space: HwSpace) -> list[str]:
    n_df, n_x, n_y, n_rf = space.head_sizes
    return (["net_id", "kind"]
            + [f"arch_{i}" for i in range(arch_space.positions * N_OPS)]
            + [f"df_{i}" for i in range(n_df)] + [f"pex_{i}" for i in range(n_x)]
            + [f"pey_{i}" for i in range(n_y)] + [f"rf_{i}" for i in range(n_rf)]
            + ["latency_ms", "energy_mj", "area_um2"])


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def dataset_to_csv(records: list[DatasetRecord], arch_space: ArchSpace, space: HwSpace) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(dataset_columns(arch_space, space))
    for rec in records:
        wr.writerow([rec.net_id, rec.kind]
                    + [int(v) for v in rec.arch_onehot] + [int(v) for v in rec.hw_onehot]
                    + [_fmt(rec.costs.latency), _fmt(rec.costs.energy), _fmt(rec.costs.area)])
    return buf.getvalue()


def write_dataset(path, records, arch_space: ArchSpace, space: HwSpace) -> str:
    """Write CSV; returns its sha256."""
    text = dataset_to_csv(records, arch_space, space)
    data = text.encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


@dataclass
class Dataset:
    """Column-oriented view of a dataset CSV."""

    net_id: np.ndarray
    kind: np.ndarray
    arch: np.ndarray
    hw: np.ndarray
    costs: np.ndarray  # (rows, 3): latency, energy, area

    def __len__(self) -> int:
        return len(self.net_id)

    def subset(self, mask) -> "Dataset":
        return Dataset(self.net_id[mask], self.kind[mask], self.arch[mask], self.hw[mask],
                       self.costs[mask])

    def opt_rows(self) -> "Dataset":
        return self.subset(self.kind == "opt")

    def split(self, val_fraction: float = 0.2, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Split by network id with a seeded permutation (no network straddles splits)."""
        ids = np.unique(self.net_id)
        perm = np.random.default_rng(seed).permutation(ids)
        n_val = max(1, int(round(len(ids) * val_fraction))) if len(ids) > 1 else 0
        val_ids = perm[:n_val]
        in_val = np.isin(self.net_id, val_ids)
        return self.subset(~in_val), self.subset(in_val)


def read_dataset(path, arch_space: ArchSpace | None = None, space: HwSpace | None = None) -> Dataset:
    arch_space = arch_space or ArchSpace()
    space = space or HwSpace()
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != dataset_columns(arch_space, space):
            raise ValueError(f"{path}: header does not match the configured spaces")
        rows = list(rd)
    n_arch = arch_space.positions * N_OPS
    n_hw = space.onehot_size
    net_id = np.array([int(r[0]) for r in rows], dtype=np.int64)
    kind = np.array([r[1] for r in rows])
    num = np.array([r[2:] for r in rows], dtype=float).reshape(len(rows), n_arch + n_hw + 3)
    return Dataset(net_id, kind, num[:, :n_arch], num[:, n_arch:n_arch + n_hw], num[:, -3:])


def records_to_dataset(records: list[DatasetRecord]) -> Dataset:
    return Dataset(np.array([r.net_id for r in records], dtype=np.int64),
                   np.array([r.kind for r in records]),
                   np.array([r.arch_onehot for r in records]),
                   np.array([r.hw_onehot for r in records]),
                   np.array([r.costs.as_array() for r in records]))
