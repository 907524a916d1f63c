"""Differentiable surrogate of the hardware oracle.

A hardware-generation MLP maps an architecture encoding to four Gumbel-softmax
heads (dataflow, PE_X, PE_Y, RF). A cost-estimation MLP maps the encoding,
concatenated with those heads ("feature forwarding"), to latency, energy and
area. The cost net predicts standardised log-costs and exponentiates.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .costfn import CostFunctionSpec
from .costmodel import CostMetrics
from .nn import (SGD, Adam, Module, ResidualMLP, Tensor, as_tensor, concat,
                 exp, gumbel_softmax, log_softmax, lr_schedule, msre_loss, no_grad, sample_gumbel)
from .nn.checkpoint import dumps, loads
from .oracle import Dataset, HwSpace
from .workload import N_OPS, ArchSpace

logger = logging.getLogger(__name__)

HEAD_NAMES = ("dataflow", "pe_x", "pe_y", "rf_size")
METRIC_NAMES = ("latency", "energy", "area")


class HwGenNet(Module):
    def __init__(self, n_arch: int, head_sizes, width: int = 128, seed: int = 0):
        self.head_sizes = tuple(int(h) for h in head_sizes)
        self.trunk = ResidualMLP(n_arch, width, sum(self.head_sizes), np.random.default_rng(seed))

    def logits(self, x) -> Tensor:
        return self.trunk(x)

    def split(self, t: Tensor) -> list[Tensor]:
        out, off = [], 0
        for size in self.head_sizes:
            out.append(t[..., off:off + size])
            off += size
        return out

    def heads(self, x, tau: float, noise: np.ndarray | None = None,
              rng: np.random.Generator | None = None, hard: bool = False) -> list[Tensor]:
        """Per-head Gumbel-softmax outputs. ``noise`` has the full logits shape."""
        lg = self.logits(x)
        if noise is None:
            noise = sample_gumbel(lg.shape, rng)
        noise_heads = np.split(noise, np.cumsum(self.head_sizes)[:-1], axis=-1)
        return [gumbel_softmax(h, tau, noise=g, hard=hard) for h, g in zip(self.split(lg), noise_heads)]

    def predict_indices(self, x) -> np.ndarray:
        with no_grad():
            lg = self.logits(x)
        return np.stack([h.data.argmax(axis=-1) for h in self.split(lg)], axis=-1)


class CostEstNet(Module):
    _buffers = ("log_mean", "log_std")

    def __init__(self, n_in: int, width: int = 256, seed: int = 0):
        self.trunk = ResidualMLP(n_in, width, 3, np.random.default_rng(seed), batchnorm=True)
        # start at the geometric-mean prediction so early MSRE gradients stay bounded
        self.trunk.dense[-1].weight.data *= 0.01
        self.log_mean = np.zeros(3)
        self.log_std = np.ones(3)

    def fit_scaler(self, costs: np.ndarray):
        logs = np.log(costs)
        self.log_mean = logs.mean(axis=0)
        self.log_std = np.maximum(logs.std(axis=0), 1e-6)

    def __call__(self, x) -> Tensor:
        return exp(self.trunk(x) * self.log_std + self.log_mean)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.01
    optimizer: str = "sgd"  # "sgd" | "adam"
    momentum: float = 0.9
    schedule: str = "step_decay"  # step_decay | cosine | constant
    decay_every: int = 20
    decay_gamma: float = 0.1
    tau_start: float = 5.0
    tau_end: float = 0.5
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        return lr_schedule(self.schedule, self.lr, epoch, self.epochs, self.decay_gamma,
                           self.decay_every)

    def tau_at(self, epoch: int) -> float:
        if self.epochs <= 1:
            return self.tau_end
        return self.tau_start + (self.tau_end - self.tau_start) * epoch / (self.epochs - 1)


def default_hwgen_config(**kw) -> TrainConfig:
    return TrainConfig(**{"epochs": 60, "batch_size": 128, "lr": 0.01, "optimizer": "sgd",
                          "schedule": "step_decay", "decay_every": 20, **kw})


def default_costest_config(**kw) -> TrainConfig:
    return TrainConfig(**{"epochs": 40, "batch_size": 256, "lr": 3e-3, "optimizer": "adam",
                          "schedule": "cosine", **kw})


def head_labels(hw_onehot: np.ndarray, head_sizes) -> list[np.ndarray]:
    parts = np.split(hw_onehot, np.cumsum(head_sizes)[:-1], axis=-1)
    return [p.argmax(axis=-1) for p in parts]


def _make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.lr, momentum=cfg.momentum)
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def _batches(n: int, batch_size: int, rng: np.random.Generator, drop_singleton: bool):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if drop_singleton and len(idx) < 2:
            continue
        yield idx


def hwgen_accuracy(net: HwGenNet, data: Dataset) -> dict[str, float]:
    pred = net.predict_indices(data.arch)
    labels = head_labels(data.hw, net.head_sizes)
    return {name: 100.0 * float(np.mean(pred[:, i] == labels[i])) for i, name in enumerate(HEAD_NAMES)}


def regression_accuracy(pred: np.ndarray, truth: np.ndarray) -> dict[str, float]:
    """(1 - mean |1 - pred/truth|) * 100 per metric."""
    rel = np.abs(1.0 - pred / truth).mean(axis=0)
    return {name: 100.0 * (1.0 - float(r)) for name, r in zip(METRIC_NAMES, rel)}


def train_hwgen(data: Dataset, head_sizes, config: TrainConfig | None = None,
                width: int = 128, progress=None) -> tuple[HwGenNet, dict]:
    """Multi-head CE on Gumbel-softmax outputs with annealed temperature."""
    cfg = config or default_hwgen_config()
    data = data.opt_rows()
    if len(data) == 0:
        raise ValueError("hardware-generation training needs at least one 'opt' row")
    net = HwGenNet(data.arch.shape[1], head_sizes, width, seed=cfg.seed)
    labels = head_labels(data.hw, net.head_sizes)
    opt = _make_optimizer(cfg, net.parameters())
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        tau = cfg.tau_at(epoch)
        total, count = 0.0, 0
        for idx in _batches(len(data), cfg.batch_size, rng, drop_singleton=False):
            lg = net.logits(data.arch[idx])
            noise = sample_gumbel(lg.shape, rng)
            # CE on the Gumbel-softmax output: log p = log_softmax((logits + g) / tau)
            loss = None
            for h, g, lb in zip(net.split(lg), net.split(Tensor(noise)), labels):
                lp = log_softmax((h + g) * (1.0 / tau), axis=-1)
                term = -(lp[np.arange(len(idx)), lb[idx]].mean())
                loss = term if loss is None else loss + term
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        if progress:
            progress(f"hwgen epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.4f}")
    net.eval()
    return net, {"train_loss": history, "train_accuracy": hwgen_accuracy(net, data)}


def train_costest(data: Dataset, config: TrainConfig | None = None, feature_forwarding: bool = True,
                  width: int = 256, progress=None) -> tuple[CostEstNet, dict]:
    """MSRE regression of (latency, energy, area).

    With forwarding the net sees ``arch ++ hw`` on every row; without it sees
    only ``arch`` and is trained on ``opt`` rows (costs at the optimal design).
    """
    cfg = config or default_costest_config()
    if not feature_forwarding:
        data = data.opt_rows()
    if len(data) == 0:
        raise ValueError("cost-estimation training needs at least one row")
    if np.any(~(data.costs > 0)):
        raise ValueError("ground-truth costs must be strictly positive")
    x = np.hstack([data.arch, data.hw]) if feature_forwarding else data.arch
    net = CostEstNet(x.shape[1], width, seed=cfg.seed)
    net.fit_scaler(data.costs)
    opt = _make_optimizer(cfg, net.parameters())
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    if len(x) < 2:
        # batch norm cannot estimate batch statistics from one row; duplicate it
        x = np.repeat(x, 2, axis=0)
        data = Dataset(*(np.repeat(a, 2, axis=0) for a in (data.net_id, data.kind, data.arch,
                                                            data.hw, data.costs)))
    for epoch in range(cfg.epochs):
        net.train()
        opt.lr = cfg.lr_at(epoch)
        total, count = 0.0, 0
        for idx in _batches(len(x), cfg.batch_size, rng, drop_singleton=True):
            loss = msre_loss(net(x[idx]), data.costs[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / max(count, 1))
        if progress:
            progress(f"costest{'' if feature_forwarding else '-nf'} epoch {epoch + 1}/{cfg.epochs} "
                     f"msre {history[-1]:.5f}")
    net.eval()
    with no_grad():
        pred = net(x).data
    return net, {"train_loss": history, "train_accuracy": regression_accuracy(pred, data.costs)}


@dataclass
class EvaluatorModel:
    hwgen: HwGenNet
    costest: CostEstNet
    arch_space: ArchSpace
    hw_space: HwSpace
    cost_fn: CostFunctionSpec
    costest_nf: CostEstNet | None = None
    tau: float = 0.5
    noise_seed: int = 0
    metadata: dict = field(default_factory=dict)
    forwarding: bool = True

    def __post_init__(self):
        if not self.forwarding and self.costest_nf is None:
            raise ValueError("an evaluator without forwarding needs the arch-only cost net")
        self.freeze()
        self._rng = np.random.default_rng(self.noise_seed)

    def freeze(self):
        for net in (self.hwgen, self.costest, self.costest_nf):
            if net is None:
                continue
            net.eval()
            for p in net.parameters():
                p.requires_grad = False

    @property
    def n_arch(self) -> int:
        return self.arch_space.encoding_size

    def reset_noise(self, seed: int | None = None):
        self._rng = np.random.default_rng(self.noise_seed if seed is None else seed)

    def _as_batch(self, arch_encoding) -> tuple[Tensor, bool]:
        """Accept (n_arch,), (positions, 7), (B, n_arch) or (B, positions, 7)."""
        x = as_tensor(arch_encoding)
        if x.ndim >= 2 and x.shape[-2:] == (self.arch_space.positions, N_OPS):
            x = x.reshape(x.shape[:-2] + (self.n_arch,))
        if x.shape[-1] != self.n_arch:
            raise ValueError(f"encoding has {x.shape[-1]} entries, evaluator expects {self.n_arch}")
        single = x.ndim == 1
        return (x.reshape(1, self.n_arch) if single else x), single

    def hw_vectors(self, arch_encoding, noise: np.ndarray | None = None,
                   rng: np.random.Generator | None = None, hard: bool = False) -> Tensor:
        x, single = self._as_batch(arch_encoding)
        if noise is None:
            noise = sample_gumbel((x.shape[0], sum(self.hwgen.head_sizes)), rng or self._rng)
        hw = concat(self.hwgen.heads(x, self.tau, noise=np.reshape(noise, (x.shape[0], -1)), hard=hard),
                    axis=-1)
        return hw[0] if single else hw

    def evaluate_end_to_end(self, arch_encoding, noise: np.ndarray | None = None,
                            rng: np.random.Generator | None = None) -> Tensor:
        """Differentiable ``(latency, energy, area)``; Gumbel noise resampled unless given."""
        x, single = self._as_batch(arch_encoding)
        if self.forwarding:
            hw = self.hw_vectors(x, noise=noise, rng=rng)
            out = self.costest(concat([x, hw], axis=-1))
        else:
            out = self.costest_nf(x)
        return out[0] if single else out

    def metrics(self, arch_encoding, noise=None) -> CostMetrics:
        with no_grad():
            out = self.evaluate_end_to_end(np.asarray(arch_encoding, dtype=float).ravel(), noise=noise)
        return CostMetrics(*(float(v) for v in out.data))

    def predict(self, arch_batch: np.ndarray, noise_seed: int = 0) -> np.ndarray:
        """Batched, graph-free end-to-end inference with frozen noise."""
        arch_batch = np.asarray(arch_batch, dtype=float).reshape(-1, self.n_arch)
        noise = sample_gumbel((len(arch_batch), sum(self.hwgen.head_sizes)),
                              np.random.default_rng(noise_seed))
        with no_grad():
            return self.evaluate_end_to_end(arch_batch, noise=noise).data

    def predict_hw(self, arch_encoding):
        idx = self.hwgen.predict_indices(np.asarray(arch_encoding, dtype=float).reshape(1, -1))[0]
        return self.hw_space.from_head_indices(idx)

    # -- serialisation -------------------------------------------------
    def to_bytes(self) -> bytes:
        tensors = {f"hwgen.{k}": v for k, v in self.hwgen.state_dict().items()}
        tensors.update({f"costest.{k}": v for k, v in self.costest.state_dict().items()})
        if self.costest_nf is not None:
            tensors.update({f"costest_nf.{k}": v for k, v in self.costest_nf.state_dict().items()})
        meta = {"arch_space": self.arch_space.to_dict(), "hw_space": self.hw_space.to_dict(),
                "cost_fn": self.cost_fn.to_dict(), "tau": self.tau, "noise_seed": self.noise_seed,
                "hwgen_width": int(self.hwgen.trunk.dense[0].weight.shape[0]),
                "costest_width": int(self.costest.trunk.dense[0].weight.shape[0]),
                "arch_fingerprint": self.arch_space.fingerprint(),
                "has_nf": self.costest_nf is not None, "forwarding": self.forwarding,
                "metadata": self.metadata}
        return dumps(tensors, meta)

    def save(self, path) -> str:
        data = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "EvaluatorModel":
        tensors, meta = loads(data)
        arch_space = ArchSpace.from_dict(meta["arch_space"])
        if meta.get("arch_fingerprint") != arch_space.fingerprint():
            raise ValueError("checkpoint architecture-space fingerprint mismatch")
        hw_space = HwSpace.from_dict(meta["hw_space"])
        n_arch = arch_space.encoding_size
        hwgen = HwGenNet(n_arch, hw_space.head_sizes, meta["hwgen_width"])
        hwgen.load_state_dict(_prefixed(tensors, "hwgen."))
        costest = CostEstNet(n_arch + hw_space.onehot_size, meta["costest_width"])
        costest.load_state_dict(_prefixed(tensors, "costest."))
        nf = None
        if meta.get("has_nf"):
            nf = CostEstNet(n_arch, meta["costest_width"])
            nf.load_state_dict(_prefixed(tensors, "costest_nf."))
        return cls(hwgen, costest, arch_space, hw_space, CostFunctionSpec.from_dict(meta["cost_fn"]),
                   nf, meta["tau"], meta["noise_seed"], meta.get("metadata", {}),
                   meta.get("forwarding", True))

    @classmethod
    def load(cls, path) -> "EvaluatorModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _prefixed(tensors: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}


@dataclass
class EvaluatorTrainConfig:
    hwgen: TrainConfig = field(default_factory=default_hwgen_config)
    costest: TrainConfig = field(default_factory=default_costest_config)
    hwgen_width: int = 128
    costest_width: int = 256
    train_no_forwarding: bool = True
    val_fraction: float = 0.2
    split_seed: int = 0
    tau: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluatorTrainConfig":
        d = dict(d)
        hw = TrainConfig(**{**asdict(default_hwgen_config()), **d.pop("hwgen", {})})
        ce = TrainConfig(**{**asdict(default_costest_config()), **d.pop("costest", {})})
        return cls(hwgen=hw, costest=ce, **d)


def train_evaluator(data: Dataset, arch_space: ArchSpace, hw_space: HwSpace,
                    cost_fn: CostFunctionSpec, config: EvaluatorTrainConfig | None = None,
                    progress=None) -> tuple[EvaluatorModel, Dataset]:
    """Split by network, train both nets (plus the no-forwarding ablation).

    Returns the model and the held-out validation split.
    """
    cfg = config or EvaluatorTrainConfig()
    if len(data) == 0:
        raise ValueError("empty dataset")
    train, val = data.split(cfg.val_fraction, cfg.split_seed)
    hwgen, hw_rep = train_hwgen(train, hw_space.head_sizes, cfg.hwgen, cfg.hwgen_width, progress)
    costest, ce_rep = train_costest(train, cfg.costest, True, cfg.costest_width, progress)
    nf = None
    if cfg.train_no_forwarding:
        nf, _ = train_costest(train, cfg.costest, False, cfg.costest_width, progress)
    meta = {"train_config": cfg.to_dict(), "train_networks": int(len(np.unique(train.net_id))),
            "train_arch_codes": sorted(set(arch_codes(train.arch).tolist())),
            "val_networks": int(len(np.unique(val.net_id))),
            "hwgen_train_accuracy": hw_rep["train_accuracy"],
            "costest_train_accuracy": ce_rep["train_accuracy"]}
    model = EvaluatorModel(hwgen, costest, arch_space, hw_space, cost_fn, nf, cfg.tau,
                           metadata=meta)
    return model, val


@dataclass
class AccuracyReport:
    hwgen: dict[str, float]
    costest_nf: dict[str, float] | None
    costest_ff: dict[str, float]
    overall: dict[str, float]

    COLUMNS = ("network",) + HEAD_NAMES + METRIC_NAMES

    def rows(self) -> list[list[str]]:
        def fmt(d, keys):
            return ["" if d is None or k not in d else f"{d[k]:.4f}" for k in keys]
        blanks_m = [""] * 3
        blanks_h = [""] * 4
        return [
            ["hardware_generation"] + fmt(self.hwgen, HEAD_NAMES) + blanks_m,
            ["cost_estimation_without_forwarding"] + blanks_h + fmt(self.costest_nf, METRIC_NAMES),
            ["cost_estimation_with_forwarding"] + blanks_h + fmt(self.costest_ff, METRIC_NAMES),
            ["overall_evaluator"] + blanks_h + fmt(self.overall, METRIC_NAMES),
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.COLUMNS)
        wr.writerows(self.rows())
        return buf.getvalue()

    def mean_forwarding_gain(self) -> float:
        if self.costest_nf is None:
            raise ValueError("no ablation model in report")
        return float(np.mean([self.costest_ff[m] - self.costest_nf[m] for m in METRIC_NAMES]))


def arch_codes(arch: np.ndarray) -> np.ndarray:
    """Integer id per one-hot row: position ``i`` contributes ``op * 7**i``."""
    idx = np.asarray(arch).reshape(len(arch), -1, N_OPS).argmax(axis=-1)
    return (idx * N_OPS ** np.arange(idx.shape[1])).sum(axis=1).astype(np.int64)


def accuracy_report(model: EvaluatorModel, val: Dataset, train: Dataset | None = None,
                    noise_seed: int = 0) -> AccuracyReport:
    """Four-row accuracy table on validation ``opt`` rows.

    If ``train`` is given, network ids and encodings must be disjoint from
    ``val``; the training architectures recorded in the model metadata are
    always checked.
    """
    known = model.metadata.get("train_arch_codes")
    if known and np.isin(arch_codes(val.arch), known).any():
        raise ValueError("validation split contains architectures the evaluator was trained on")
    if train is not None:
        if np.intersect1d(train.net_id, val.net_id).size:
            raise ValueError("validation split shares network ids with training split")
        tr = {row.tobytes() for row in train.arch}
        if any(row.tobytes() in tr for row in val.arch):
            raise ValueError("validation split shares architectures with training split")
    opt = val.opt_rows()
    if len(opt) == 0:
        raise ValueError("validation split has no 'opt' rows")
    hw_acc = hwgen_accuracy(model.hwgen, opt)
    with no_grad():
        ff = model.costest(np.hstack([opt.arch, opt.hw])).data
        nf = model.costest_nf(opt.arch).data if model.costest_nf is not None else None
    overall = model.predict(opt.arch, noise_seed=noise_seed)
    return AccuracyReport(hw_acc, None if nf is None else regression_accuracy(nf, opt.costs),
                          regression_accuracy(ff, opt.costs), regression_accuracy(overall, opt.costs))
