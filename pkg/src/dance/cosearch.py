"""Differentiable architecture/accelerator co-search on a toy task.

The supernet keeps architecture logits ``alpha`` (positions x 7) and, per
position, one small residual MLP block per non-Zero candidate op acting on a
fixed random projection of the input images. Heavier ops get wider blocks,
so the task loss prefers them while the hardware term prefers cheap or Zero
ops. The hardware term is ``cost_hw(evaluator(relaxed(alpha)))`` through the
frozen evaluator.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .costfn import CostFunctionSpec, cost_hw, cost_of
from .costmodel import DATAFLOWS, DEFAULT_CONSTANTS, AcceleratorConfig, CostMetrics, CostModelConstants
from .evaluator import EvaluatorModel
from .nn import (SGD, Adam, Dense, Module, Tensor, concat, gumbel_softmax, log_softmax,
                 lr_schedule, no_grad, relu, sample_gumbel)
from .oracle import HwSpace, optimal_hw
from .workload import (N_OPS, OPS, ZERO_INDEX, ArchSpace, CandidateOp, arch_to_json,
                       encode_network, network_layers)

logger = logging.getLogger(__name__)

LOSS_VARIANTS = ("dance", "nas", "edd_original", "edd_fixed")
MODES = ("soft", "straight_through")


class SearchDiverged(RuntimeError):
    """Raised when a search step produces a non-finite loss; carries the trace so far."""

    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


# -- toy task -----------------------------------------------------------------

@dataclass
class ToyTask:
    """Projected features and labels for the train / alpha / validation splits."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_search: np.ndarray
    y_search: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    n_classes: int
    seed: int

    @property
    def feat_dim(self) -> int:
        return self.x_train.shape[1]


def toy_images(n: int, rng: np.random.Generator, image_hw: int = 16, channels: int = 3,
               n_classes: int = 4, noise: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Oriented gratings, one orientation and frequency per class, random phase and colour."""
    labels = rng.permutation(np.arange(n) % n_classes)
    yy, xx = np.mgrid[0:image_hw, 0:image_hw] / image_hw
    theta = np.pi * np.arange(n_classes) / n_classes
    freq = 2.0 + np.arange(n_classes) % 2
    phase = rng.uniform(0, 2 * np.pi, n)
    gain = rng.uniform(0.5, 1.5, (n, channels))
    t = labels[:, None, None]
    arg = 2 * np.pi * freq[t] * (xx * np.cos(theta[t]) + yy * np.sin(theta[t])) + phase[:, None, None]
    img = np.cos(arg)[:, None, :, :] * gain[:, :, None, None]
    img = img + noise * rng.standard_normal(img.shape)
    return img.reshape(n, -1), labels


def make_toy_task(seed: int = 0, n_train: int = 1024, n_search: int = 512, n_val: int = 512,
                  feat_dim: int = 32, noise: float = 0.8, n_classes: int = 4) -> ToyTask:
    """Deterministic given ``seed``; classes balanced in every split."""
    rng = np.random.default_rng([seed, 101])
    splits = [toy_images(n, rng, n_classes=n_classes, noise=noise) for n in (n_train, n_search, n_val)]
    dim = splits[0][0].shape[1]
    proj = rng.standard_normal((dim, feat_dim)) / math.sqrt(dim)
    feats = [x @ proj for x, _ in splits]
    scale = feats[0].std()
    (xt, yt), (xs, ys), (xv, yv) = [(f / scale, y) for f, (_, y) in zip(feats, splits)]
    return ToyTask(xt, yt, xs, ys, xv, yv, n_classes, seed)


# -- supernet -------------------------------------------------------------------

def op_hidden_width(op: CandidateOp) -> int:
    """Task capacity grows with kernel size and expansion factor."""
    return 0 if op.is_zero else op.kernel * op.expand


class OpBlock(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.inner = Dense(dim, hidden, rng)
        self.outer = Dense(hidden, dim, rng)
        self.outer.weight.data *= 0.5

    def __call__(self, h) -> Tensor:
        return self.outer(relu(self.inner(h)))


class SuperNet(Module):
    """Residual chain of mixed positions followed by a linear classifier."""

    def __init__(self, positions: int, feat_dim: int, n_classes: int, seed: int = 0):
        rng = np.random.default_rng([seed, 202])
        self.positions = positions
        self.alpha = Tensor(np.zeros((positions, N_OPS)), requires_grad=True)
        self.blocks = [[OpBlock(feat_dim, op_hidden_width(op), rng) for op in OPS if not op.is_zero]
                       for _ in range(positions)]
        self.head = Dense(feat_dim, n_classes, rng)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, row in enumerate(self.blocks):
            for j, block in enumerate(row):
                out.update(block.named_parameters(f"{prefix}blocks.{i}.{j}."))
        out.update(self.head.named_parameters(f"{prefix}head."))
        out[prefix + "alpha"] = self.alpha
        return out

    def weight_parameters(self) -> list[Tensor]:
        return [p for k, p in self.named_parameters().items() if k != "alpha"]

    def weight_norm_sq(self) -> Tensor:
        total = None
        for p in self.weight_parameters():
            term = (p * p).sum()
            total = term if total is None else total + term
        return total

    def __call__(self, x, mix) -> Tensor:
        """Logits for ``x`` with per-position op weights ``mix`` (positions x 7).

        The Zero op contributes nothing beyond the identity skip. Ops whose
        weight is exactly zero and carries no gradient are skipped.
        """
        mix_data = mix.data if isinstance(mix, Tensor) else np.asarray(mix)
        track = isinstance(mix, Tensor) and mix.requires_grad
        h = x if isinstance(x, Tensor) else Tensor(x)
        for i in range(self.positions):
            acc = h
            k = 0
            for j, op in enumerate(OPS):
                if op.is_zero:
                    continue
                block = self.blocks[i][k]
                k += 1
                if mix_data[i, j] == 0.0 and not track:
                    continue
                weight = mix[i, j] if isinstance(mix, Tensor) else float(mix_data[i, j])
                acc = acc + block(h) * weight
            h = acc
        return self.head(h)


def cross_entropy(logits: Tensor, labels: np.ndarray, smoothing: float = 0.0) -> Tensor:
    lp = log_softmax(logits, axis=-1)
    n = len(labels)
    nll = -(lp[np.arange(n), labels].mean())
    if smoothing:
        nll = nll * (1.0 - smoothing) + (-(lp.mean(axis=-1).mean())) * smoothing
    return nll


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return 100.0 * float(np.mean(np.argmax(logits, axis=-1) == labels))


# -- relaxation and losses ------------------------------------------------------------

def relaxed_arch_encoding(alpha, mode: str = "soft", tau: float = 1.0,
                          rng: np.random.Generator | None = None,
                          noise: np.ndarray | None = None) -> Tensor:
    """Per-position Gumbel softmax of ``alpha``; ``straight_through`` is hard forward, soft backward."""
    if mode not in MODES:
        raise ValueError(f"unknown relaxation mode {mode!r}")
    return gumbel_softmax(alpha, tau, rng=rng, noise=noise, hard=mode == "straight_through")


def _fixed_heads(hw_space: HwSpace, dataflow: str, rf_size: int) -> tuple[np.ndarray, np.ndarray]:
    df = np.zeros(len(hw_space.dataflows))
    df[hw_space.dataflows.index(dataflow)] = 1.0
    rf = np.zeros(len(hw_space.rf_values))
    rf[hw_space.rf_values.index(rf_size)] = 1.0
    return df, rf


def evaluator_metrics(evaluator: EvaluatorModel, encoding, noise: np.ndarray | None = None,
                      rng: np.random.Generator | None = None,
                      fixed_df_rf: tuple[str, int] | None = None) -> Tensor:
    """Differentiable (latency, energy, area) of one encoding.

    ``fixed_df_rf`` pins the dataflow and RF heads to constants so that only
    the PE-count heads follow the architecture.
    """
    if fixed_df_rf is None:
        return evaluator.evaluate_end_to_end(encoding, noise=noise, rng=rng)
    x, _ = evaluator._as_batch(encoding)
    hw = evaluator.hw_vectors(x, noise=noise, rng=rng)
    sizes = evaluator.hw_space.head_sizes
    off = np.cumsum((0,) + sizes)
    df, rf = _fixed_heads(evaluator.hw_space, *fixed_df_rf)
    n = x.shape[0]
    hw = concat([Tensor(np.tile(df, (n, 1))), hw[:, off[1]:off[3]], Tensor(np.tile(rf, (n, 1)))],
                axis=-1)
    return evaluator.costest(concat([x, hw], axis=-1))[0]


def hardware_cost(evaluator: EvaluatorModel, encoding, spec: CostFunctionSpec,
                  noise: np.ndarray | None = None, rng: np.random.Generator | None = None,
                  fixed_df_rf: tuple[str, int] | None = None) -> Tensor:
    m = evaluator_metrics(evaluator, encoding.reshape(-1) if isinstance(encoding, Tensor) else
                          np.ravel(encoding), noise=noise, rng=rng, fixed_df_rf=fixed_df_rf)
    return cost_hw(m[0], m[1], m[2], spec)


def combined_loss(batch, supernet: SuperNet, evaluator: EvaluatorModel | None,
                  spec: CostFunctionSpec, lam1: float, lam2: float, encoding: Tensor | None = None,
                  tau: float = 1.0, mode: str = "soft", rng: np.random.Generator | None = None,
                  eval_noise: np.ndarray | None = None, smoothing: float = 0.0,
                  fixed_df_rf: tuple[str, int] | None = None) -> tuple[Tensor, dict]:
    """``CE + lam1 * ||w||^2 + lam2 * cost_hw(evaluator(relaxed(alpha)))``.

    ``encoding`` defaults to a fresh relaxation of ``supernet.alpha``. The
    hardware term is skipped entirely when ``lam2 == 0``.
    """
    x, y = batch
    if encoding is None:
        encoding = relaxed_arch_encoding(supernet.alpha, mode, tau, rng=rng)
    ce = cross_entropy(supernet(x, encoding), y, smoothing)
    loss = ce
    parts = {"ce": ce.item(), "cost_hw": float("nan")}
    if lam1:
        loss = loss + supernet.weight_norm_sq() * lam1
    if lam2:
        if evaluator is None:
            raise ValueError("a hardware penalty needs an evaluator")
        hw = hardware_cost(evaluator, encoding, spec, noise=eval_noise, fixed_df_rf=fixed_df_rf)
        parts["cost_hw"] = hw.item()
        loss = loss + hw * lam2
    _check_finite(loss, parts)
    return loss, parts


def edd_loss(batch, supernet: SuperNet, evaluator: EvaluatorModel, lam2: float,
             variant: str = "original", spec: CostFunctionSpec | None = None, lam1: float = 0.0,
             encoding: Tensor | None = None, tau: float = 1.0, mode: str = "soft",
             rng: np.random.Generator | None = None, eval_noise: np.ndarray | None = None,
             fixed_df_rf: tuple[str, int] = ("WS", 16)) -> tuple[Tensor, dict]:
    """Baseline losses.

    ``original``: ``lam2 * CE * latency``, so ``lam2`` only rescales the whole
    loss and never trades the two terms against each other. ``fixed``: the
    additive form, but the evaluator sees the searched PE counts only while
    dataflow and RF stay pinned to ``fixed_df_rf``.
    """
    if variant == "fixed":
        return combined_loss(batch, supernet, evaluator, spec or CostFunctionSpec.edap(), lam1, lam2,
                             encoding, tau, mode, rng, eval_noise, fixed_df_rf=fixed_df_rf)
    if variant != "original":
        raise ValueError(f"unknown EDD variant {variant!r}")
    x, y = batch
    if encoding is None:
        encoding = relaxed_arch_encoding(supernet.alpha, mode, tau, rng=rng)
    ce = cross_entropy(supernet(x, encoding), y)
    lat = evaluator_metrics(evaluator, encoding.reshape(-1), noise=eval_noise)[0]
    loss = ce * lat * lam2
    parts = {"ce": ce.item(), "cost_hw": lat.item()}
    if lam1:
        loss = loss + supernet.weight_norm_sq() * lam1
    _check_finite(loss, parts)
    return loss, parts


def _check_finite(loss: Tensor, parts: dict):
    if not np.isfinite(loss.data).all():
        raise FloatingPointError(f"non-finite search loss ({parts})")


# -- configuration ------------------------------------------------------------------

@dataclass
class SearchConfig:
    lambda1: float = 1e-4
    lambda2: float = 0.0
    lambda2_small: float | None = None  # default: lambda2 / 100
    warmup_epochs: int | None = None  # default: epochs // 3; 0 disables warm-up
    warmup_shape: str = "step"  # step | ramp
    epochs: int = 10
    batch_size: int = 64
    w_lr: float = 0.05
    w_momentum: float = 0.9
    nesterov: bool = False
    w_schedule: str = "cosine"
    alpha_lr: float = 0.05
    # a cool start lets the mixture commit early, which is what a lambda2 warm-up guards against
    tau_start: float = 1.0
    tau_end: float = 0.5
    mode: str = "soft"
    loss_variant: str = "dance"
    cost: str = "edap"
    seed: int = 0
    label_smoothing: float = 0.0
    retrain_epochs: int = 30
    edd_dataflow: str = "WS"
    edd_rf: int = 16
    task_train: int = 1024
    task_search: int = 512
    task_val: int = 512
    feat_dim: int = 32
    task_noise: float = 0.8

    def __post_init__(self):
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.warmup_shape not in ("step", "ramp"):
            raise ValueError("warmup_shape must be 'step' or 'ramp'")
        if self.epochs < 1 or self.batch_size < 2 or self.retrain_epochs < 1:
            raise ValueError("epochs, retrain_epochs must be >= 1 and batch_size >= 2")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if not (self.tau_start > 0 and self.tau_end > 0):
            raise ValueError("temperatures must be positive")
        if self.small_lambda2 > self.lambda2:
            raise ValueError("warm-up lambda2 must not exceed the target lambda2")
        if self.warmup_epochs is not None and not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warm-up epochs must satisfy 0 <= warmup_epochs < epochs")
        if self.edd_dataflow not in DATAFLOWS:
            raise ValueError(f"edd_dataflow must be one of {DATAFLOWS}")
        CostFunctionSpec.parse(self.cost)

    @property
    def small_lambda2(self) -> float:
        return self.lambda2 / 100.0 if self.lambda2_small is None else self.lambda2_small

    @property
    def warmup_length(self) -> int:
        return self.epochs // 3 if self.warmup_epochs is None else self.warmup_epochs

    @property
    def cost_spec(self) -> CostFunctionSpec:
        return CostFunctionSpec.parse(self.cost)

    def tau_at(self, epoch: int) -> float:
        if self.epochs <= 1:
            return self.tau_end
        frac = epoch / (self.epochs - 1)
        return self.tau_start * (self.tau_end / self.tau_start) ** frac

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown search config keys {sorted(unknown)}")
        return cls(**d)


def warmup_lambda2(epoch: int, config: SearchConfig) -> float:
    """Hold lambda2 small for the first ``warmup_length`` epochs, then the target."""
    n = config.warmup_length
    if epoch >= n:
        return config.lambda2
    if config.warmup_shape == "ramp":
        return config.small_lambda2 + (config.lambda2 - config.small_lambda2) * epoch / n
    return config.small_lambda2


def make_task(config: SearchConfig) -> ToyTask:
    return make_toy_task(config.seed, config.task_train, config.task_search, config.task_val,
                         config.feat_dim, config.task_noise)


# -- search -------------------------------------------------------------------------

TRACE_FIELDS = ("epoch", "ce", "cost_hw", "lambda2", "tau", "alpha_ce")


@dataclass
class SearchResult:
    final_arch: list[CandidateOp]
    alpha: np.ndarray
    alpha_trace: np.ndarray  # (epochs, positions, 7), alpha after each epoch
    trace: list[dict]
    config: SearchConfig
    arch_space: ArchSpace
    search_val_accuracy: float = float("nan")

    @property
    def zero_count(self) -> int:
        return sum(op.is_zero for op in self.final_arch)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        cols = list(TRACE_FIELDS) + [f"argmax_{i}" for i in range(self.arch_space.positions)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.trace:
            w.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()

    def arch_json(self) -> dict:
        doc = arch_to_json(self.final_arch, self.arch_space)
        doc["search"] = {"config": self.config.to_dict(),
                         "alpha": [[float(v) for v in row] for row in self.alpha],
                         "search_val_accuracy": self.search_val_accuracy}
        return doc

    def save(self, out_dir) -> None:
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "arch.json").write_text(json.dumps(self.arch_json(), indent=2, sort_keys=True) + "\n")
        (out / "trace.csv").write_text(self.trace_csv())


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.9g}"


def _stage_loss(batch, net, evaluator, cfg, lam2, encoding, eval_noise, spec):
    if cfg.loss_variant == "nas":
        return combined_loss(batch, net, None, spec, cfg.lambda1, 0.0, encoding,
                             smoothing=cfg.label_smoothing)
    if cfg.loss_variant == "edd_original":
        return edd_loss(batch, net, evaluator, lam2, "original", spec, cfg.lambda1, encoding,
                        eval_noise=eval_noise)
    fixed = (cfg.edd_dataflow, cfg.edd_rf) if cfg.loss_variant == "edd_fixed" else None
    return combined_loss(batch, net, evaluator, spec, cfg.lambda1, lam2, encoding,
                         eval_noise=eval_noise, smoothing=cfg.label_smoothing, fixed_df_rf=fixed)


def search(task: ToyTask, supernet: SuperNet | None, evaluator: EvaluatorModel | None,
           config: SearchConfig, arch_space: ArchSpace | None = None, progress=None) -> SearchResult:
    """Alternate one weight step (train batch) and one alpha step (held-out batch) per batch.

    Random streams are split (data order, architecture sampling, evaluator
    noise) so a run with ``lambda2 == 0`` consumes exactly the same data and
    architecture samples as a plain NAS run.
    """
    cfg = config
    arch_space = arch_space or (evaluator.arch_space if evaluator is not None else ArchSpace())
    if evaluator is not None and evaluator.arch_space.fingerprint() != arch_space.fingerprint():
        raise ValueError("evaluator was trained on a different architecture space")
    needs_eval = cfg.loss_variant != "nas" and cfg.lambda2 > 0
    if needs_eval and evaluator is None:
        raise ValueError(f"loss variant {cfg.loss_variant!r} with lambda2 > 0 needs an evaluator")
    spec = cfg.cost_spec
    net = supernet or SuperNet(arch_space.positions, task.feat_dim, task.n_classes, cfg.seed)
    w_params = net.weight_parameters()
    w_opt = SGD(w_params, cfg.w_lr, momentum=cfg.w_momentum, nesterov=cfg.nesterov)
    a_opt = Adam([net.alpha], cfg.alpha_lr)
    rng_data = np.random.default_rng([cfg.seed, 1])
    rng_arch = np.random.default_rng([cfg.seed, 2])
    rng_eval = np.random.default_rng([cfg.seed, 3])
    n_noise = sum(evaluator.hw_space.head_sizes) if evaluator is not None else 0

    trace, alpha_trace = [], []
    n_train, n_search = len(task.y_train), len(task.y_search)
    for epoch in range(cfg.epochs):
        tau = cfg.tau_at(epoch)
        lam2 = warmup_lambda2(epoch, cfg) if cfg.loss_variant != "nas" else 0.0
        w_opt.lr = lr_schedule(cfg.w_schedule, cfg.w_lr, epoch, cfg.epochs)
        perm_t = rng_data.permutation(n_train)
        perm_s = rng_data.permutation(n_search)
        n_batches = max(1, n_train // cfg.batch_size)
        ce_sum, a_ce_sum, hw_sum, hw_n = 0.0, 0.0, 0.0, 0
        for b in range(n_batches):
            it = perm_t[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            start = (b * cfg.batch_size) % n_search
            js = perm_s[np.arange(start, start + cfg.batch_size) % n_search]

            # weight step: alpha held fixed at a sampled relaxation
            mix = relaxed_arch_encoding(net.alpha.data, cfg.mode, tau, rng=rng_arch)
            noise = sample_gumbel((1, n_noise), rng_eval) if needs_eval and lam2 else None
            try:
                loss, parts = _weight_loss((task.x_train[it], task.y_train[it]), net, evaluator,
                                           cfg, lam2, mix, noise, spec)
            except FloatingPointError as exc:
                raise SearchDiverged(f"epoch {epoch}: {exc}", trace) from exc
            net.zero_grad()
            loss.backward()
            w_opt.step()
            ce_sum += parts["ce"]

            # architecture step on the held-out batch; weights act as constants
            for p in w_params:
                p.requires_grad = False
            try:
                enc = relaxed_arch_encoding(net.alpha, cfg.mode, tau, rng=rng_arch)
                noise = sample_gumbel((1, n_noise), rng_eval) if needs_eval and lam2 else None
                loss, parts = _stage_loss((task.x_search[js], task.y_search[js]), net, evaluator,
                                          cfg, lam2, enc, noise, spec)
            except FloatingPointError as exc:
                raise SearchDiverged(f"epoch {epoch}: {exc}", trace) from exc
            finally:
                for p in w_params:
                    p.requires_grad = True
            net.alpha.grad = None
            loss.backward()
            a_opt.step()
            a_ce_sum += parts["ce"]
            if not math.isnan(parts["cost_hw"]):
                hw_sum += parts["cost_hw"]
                hw_n += 1
        if not np.isfinite(net.alpha.data).all():
            raise SearchDiverged(f"epoch {epoch}: non-finite architecture parameters", trace)
        argmax = net.alpha.data.argmax(axis=1)
        row = {"epoch": epoch, "ce": ce_sum / n_batches, "cost_hw": hw_sum / hw_n if hw_n else float("nan"),
               "lambda2": float(lam2), "tau": float(tau), "alpha_ce": a_ce_sum / n_batches}
        row.update({f"argmax_{i}": OPS[int(j)].name for i, j in enumerate(argmax)})
        trace.append(row)
        alpha_trace.append(net.alpha.data.copy())
        if progress:
            progress(f"search epoch {epoch + 1}/{cfg.epochs} ce {row['ce']:.4f} "
                     f"cost_hw {row['cost_hw']:.4g} lambda2 {lam2:g} arch "
                     + ",".join(OPS[int(j)].name for j in argmax))

    final = [OPS[int(j)] for j in net.alpha.data.argmax(axis=1)]
    with no_grad():
        logits = net(task.x_val, encode_network(final, arch_space)).data
    return SearchResult(final, net.alpha.data.copy(), np.array(alpha_trace), trace, cfg, arch_space,
                        accuracy(logits, task.y_val))


def _weight_loss(batch, net, evaluator, cfg, lam2, mix, noise, spec):
    """Task loss seen by the weights; the hardware term has no weight gradient."""
    if cfg.loss_variant == "edd_original":
        # the multiplicative form also rescales the weight gradient by lam2 * latency
        return edd_loss(batch, net, evaluator, lam2, "original", spec, cfg.lambda1, mix,
                        eval_noise=noise) if lam2 else combined_loss(
            batch, net, None, spec, cfg.lambda1, 0.0, mix)
    return combined_loss(batch, net, None, spec, cfg.lambda1, 0.0, mix, smoothing=cfg.label_smoothing)


def retrain_accuracy(arch: list[CandidateOp], task: ToyTask, config: SearchConfig,
                     positions: int | None = None) -> float:
    """Train the discrete architecture from scratch and return validation accuracy (%).

    Initialisation and data order depend only on ``config.seed``, so the
    same architecture always scores the same.
    """
    positions = positions or len(arch)
    enc = np.zeros((positions, N_OPS))
    enc[np.arange(positions), [OPS.index(op) for op in arch]] = 1.0
    net = SuperNet(positions, task.feat_dim, task.n_classes, config.seed)
    params = net.weight_parameters()
    opt = SGD(params, config.w_lr, momentum=config.w_momentum, nesterov=config.nesterov)
    rng = np.random.default_rng([config.seed, 4])
    n = len(task.y_train)
    for epoch in range(config.retrain_epochs):
        opt.lr = lr_schedule(config.w_schedule, config.w_lr, epoch, config.retrain_epochs)
        perm = rng.permutation(n)
        for b in range(max(1, n // config.batch_size)):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            loss = cross_entropy(net(task.x_train[idx], enc), task.y_train[idx], config.label_smoothing)
            if config.lambda1:
                loss = loss + net.weight_norm_sq() * config.lambda1
            net.zero_grad()
            loss.backward()
            opt.step()
    with no_grad():
        logits = net(task.x_val, enc).data
    return accuracy(logits, task.y_val)


# -- finalisation -------------------------------------------------------------------

@dataclass
class FinalDesign:
    arch: list[CandidateOp]
    config: AcceleratorConfig
    metrics: CostMetrics
    cost_spec: CostFunctionSpec
    report: dict = field(default_factory=dict)

    @property
    def edap(self) -> float:
        return self.metrics.latency * self.metrics.energy * self.metrics.area

    @property
    def cost(self) -> float:
        return cost_of(self.metrics, self.cost_spec)


def finalize(final_arch: list[CandidateOp], cost_spec: CostFunctionSpec,
             arch_space: ArchSpace | None = None, evaluator: EvaluatorModel | None = None,
             hw_space: HwSpace | None = None, fixed_pe: tuple[int, int] | None = None,
             threads: int = 1, const: CostModelConstants = DEFAULT_CONSTANTS
             ) -> tuple[AcceleratorConfig, CostMetrics, dict]:
    """Exact hardware for the searched network, plus a surrogate-vs-oracle comparison.

    With ``fixed_pe`` only dataflow and RF are searched (the PE-only baseline);
    the report records which fields came from the search.
    """
    arch_space = arch_space or (evaluator.arch_space if evaluator is not None else ArchSpace())
    if all(op.is_zero for op in final_arch):
        raise ArchitectureCollapsed("the searched architecture selected Zero at every position; there is no "
                         "network to build hardware for. Lengthen the lambda2 warm-up or lower "
                         "lambda2 and search again.")
    hw_space = hw_space or (evaluator.hw_space if evaluator is not None else HwSpace())
    layers = network_layers(final_arch, arch_space)
    if fixed_pe is not None:
        hw_space = HwSpace(hw_space.dataflows, (int(fixed_pe[0]),), (int(fixed_pe[1]),),
                           hw_space.rf_values)
    accel, metrics = optimal_hw(layers, cost_spec, hw_space, const, threads=threads)
    report = {"oracle": metrics.to_dict(), "config": accel.to_dict(),
              "cost_hw": float(cost_of(metrics, cost_spec)), "cost_fn": str(cost_spec),
              "provenance": {"dataflow": "oracle", "rf_size": "oracle",
                             "pe_x": "search" if fixed_pe else "oracle",
                             "pe_y": "search" if fixed_pe else "oracle"}}
    if evaluator is not None:
        enc = encode_network(final_arch, arch_space).ravel()
        pred = evaluator.predict(enc[None, :])[0]
        surrogate = CostMetrics(*(float(v) for v in pred))
        truth = metrics.as_array()
        report["surrogate"] = surrogate.to_dict()
        report["relative_gap"] = {k: float(abs(p - t) / t) for k, p, t in
                                  zip(("latency", "energy", "area"), pred, truth)}
        report["surrogate_config"] = evaluator.predict_hw(enc).to_dict()
    return accel, metrics, report


class ArchitectureCollapsed(ValueError):
    """Search picked Zero everywhere, so there is no network to size hardware for."""


def collapsed_result(result: SearchResult, message: str, task: ToyTask | None = None) -> dict:
    """Record of a collapsed search: accuracy of the stem-only network, no hardware."""
    cfg = result.config
    acc = retrain_accuracy(result.final_arch, task or make_task(cfg), cfg)
    return {"arch": [op.name for op in result.final_arch], "method": method_tag(cfg),
            "loss_variant": cfg.loss_variant, "lambda2": cfg.lambda2, "seed": cfg.seed,
            "accuracy": acc, "accuracy_error": 100.0 - acc, "collapsed": True, "message": message}


def finalize_result(result: SearchResult, evaluator: EvaluatorModel | None, task: ToyTask | None = None,
                    threads: int = 1, const: CostModelConstants = DEFAULT_CONSTANTS) -> dict:
    """Finalize a search and retrain its architecture; returns the ``final.json`` document."""
    cfg = result.config
    spec = cfg.cost_spec
    fixed_pe = None
    if cfg.loss_variant == "edd_fixed":
        if evaluator is None:
            raise ValueError("the PE-only baseline needs the evaluator to read back searched PEs")
        enc = encode_network(result.final_arch, result.arch_space).ravel()
        searched = evaluator.predict_hw(enc)
        fixed_pe = (searched.pe_x, searched.pe_y)
    accel, metrics, report = finalize(result.final_arch, spec, result.arch_space, evaluator,
                                      fixed_pe=fixed_pe, threads=threads, const=const)
    task = task or make_task(cfg)
    acc = retrain_accuracy(result.final_arch, task, cfg)
    return {"arch": [op.name for op in result.final_arch], "method": method_tag(cfg),
            "loss_variant": cfg.loss_variant, "lambda2": cfg.lambda2, "seed": cfg.seed,
            "accuracy": acc, "accuracy_error": 100.0 - acc,
            "edap": metrics.latency * metrics.energy * metrics.area, **report}


def method_tag(cfg: SearchConfig) -> str:
    if cfg.loss_variant == "nas" or cfg.lambda2 == 0:
        return "no-penalty"
    if cfg.loss_variant.startswith("edd"):
        return "edd"
    return "dance"
