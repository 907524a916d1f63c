"""SGD / Adam and learning-rate schedules."""
from __future__ import annotations

import math

import numpy as np

from .autograd import Tensor


def _check_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite value in {name}")


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float):
        if not lr >= 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads: list[np.ndarray] | None = None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        for i, (p, g) in enumerate(zip(self.params, grads)):
            _check_finite(f"gradient {i}", g)
            new = self._update(i, p.data, g)
            _check_finite(f"parameter {i}", new)
            p.data = new

    def _update(self, i: int, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0,
                 nesterov: bool = False):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, w, g):
        if self.weight_decay:
            g = g + self.weight_decay * w
        if self.momentum:
            v = self.velocity[i] = self.momentum * self.velocity[i] + g
            g = g + self.momentum * v if self.nesterov else v
        return w - self.lr * g

    def state_dict(self) -> dict:
        return {f"velocity.{i}": v for i, v in enumerate(self.velocity)}

    def load_state_dict(self, state: dict):
        self.velocity = [np.array(state[f"velocity.{i}"]) for i in range(len(self.params))]


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads=None):
        self.t += 1
        super().step(grads)

    def _update(self, i, w, g):
        if self.weight_decay:
            g = g + self.weight_decay * w
        m, v = self.m[i], self.v[i]
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * (g * g)
        denom = np.sqrt(v / (1 - self.beta2 ** self.t))
        denom += self.eps
        step = m / denom
        step *= self.lr / (1 - self.beta1 ** self.t)
        return w - step

    def state_dict(self) -> dict:
        out = {"t": np.array(float(self.t))}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"], out[f"v.{i}"] = m, v
        return out

    def load_state_dict(self, state: dict):
        self.t = int(np.asarray(state["t"]).reshape(-1)[0])
        self.m = [np.array(state[f"m.{i}"]) for i in range(len(self.params))]
        self.v = [np.array(state[f"v.{i}"]) for i in range(len(self.params))]


def step_decay(lr0: float, epoch: int, gamma: float = 0.1, every: int = 50) -> float:
    return lr0 * gamma ** (epoch // every)


def cosine(lr0: float, epoch: int, total: int) -> float:
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * min(epoch, total) / max(total, 1)))


def lr_schedule(kind: str, lr0: float, epoch: int, total: int = 1, gamma: float = 0.1,
                every: int = 50) -> float:
    if kind == "step_decay":
        return step_decay(lr0, epoch, gamma, every)
    if kind == "cosine":
        return cosine(lr0, epoch, total)
    if kind == "constant":
        return lr0
    raise ValueError(f"unknown schedule {kind!r}")
