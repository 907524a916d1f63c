"""Dense, batch-norm and residual MLP building blocks."""
from __future__ import annotations

import numpy as np

from .autograd import Tensor, as_tensor, batchnorm_eval, batchnorm_train, linear, relu


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.update(v.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Module):
                out.update(value.named_buffers(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.update(v.named_buffers(f"{prefix}{name}.{i}."))
        for name in getattr(self, "_buffers", ()):
            out[prefix + name] = getattr(self, name)
        return out

    def _children(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Module))

    def train(self, mode: bool = True):
        self.training = mode
        for child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({k: np.array(v, dtype=float) for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        buffers = self.named_buffers()
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k in buffers:
            owner, attr = self._resolve(k)
            setattr(owner, attr, np.array(state[k], dtype=np.float64))

    def _resolve(self, dotted: str):
        obj = self
        *path, attr = dotted.split(".")
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        return obj, attr


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.weight = Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.weight.shape[1]:
            raise ValueError(f"Dense expects last dim {self.weight.shape[1]}, got {x.shape[-1]}")
        return linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.gamma.shape[0]:
            raise ValueError("BatchNorm1d feature size mismatch")
        if not self.training:
            return batchnorm_eval(x, self.gamma, self.beta, self.running_mean, self.running_var,
                                  self.eps)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("training-mode batch norm needs a batch of >= 2 rows")
        out, mu, var = batchnorm_train(x, self.gamma, self.beta, self.eps)
        n, m = x.shape[0], self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mu
        self.running_var = (1 - m) * self.running_var + m * var * n / (n - 1)
        return out


class ResidualMLP(Module):
    """Five dense layers; hidden skips 1->3 and 2->4; optional BN before each ReLU."""

    def __init__(self, n_in: int, width: int, n_out: int, rng: np.random.Generator,
                 batchnorm: bool = False):
        self.dense = [Dense(n_in, width, rng)] + [Dense(width, width, rng) for _ in range(3)] \
            + [Dense(width, n_out, rng)]
        self.norms = [BatchNorm1d(width) for _ in range(4)] if batchnorm else []

    def _act(self, i: int, x: Tensor) -> Tensor:
        z = self.dense[i](x)
        if self.norms:
            z = self.norms[i](z)
        return relu(z)

    def __call__(self, x) -> Tensor:
        h1 = self._act(0, x)
        h2 = self._act(1, h1)
        h3 = self._act(2, h2) + h1
        h4 = self._act(3, h3) + h2
        return self.dense[4](h4)
