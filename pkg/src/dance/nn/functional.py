"""Activations, Gumbel softmax and losses."""
from __future__ import annotations

import numpy as np

from .autograd import Tensor, add, as_tensor, log_softmax, relu, softmax  # noqa: F401

_TINY = np.finfo(np.float64).tiny


def residual_add(x, f_x) -> Tensor:
    x, f_x = as_tensor(x), as_tensor(f_x)
    if x.shape != f_x.shape:
        raise ValueError(f"residual shapes differ: {x.shape} vs {f_x.shape}")
    return add(x, f_x)


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, _TINY, 1.0 - 1e-16)))


def gumbel_softmax(logits, tau: float, rng: np.random.Generator | None = None,
                   hard: bool = False, noise: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """softmax((logits + g) / tau), g ~ Gumbel(0, 1).

    Pass ``noise`` to freeze g (zeros gives plain softmax). ``hard`` returns
    the argmax one-hot on the forward pass with the soft gradient.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_softmax needs an rng or explicit noise")
        noise = sample_gumbel(logits.shape, rng)
    y = softmax((logits + noise) * (1.0 / tau), axis=axis)
    if not hard:
        return y
    idx = np.argmax(y.data, axis=axis)
    onehot = np.zeros_like(y.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
    return y + Tensor(onehot - y.data)


def msre_loss(y_hat, y) -> Tensor:
    """Sum of squared relative errors; batched input averages the per-row sums."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(~(y > 0)):
        raise ValueError("msre_loss targets must be strictly positive")
    y_hat = as_tensor(y_hat)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    rel = 1.0 - y_hat * (1.0 / y)
    sq = rel * rel
    if sq.ndim == 1:
        return sq.sum()
    return sq.sum(axis=-1).mean()


def ce_loss(logits, labels) -> Tensor:
    """Mean cross-entropy; ``logits`` (C,) with an int label or (B, C) with (B,) labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls})")
    lp = log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return -lp[int(labels)]
    return -(lp[np.arange(len(labels)), labels].mean())


def ce_loss_multi_head(head_logits, head_labels) -> Tensor:
    if len(head_logits) != len(head_labels):
        raise ValueError("one label array per head required")
    total = None
    for lg, lb in zip(head_logits, head_labels):
        term = ce_loss(lg, lb)
        total = term if total is None else total + term
    return total
