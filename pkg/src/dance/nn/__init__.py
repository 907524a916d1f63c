"""Minimal reverse-mode differentiable compute core (numpy, float64)."""
from .autograd import Tensor, as_tensor, concat, exp, log, log_softmax, no_grad, relu, softmax, stack
from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (ce_loss, ce_loss_multi_head, gumbel_softmax, msre_loss, residual_add,
                         sample_gumbel)
from .gradcheck import GradcheckReport, gradcheck
from .layers import BatchNorm1d, Dense, Module, ResidualMLP
from .optim import SGD, Adam, cosine, lr_schedule, step_decay

__all__ = [
    "Tensor", "as_tensor", "concat", "exp", "log", "log_softmax", "no_grad", "relu", "softmax",
    "stack", "load_checkpoint", "save_checkpoint", "ce_loss", "ce_loss_multi_head",
    "gumbel_softmax", "msre_loss", "residual_add", "sample_gumbel", "GradcheckReport",
    "gradcheck", "BatchNorm1d", "Dense", "Module", "ResidualMLP", "SGD", "Adam", "cosine",
    "lr_schedule", "step_decay",
]
