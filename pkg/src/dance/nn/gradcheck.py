"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autograd import Tensor


@dataclass
class GradcheckReport:
    rel_tol: float
    max_rel_err: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.rel_tol

    def __str__(self) -> str:
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.max_rel_err.items())
        return f"gradcheck {'ok' if self.passed else 'FAILED'} (tol {self.rel_tol:g}): {parts}"


def gradcheck(f: Callable[[], Tensor], params, rel_tol: float = 1e-4, h: float = 1e-4,
              max_entries: int | None = None, seed: int = 0,
              scale_floor: float = 1e-6) -> GradcheckReport:
    """Compare backprop gradients of scalar ``f()`` against central differences.

    ``params`` is a list or a name->Tensor dict. The error of a block is
    ``max(|analytic - numeric| - noise, 0) / max(|numeric|, |analytic|, scale_floor)``
    where ``noise = 64 * eps * |f| / h`` is the rounding error of a central
    difference at this loss magnitude. Together with the floor this keeps
    identically-zero blocks (a bias feeding batch norm) from reporting pure
    rounding noise as a mismatch. ``max_entries`` subsamples large blocks.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    out = f()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise ValueError("gradcheck needs a finite scalar output")
    out.backward()
    noise = 64 * np.finfo(np.float64).eps * abs(out.item()) / h
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradcheckReport(rel_tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"non-finite value while perturbing {name}")
            num[j] = (fp - fm) / (2 * h)
        ana = analytic[name].reshape(-1)[idx]
        scale = max(np.abs(num).max(), np.abs(ana).max(), scale_floor)
        err = max(np.abs(ana - num).max() - noise, 0.0)
        report.max_rel_err[name] = float(err / scale)
    return report
