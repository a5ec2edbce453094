"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autograd import Tensor


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance

    def __str__(self) -> str:
        rows = [f"{name:<24s} {err:.3e} ({self.checked[name]} entries)" for name, err in self.errors.items()]
        return "\n".join(rows)


def finite_difference_check(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``fn()`` against central differences.

    The error for a group is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``,
    taken over the checked entries. ``max_entries`` samples that many coordinates per
    group instead of all of them. Tensors should hold float64 data.
    """
    for t in tensors.values():
        t.grad = None
    out = fn()
    out.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)[idx]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
        report.errors[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
        report.checked[name] = int(idx.size)
    for t in tensors.values():
        t.grad = None
    return report
