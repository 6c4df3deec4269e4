"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-6
    min_kink_gap: float = np.inf
    resamples: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def summary(self) -> str:
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        state = "PASS" if self.passed else "FAIL"
        return f"{state} max_rel_err={self.max_error:.3e} (worst {worst}) tol={self.tolerance:.0e}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest gradient magnitude of the pair."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)),
                float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    eps: float = 1e-4,
    max_elements: int | None = None,
    seed: int = 0,
    resample: Callable[[np.random.Generator], None] | None = None,
    kink_margin: float = 1e-3,
    max_resamples: int = 20,
) -> GradCheckReport:
    """Compare backward() against central differences for every tensor in ``params``.

    ``loss_fn`` rebuilds the scalar loss from the current values of ``params``.
    If a relu/abs/max input sits within ``kink_margin`` of its kink and
    ``resample`` is given, it is called to redraw inputs before checking.
    ``max_elements`` limits the number of probed entries per tensor.
    """
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for attempt in range(max_resamples + 1):
        with ad.kink_monitor() as mon:
            loss = loss_fn()
        report.min_kink_gap = mon.min_gap
        if resample is None or mon.min_gap >= kink_margin or attempt == max_resamples:
            break
        resample(rng)
        report.resamples += 1

    for p in params.values():
        p.grad = np.zeros_like(p.data)
    ad.backward(loss)

    for name, p in params.items():
        analytic_full = p.grad.copy()
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            with ad.no_grad():
                up = float(loss_fn().data)
            flat[i] = orig - eps
            with ad.no_grad():
                down = float(loss_fn().data)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * eps)
        report.errors[name] = relative_error(analytic_full.reshape(-1)[idx], numeric)
    return report
