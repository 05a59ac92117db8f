"""Adam updates over named parameter dicts and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class AdamState:
    """First/second moments per parameter name plus the shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam step, in place, over the keys present in grads."""
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    b1, b2 = betas
    if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
        raise ValueError(f"betas must lie in [0, 1), got {betas}")
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class GradCheckReport:
    ok: bool
    max_rel_err: float
    worst_name: str
    n_checked: int
    n_excluded: int
    per_tensor: dict[str, float]

    def as_text(self) -> str:
        lines = [
            f"ok={self.ok}",
            f"max_rel_err={self.max_rel_err:.3e} ({self.worst_name})",
            f"checked={self.n_checked} excluded_kinks={self.n_excluded}",
        ]
        for name, err in sorted(self.per_tensor.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def _same_trace(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(
    loss_fn: Callable[[dict[str, np.ndarray], bool], tuple[float, dict[str, np.ndarray] | None, list]],
    params: dict[str, np.ndarray],
    eps: float = 1e-3,
    tolerance: float = 1e-3,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn(params, need_grad)`` must return (loss value, grads dict or
    None, kink trace). The trace lists the relu sign patterns and pooling
    argmaxes of the forward pass; parameter elements whose perturbed traces
    disagree between the +eps and -eps evaluations crossed a kink, where
    the two-sided difference is not a valid derivative, so they are
    excluded and counted.

    Relative error uses max(|analytic|, |numeric|, 1e-4) as the
    denominator: for gradients of ordinary size it is a plain relative
    error, and below 1e-4 it degrades into an absolute comparison at
    tolerance*1e-4, which is the best central differences with eps=1e-3
    can resolve in float64.

    ``max_per_tensor`` caps how many randomly chosen elements are probed
    per tensor (None checks every element).
    """
    _, grads, _ = loss_fn(params, True)
    if grads is None:
        raise ValueError("loss_fn must return gradients when need_grad is True")
    if rng is None:
        rng = np.random.default_rng(0)
    per_tensor: dict[str, float] = {}
    worst = 0.0
    worst_name = ""
    n_checked = 0
    n_excluded = 0
    for name, g in grads.items():
        arr = params[name]
        flat_idx = np.arange(arr.size)
        if max_per_tensor is not None and arr.size > max_per_tensor:
            flat_idx = rng.choice(arr.size, size=max_per_tensor, replace=False)
        t_err = 0.0
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + eps
            f_plus, _, trace_plus = loss_fn(params, False)
            arr[idx] = orig - eps
            f_minus, _, trace_minus = loss_fn(params, False)
            arr[idx] = orig
            if not _same_trace(trace_plus, trace_minus):
                n_excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = g[idx]
            denom = max(abs(analytic), abs(numeric), 1e-4)
            rel = abs(analytic - numeric) / denom
            n_checked += 1
            t_err = max(t_err, rel)
            if rel > worst:
                worst = rel
                worst_name = f"{name}{[int(i) for i in idx]}"
        per_tensor[name] = t_err
    return GradCheckReport(
        ok=worst <= tolerance,
        max_rel_err=worst,
        worst_name=worst_name,
        n_checked=n_checked,
        n_excluded=n_excluded,
        per_tensor=per_tensor,
    )
