"""Adam with independent parameter groups plus a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward


class ParamGroup:
    """Parameters sharing a learning rate, its epoch decay, and Adam state."""

    def __init__(self, params: Sequence[Tensor], lr: float, decay: float = 1.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0 < decay <= 1.0:
            raise ValueError(f"decay factor must be in (0, 1], got {decay}")
        self.params = list(params)
        self.lr = float(lr)
        self.decay = float(decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grads(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(group: ParamGroup) -> None:
    """One Adam update over the group; a missing gradient counts as zero."""
    group.step_count += 1
    t = group.step_count
    bc1 = 1.0 - group.beta1 ** t
    bc2 = 1.0 - group.beta2 ** t
    for p, m, v in zip(group.params, group.m, group.v):
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        m *= group.beta1
        m += (1.0 - group.beta1) * g
        v *= group.beta2
        v += (1.0 - group.beta2) * (g * g)
        p.data -= group.lr * (m / bc1) / (np.sqrt(v / bc2) + group.eps)


def decay_epoch(group: ParamGroup) -> None:
    """Scale the group's learning rate by its decay factor (1.0 = constant)."""
    group.lr *= group.decay


@dataclass
class GradCheckReport:
    """Worst relative disagreement between taped and numeric gradients."""

    max_rel_error: float
    coords_checked: int
    per_param: list = field(default_factory=list)  # (shape, max rel error) per tensor


def gradient_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], *,
                   step: float = 1e-5, max_coords: int | None = 200,
                   seed: int = 0, denom_floor: float = 1e-2) -> GradCheckReport:
    """Compare taped gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild its forward pass from the current parameter
    values and return a scalar tensor; it is deterministic by assumption
    and gets re-evaluated twice per sampled coordinate.  Per tensor, at
    most ``max_coords`` coordinates are sampled (None checks all).  The
    relative error uses ``|a - n| / max(|a|, |n|, denom_floor)`` so that
    finite-difference noise on near-zero gradients is not amplified.

    The report only states the error; asserting against a tolerance is the
    caller's job, since a kink or clamp at the sample point legitimately
    produces a large value.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss, params)
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    per_param = []
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            idxs = np.arange(flat.size)
        else:
            idxs = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        local = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            f_hi = float(loss_fn().data)
            flat[i] = orig - step
            f_lo = float(loss_fn().data)
            flat[i] = orig
            fd = (f_hi - f_lo) / (2.0 * step)
            rel = abs(aflat[i] - fd) / max(abs(aflat[i]), abs(fd), denom_floor)
            local = max(local, rel)
            checked += 1
        per_param.append((p.shape, local))
        worst = max(worst, local)
    return GradCheckReport(worst, checked, per_param)
