"""SGD with classical momentum, plus the finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class OptimState:
    """Velocity buffers mirroring the parameter tensors (heavy-ball momentum)."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float, momentum: float = 0.9):
        if not (0.0 <= momentum < 1.0):
            raise ValueError(f"momentum must be in [0,1), got {momentum}")
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]


def sgd_step(params: Sequence[Tensor], opt: OptimState) -> None:
    """v <- mu*v + g;  p <- p - lr*v.  Params with no gradient are skipped."""
    for p, v in zip(params, opt.velocity):
        if p.grad is None:
            continue
        v *= opt.momentum
        v += p.grad
        p.data -= opt.learning_rate * v


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def summary(self) -> str:
        lines = [
            f"  {e.name:<28s} max_rel_err={e.max_rel_err:.3e} ({e.checked} probes)"
            for e in self.entries
        ]
        lines.append(f"{'PASS' if self.passed else 'FAIL'}: max {self.max_rel_err:.3e} "
                     f"vs tolerance {self.tolerance:.1e}")
        return "\n".join(lines)


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
               tolerance: float = 1e-4, h: float = 1e-4,
               samples_per_tensor: int = 0, seed: int = 0,
               reject_kinks: bool = False) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    Runs ``loss_fn`` once for the analytic gradients, then perturbs parameter
    elements by +-h and re-evaluates. ``samples_per_tensor`` > 0 probes a
    seeded random subset of each tensor's elements (exhaustive probing of a
    full network needs 2 forwards per weight and is hopeless); 0 means check
    every element.

    ``reject_kinks`` re-estimates each probe at h/2 and redraws the element
    when the two estimates disagree: a secant that straddles a relu zero or
    a pool argmax flip measures a mix of two linear pieces and says nothing
    about the gradient at the point itself. Rejection looks only at FD
    self-consistency, so it cannot mask a wrong backward rule (a real bug
    shifts every probe, consistently).

    Relative error per probe: |a - n| / max(|a|, |n|, floor). The floor
    covers both vanishing gradients and the inherent FD rounding noise
    (order eps*|loss|/h), which no step size can push below tolerance for
    tiny-gradient elements.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    fd_noise = 64 * np.finfo(np.float64).eps * max(1.0, abs(float(loss.data))) / h
    floor = max(1e-8, 4.0 * fd_noise / tolerance)

    loss0 = float(loss.data)

    def eval_at(flat, i, offset):
        orig = flat[i]
        flat[i] = orig + offset
        val = float(loss_fn().data)
        flat[i] = orig
        return val

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for p, a in zip(params, analytic):
        if a is None:
            a = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        n_elem = flat.size
        if samples_per_tensor and samples_per_tensor < n_elem:
            idxs = list(rng.choice(n_elem, size=samples_per_tensor, replace=False))
        else:
            idxs = list(range(n_elem))
        worst, checked = 0.0, 0
        retries = 8 * len(idxs)
        while idxs:
            i = idxs.pop(0)
            lp, lm = eval_at(flat, i, h), eval_at(flat, i, -h)
            numeric = (lp - lm) / (2 * h)
            if reject_kinks:
                lp2, lm2 = eval_at(flat, i, h / 2), eval_at(flat, i, -h / 2)
                half = (lp2 - lm2) / h
                onesided_gap = abs((lp - loss0) / h - (loss0 - lm) / h)
                scale = max(abs(numeric), abs(half), abs(aflat[i]), floor)
                # two straddle tests: secants at h and h/2 must agree, and the
                # forward/backward one-sided slopes must roughly agree (this
                # second test catches a kink sitting at the window center)
                straddled = (abs(numeric - half) > max(0.25 * tolerance * scale,
                                                       4 * fd_noise)
                             or onesided_gap > max(0.25 * tolerance * scale,
                                                   8 * fd_noise))
                if straddled and retries > 0:
                    retries -= 1
                    idxs.append(int(rng.integers(n_elem)))
                    continue
                numeric = half  # the tighter secant
            denom = max(abs(aflat[i]), abs(numeric), floor)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
            checked += 1
        report.entries.append(GradCheckEntry(p.name or "param", worst, checked))
    return report
