"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: list = field(default_factory=list)   # (input index, flat index) at kinks

    def __float__(self):
        return self.max_rel_error


def grad_check(fn, inputs, h=1e-5, n_samples=20, seed=0, kink_tol=1e-3):
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    ``fn`` must return a scalar Tensor. Each input needs ``requires_grad`` and
    float64 data. Up to ``n_samples`` coordinates per input are probed; the
    relative error is ``|analytic - numeric| / max(1, |numeric|)``.

    A coordinate whose one-sided slopes disagree by more than ``kink_tol``
    (a relu kink, an ``abs`` at zero) is skipped and listed in ``skipped``.
    """
    for x in inputs:
        if x.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        x.zero_grad()
    out = fn(*inputs)
    out.backward()
    analytic = [x.grad.copy() for x in inputs]

    def value():
        return float(fn(*inputs).data)

    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, []
    f0 = value()
    for i, x in enumerate(inputs):
        flat = x.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= n_samples else rng.choice(n, n_samples, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = value()
            flat[c] = orig - h
            fm = value()
            flat[c] = orig
            numeric = (fp - fm) / (2 * h)
            right, left = (fp - f0) / h, (f0 - fm) / h
            if abs(right - left) > kink_tol * max(1.0, abs(numeric)):
                skipped.append((i, int(c)))
                continue
            err = abs(analytic[i].reshape(-1)[c] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(worst, checked, skipped)
