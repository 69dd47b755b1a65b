from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, value


@dataclass
class GradCheckResult:
    max_error: float
    checked: int
    skipped: int

    def __float__(self):
        return self.max_error


def _eval(f, point):
    tape = Tape()
    x = tape.leaf(point)
    out = f(x)
    masks = tape.relu_masks
    return float(value(out)), masks, tape, x, out


def _same_kinks(a, b):
    if len(a) != len(b):
        return False
    return all(m1.shape == m2.shape and np.array_equal(m1, m2) for m1, m2 in zip(a, b))


def grad_check(f, point, h: float = 1e-5, coords=None, skip_kinks: bool = True) -> GradCheckResult:
    """Compare the tape gradient of scalar ``f`` with central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    With ``skip_kinks`` a coordinate is skipped when the +h or -h evaluation
    flips any ReLU activation, since the function is not differentiable
    across that step.
    """
    point = np.array(point, dtype=np.float64)
    _, masks0, tape, x, out = _eval(f, point)
    (analytic,) = tape.grad(out, [x])
    flat = point.reshape(-1)
    ana = analytic.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst, checked, skipped = 0.0, 0, 0
    for i in idx:
        plus = flat.copy()
        plus[i] += h
        minus = flat.copy()
        minus[i] -= h
        fp, mp, *_ = _eval(f, plus.reshape(point.shape))
        fm, mm, *_ = _eval(f, minus.reshape(point.shape))
        if skip_kinks and not (_same_kinks(masks0, mp) and _same_kinks(masks0, mm)):
            skipped += 1
            continue
        num = (fp - fm) / (2.0 * h)
        err = abs(ana[i] - num) / max(1.0, abs(ana[i]))
        worst = max(worst, err)
        checked += 1
    return GradCheckResult(worst, checked, skipped)
