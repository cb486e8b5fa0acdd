"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ABS_FLOOR = 1e-12


@dataclass
class GradCheckReport:
    errors: np.ndarray  # one relative error per checked scalar
    tolerance: float

    @property
    def max_error(self) -> float:
        return float(self.errors.max()) if self.errors.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic, numeric) -> np.ndarray:
    """``|a-n| / max(|a|, |n|)``, falling back to ``|a-n|`` when both are below 1e-12."""
    a = np.asarray(analytic, float)
    n = np.asarray(numeric, float)
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    return np.where(scale < ABS_FLOOR, diff, diff / np.where(scale < ABS_FLOOR, 1.0, scale))


def check_arrays(arrays, loss_and_grads, tolerance: float = 1e-4, step: float = 1e-5,
                 max_per_array: int | None = None, rng=None) -> GradCheckReport:
    """Compare ``loss_and_grads()`` analytic gradients against central differences.

    ``arrays`` are perturbed in place (and restored). ``loss_and_grads`` must
    re-read them on every call and return ``(loss, [grad per array])``.
    ``max_per_array`` bounds the number of checked entries per array.
    """
    _, analytic = loss_and_grads()
    analytic = [np.array(g, dtype=float, copy=True) for g in analytic]
    errs = []
    for arr, g in zip(arrays, analytic):
        flat = arr.flat  # writes through for any memory layout, unlike reshape
        idx = np.arange(arr.size)
        if max_per_array is not None and arr.size > max_per_array:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = np.sort(rng.choice(arr.size, max_per_array, replace=False))
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            lp, _ = loss_and_grads()
            flat[i] = old - step
            lm, _ = loss_and_grads()
            flat[i] = old
            errs.append(relative_error(g.reshape(-1)[i], (lp - lm) / (2 * step)))
    return GradCheckReport(np.asarray(errs, dtype=float), tolerance)


def gradient_check(model, loss_fn, x, tolerance: float = 1e-4, step: float = 1e-5,
                   check_input: bool = False) -> GradCheckReport:
    """Check a model's parameter (and optionally input) gradients.

    ``loss_fn(output) -> (loss, d loss / d output)``.
    """
    x = np.array(x, dtype=float, copy=True)

    def run():
        model.touch()
        out, cache = model.forward(x)
        loss, gy = loss_fn(out)
        gx, grads = model.backward(cache, gy)
        return loss, (grads + [gx]) if check_input else grads

    arrays = model.params() + ([x] if check_input else [])
    return check_arrays(arrays, run, tolerance, step)
