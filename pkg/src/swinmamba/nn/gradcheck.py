"""Central finite-difference oracle for tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: list = field(default_factory=list)
    checked: int = 0
    # checked coordinates per input: (flat index, analytic, numeric)
    samples: list = field(default_factory=list)

    def __float__(self) -> float:
        return self.max_rel_error


def _relative(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    seed: int = 0,
    max_entries: Optional[int] = None,
    name: Optional[str] = None,
) -> GradCheckResult:
    """Compare tape gradients of ``fn(*inputs)`` against central differences.

    Non-scalar outputs are contracted with a fixed random cotangent ``R``;
    the numeric derivative is ``sum((f(x+h) - f(x-h)) * R) / 2h`` so the
    subtraction happens before the reduction. ``max_entries`` samples that
    many coordinates per input instead of sweeping all of them.

    Returns the max over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    label = name or getattr(fn, "__name__", "op")
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"grad_check({label}): inputs must be float64, got {t.dtype}")
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    _require_finite(out.data, label)
    rng = np.random.default_rng(seed)
    cot = np.ones_like(out.data) if out.data.size == 1 else rng.standard_normal(out.shape)
    out.backward(cot)

    worst, per_input, checked, samples = 0.0, [], 0, []
    for k, t in enumerate(inputs):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                plus = np.array(fn(*inputs).data)  # outputs may alias the input buffer
                flat[i] = orig - step
                minus = np.array(fn(*inputs).data)
                flat[i] = orig
                diff = plus - minus
                _require_finite(diff, label)
                numeric[j] = float((diff * cot).sum()) / (2.0 * step)
        picked = analytic.reshape(-1)[idx]
        samples.append((idx, picked.copy(), numeric))
        err = float(_relative(picked, numeric).max()) if idx.size else 0.0
        per_input.append(err)
        worst = max(worst, err)
        checked += idx.size
    return GradCheckResult(worst, per_input, checked, samples)


def _require_finite(values: np.ndarray, label: str) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"grad_check: non-finite intermediate in {label}")
