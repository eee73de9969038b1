"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ops import weighted_sum
from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros at zero."""
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _scalarize(out: Tensor, projection: Optional[np.ndarray]) -> Tensor:
    if out.size == 1:
        return out
    return weighted_sum(out, projection)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    wrt: Optional[Sequence[int]] = None,
    max_coords: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output coordinate contributes. ``wrt`` selects which inputs are checked
    (default: all); ``max_coords`` subsamples coordinates per input.
    """
    rng = np.random.default_rng(seed)
    wrt = range(len(inputs)) if wrt is None else wrt

    def evaluate() -> float:
        out = fn(*inputs)
        return float(_scalarize(out, proj).data)

    probe = fn(*inputs)
    proj = None if probe.size == 1 else rng.standard_normal(probe.shape)

    for i in wrt:
        inputs[i].requires_grad = True
        inputs[i].grad = None
    with Tape() as tape:
        loss = _scalarize(fn(*inputs), proj)
    backward(tape, loss)

    worst = (0.0, -1, (), 0.0, 0.0)
    checked = 0
    for i in wrt:
        t = inputs[i]
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + h
            fp = evaluate()
            flat[j] = orig - h
            fm = evaluate()
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            ana = analytic.reshape(-1)[j]
            err = float(relative_error(np.float64(ana), np.float64(num), floor))
            checked += 1
            if err > worst[0] or worst[1] < 0:
                worst = (err, i, np.unravel_index(j, t.shape), float(ana), float(num))
    return GradCheckReport(worst[0], worst[1], tuple(int(k) for k in worst[2]), worst[3], worst[4], checked, tolerance)
