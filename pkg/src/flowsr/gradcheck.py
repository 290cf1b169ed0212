"""Central-finite-difference verification of analytic gradients.

The harness perturbs one input element at a time with step h on inputs
drawn from [-1, 1], compares against the gradient a taped backward pass
produced, and reports the worst relative error. Elements where both
gradients sit below the float32 noise floor count as matching; relative
error is ill-defined at zero.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tape, Tensor, backward

__all__ = ["check_gradient", "GradCheckFailure"]


class GradCheckFailure(AssertionError):
    pass


def check_gradient(
    fn: Callable[..., Tensor],
    inputs: list[np.ndarray],
    wrt: int = 0,
    h: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    name: str = "",
) -> float:
    """Compare analytic and numeric d(fn)/d(inputs[wrt]); return worst rel err.

    ``fn`` maps Tensors to a scalar Tensor. Inputs are evaluated in float64
    for the numeric probe and in the same float64 path for the analytic
    side, so the comparison isolates the backward math from roundoff.
    """
    tensors = [Tensor(a, dtype=np.float64) for a in inputs]
    tensors[wrt].requires_grad = True

    with Tape() as tape:
        loss = fn(*tensors)
    backward(tape, loss)
    analytic = tensors[wrt].grad
    if analytic is None:
        analytic = np.zeros_like(tensors[wrt].data)

    target = inputs[wrt].astype(np.float64)
    numeric = np.zeros_like(target)
    flat = target.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = _eval(fn, inputs, wrt, target)
        flat[i] = orig - h
        f_minus = _eval(fn, inputs, wrt, target)
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * h)

    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = err > atol + rtol * scale
    # worst is reported over elements the relative criterion governs; below
    # atol/rtol the comparison is absolute and a ratio would be noise
    meaningful = rtol * scale > atol
    worst = float((err[meaningful] / scale[meaningful]).max()) if meaningful.any() else 0.0
    if bad.any():
        idx = np.unravel_index(int(np.argmax(err - rtol * scale)), err.shape)
        raise GradCheckFailure(
            f"gradient check failed for {name or getattr(fn, '__name__', 'fn')} at {idx}: "
            f"analytic={analytic[idx]:.6g} numeric={numeric[idx]:.6g}"
        )
    return worst


def _eval(fn, inputs, wrt, perturbed) -> float:
    tensors = [
        Tensor(perturbed if k == wrt else a, dtype=np.float64) for k, a in enumerate(inputs)
    ]
    return fn(*tensors).item()


def away_from_kinks(a: np.ndarray, h: float = 1e-2) -> np.ndarray:
    """Push samples at least 2h away from zero so a piecewise-linear kink
    never falls inside the finite-difference stencil."""
    out = a.copy()
    near = np.abs(out) < 2 * h
    out[near] = np.where(out[near] >= 0, 2 * h, -2 * h)
    return out
