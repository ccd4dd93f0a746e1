"""Central finite-difference checks against the analytic tape gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward

# Relative errors are taken against max(|analytic|, |numeric|, FLOOR) so that
# gradients which are exactly zero analytically do not divide by zero.
FLOOR = 1e-6


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    flat = t.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn().data)
        flat[i] = orig - step
        fm = float(fn().data)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(t.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                    step: float = 1e-5, floor: float = FLOOR) -> dict[str, float]:
    """Max elementwise relative error per named tensor.

    ``fn`` must rebuild the graph from the current parameter values on every
    call and return a scalar.
    """
    for p in params.values():
        if p.data.dtype != np.float64:
            raise TypeError("gradient checks require 64-bit tensors")
        p.grad = None
        p.requires_grad = True
    backward(fn())
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        errors[name] = relative_error(analytic, numerical_grad(fn, p, step), floor)
    return errors
