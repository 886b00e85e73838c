"""Central-difference gradient checking in float64."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |analytic|).

    ``x`` is promoted to float64 in place for the duration of the check, so
    ``f`` may either use its argument or close over ``x`` itself (e.g. a model
    parameter). Anything else ``f`` touches should already be float64.
    """
    original = x.data
    flag = x.requires_grad
    x.data = original.astype(np.float64)
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            out = f(x)
        tape.backward(out)
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = f(x).data.sum()
            flat[i] = saved - h
            down = f(x).data.sum()
            flat[i] = saved
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
    finally:
        x.data = original
        x.grad = None
        x.requires_grad = flag
