"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Parameter],
                            h: float = 1e-5) -> float:
    """Largest ``|numeric - analytic| / max(1, |analytic|)`` over all coordinates.

    ``f`` takes no arguments and must read the current values of ``params``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    for p in params:
        p.grad = None
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, ga in zip(params, analytic):
            for idx in np.ndindex(p.data.shape):
                orig = p.data[idx]
                p.data[idx] = orig + h
                up = f().item()
                p.data[idx] = orig - h
                down = f().item()
                p.data[idx] = orig
                num = (up - down) / (2.0 * h)
                err = abs(num - ga[idx]) / max(1.0, abs(ga[idx]))
                worst = max(worst, err)
    return worst
