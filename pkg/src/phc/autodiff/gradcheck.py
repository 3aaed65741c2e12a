"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .engine import Tape, Tensor, backward


def grad_check(f, params, h: float = 1e-6) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` is a zero-argument callable returning a scalar :class:`Tensor`
    computed from ``params`` (a sequence of tensors that it closes over).
    Each coordinate of each parameter is perturbed by ``±h`` in place and
    the relative error

        |analytic - fd| / max(1, |analytic|, |fd|)

    is maximized over all coordinates. Callers are responsible for keeping
    inputs away from non-smooth points (relu and abs kinks, min/max ties
    closer than ``h``).
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    if loss.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = float(f().data)
            flat[i] = saved - h
            f_minus = float(f().data)
            flat[i] = saved
            fd = (f_plus - f_minus) / (2.0 * h)
            a = an_flat[i]
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            if err > worst:
                worst = err
    return worst
