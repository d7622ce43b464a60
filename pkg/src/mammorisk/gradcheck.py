"""Finite-difference validation of tape gradients.

Used by the test suite to certify every differentiable block: analytic
gradients from one taped backward pass are compared against central
differences of the forward function, parameter by parameter.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from mammorisk.tensor import Tape, Tensor


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], *,
                    h: float = 1e-5, sample: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``fn`` must compute a scalar loss from the given leaf tensors (closed
    over).  All parameters should be float64 -- central differences at
    ``h=1e-5`` are meaningless in float32.  ``sample`` caps the number of
    coordinates probed per parameter (all coordinates when None).
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("gradient checks require float64 parameters")
        p.requires_grad = True
        p.grad = None

    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if sample is not None and sample < n:
            idxs = rng.choice(n, size=sample, replace=False)
        else:
            idxs = np.arange(n)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(ana.reshape(-1)[i])
            denom = max(abs(a), abs(numeric), 1e-2)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def assert_gradients_close(fn: Callable[[], Tensor], params: Sequence[Tensor], *,
                           h: float = 1e-5, tol: float = 1e-4,
                           sample: int | None = None,
                           rng: np.random.Generator | None = None) -> float:
    err = check_gradients(fn, params, h=h, sample=sample, rng=rng)
    assert err < tol, f"max relative gradient error {err:.3e} >= {tol:.0e}"
    return err
