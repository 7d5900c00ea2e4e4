"""Shared test utilities: finite-difference oracles and tiny fixtures."""

from __future__ import annotations

import numpy as np

from mogrid import numerics as nm


def central_diff(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f(x)
        flat[i] = old - step
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Worst-case relative error, ignoring entries where both sides are tiny."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / scale).max()) if a.size else 0.0


def check_grad_fn(build, x0: np.ndarray, step: float = 1e-5, tol: float = 1e-3):
    """``build(tensor) -> scalar Tensor``; compares backward against central
    differences in float64. Returns the worst relative error."""
    with nm.precision(np.float64):
        t = nm.Tensor(np.asarray(x0, dtype=np.float64), requires_grad=True)
        loss = build(t)
        nm.backward_scalar(loss)
        analytic = t.grad.copy()

        def f(x):
            return float(build(nm.Tensor(np.asarray(x, dtype=np.float64))).data)

        numeric = central_diff(f, np.asarray(x0, dtype=np.float64), step)
    err = rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e}"
    return err


def weighted_sum(t, rng):
    """Random fixed projection to a scalar, keeping gradients informative."""
    w = rng.normal(size=t.shape)
    return nm.tsum(nm.mul(t, w))
