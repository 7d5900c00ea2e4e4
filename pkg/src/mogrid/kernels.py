"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

The backend is chosen once at import from the MOGRID_BACKEND environment
variable ("numba" or "numpy"). Default is numba when importable, numpy
otherwise. Both paths are deterministic run-to-run; they are not required
to agree bit-for-bit with each other (summation order differs), only to
within normal float tolerance. ``benchmarks/bench_kernels.py`` times both.

fastmath stays off: several model invariants rely on exact IEEE behaviour
(exp underflow to +0.0 in masked softmax rows).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_env = os.environ.get("MOGRID_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"MOGRID_BACKEND must be 'numba' or 'numpy', got {_env!r}")
if _env == "numba" and not HAS_NUMBA:
    raise RuntimeError("MOGRID_BACKEND=numba but numba is not importable")

BACKEND = _env or ("numba" if HAS_NUMBA else "numpy")


def set_backend(name: str) -> None:
    """Switch the kernel backend at runtime (tests and benchmarks only)."""
    global BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    BACKEND = name


# ---------------------------------------------------------------------------
# conv1d, kernel K (odd), same padding, over the middle axis of (B, T, C)
# ---------------------------------------------------------------------------


def _conv1d_fwd_np(x, w, b):
    B, T, Ci = x.shape
    K, _, Co = w.shape
    pad = K // 2
    xp = np.zeros((B, T + 2 * pad, Ci), dtype=x.dtype)
    xp[:, pad : pad + T] = x
    # cols[..., k*Ci:(k+1)*Ci] = xp shifted by k, so y[t] = sum_k x[t+k-pad] @ w[k]
    cols = np.concatenate([xp[:, k : k + T] for k in range(K)], axis=2)
    y = cols @ w.reshape(K * Ci, Co)
    y += b
    return y


def _conv1d_bwd_np(x, w, gy):
    B, T, Ci = x.shape
    K, _, Co = w.shape
    pad = K // 2
    xp = np.zeros((B, T + 2 * pad, Ci), dtype=x.dtype)
    xp[:, pad : pad + T] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for k in range(K):
        gxp[:, k : k + T] += gy @ w[k].T
        gw[k] = np.tensordot(xp[:, k : k + T], gy, axes=([0, 1], [0, 1]))
    gb = gy.sum(axis=(0, 1))
    return gxp[:, pad : pad + T], gw, gb


if HAS_NUMBA:

    @njit(cache=True)
    def _conv1d_fwd_nb(x, w, b):
        B, T, Ci = x.shape
        K, _, Co = w.shape
        pad = K // 2
        xp = np.zeros((B, T + 2 * pad, Ci), dtype=x.dtype)
        xp[:, pad : pad + T] = x
        y = np.empty((B, T, Co), dtype=x.dtype)
        for bi in range(B):
            acc = np.zeros((T, Co), dtype=x.dtype)
            for k in range(K):
                xk = np.ascontiguousarray(xp[bi, k : k + T])
                acc += np.dot(xk, w[k])
            y[bi] = acc + b
        return y

    @njit(cache=True)
    def _conv1d_bwd_nb(x, w, gy):
        B, T, Ci = x.shape
        K, _, Co = w.shape
        pad = K // 2
        xp = np.zeros((B, T + 2 * pad, Ci), dtype=x.dtype)
        xp[:, pad : pad + T] = x
        wt = np.empty((K, Co, Ci), dtype=x.dtype)
        for k in range(K):
            wt[k] = w[k].T
        gxp = np.zeros((B, T + 2 * pad, Ci), dtype=x.dtype)
        gw = np.zeros((K, Ci, Co), dtype=x.dtype)
        gb = np.zeros(Co, dtype=x.dtype)
        for bi in range(B):
            g = np.ascontiguousarray(gy[bi])
            gb += np.sum(g, axis=0)
            for k in range(K):
                gxp[bi, k : k + T] += np.dot(g, wt[k])
                xkt = np.ascontiguousarray(xp[bi, k : k + T].T)
                gw[k] += np.dot(xkt, g)
        return np.ascontiguousarray(gxp[:, pad : pad + T]), gw, gb


def conv1d_fwd(x, w, b):
    if BACKEND == "numba":
        return _conv1d_fwd_nb(x, w, b)
    return _conv1d_fwd_np(x, w, b)


def conv1d_bwd(x, w, gy):
    if BACKEND == "numba":
        return _conv1d_bwd_nb(x, w, np.ascontiguousarray(gy))
    return _conv1d_bwd_np(x, w, gy)


# ---------------------------------------------------------------------------
# row softmax over the last axis of a 2-D array (mask already added)
# ---------------------------------------------------------------------------


def _softmax_fwd_np(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    e /= e.sum(axis=1, keepdims=True)
    return e


def _softmax_inplace_np(x):
    m = x.max(axis=1, keepdims=True)
    x -= m
    np.exp(x, out=x)
    x /= x.sum(axis=1, keepdims=True)
    return x


def _softmax_bwd_np(y, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


if HAS_NUMBA:

    @njit(cache=True)
    def _softmax_fwd_nb(x):
        R, L = x.shape
        y = np.empty_like(x)
        for r in range(R):
            m = x[r, 0]
            for j in range(1, L):
                if x[r, j] > m:
                    m = x[r, j]
            s = 0.0
            for j in range(L):
                v = np.exp(x[r, j] - m)
                y[r, j] = v
                s += v
            inv = 1.0 / s
            for j in range(L):
                y[r, j] *= inv
        return y

    @njit(cache=True)
    def _softmax_inplace_nb(x):
        R, L = x.shape
        for r in range(R):
            m = x[r, 0]
            for j in range(1, L):
                if x[r, j] > m:
                    m = x[r, j]
            s = 0.0
            for j in range(L):
                v = np.exp(x[r, j] - m)
                x[r, j] = v
                s += v
            inv = 1.0 / s
            for j in range(L):
                x[r, j] *= inv
        return x

    @njit(cache=True)
    def _softmax_bwd_nb(y, g):
        R, L = y.shape
        gx = np.empty_like(y)
        for r in range(R):
            dot = 0.0
            for j in range(L):
                dot += g[r, j] * y[r, j]
            for j in range(L):
                gx[r, j] = y[r, j] * (g[r, j] - dot)
        return gx


def softmax_rows_fwd(x2d):
    if BACKEND == "numba":
        return _softmax_fwd_nb(np.ascontiguousarray(x2d))
    return _softmax_fwd_np(x2d)


def softmax_rows_inplace(x2d):
    """In-place row softmax; caller must own the (contiguous) buffer."""
    if BACKEND == "numba":
        return _softmax_inplace_nb(x2d)
    return _softmax_inplace_np(x2d)


def softmax_rows_bwd(y2d, g2d):
    if BACKEND == "numba":
        return _softmax_bwd_nb(np.ascontiguousarray(y2d), np.ascontiguousarray(g2d))
    return _softmax_bwd_np(y2d, g2d)


# ---------------------------------------------------------------------------
# Adam update, fused and in-place over flat views
# ---------------------------------------------------------------------------


def _adam_np(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


if HAS_NUMBA:

    @njit(cache=True)
    def _adam_nb(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
        n = p.shape[0]
        for i in range(n):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * gi * gi
            m[i] = mi
            v[i] = vi
            p[i] -= (lr / bc1) * mi / (np.sqrt(vi / bc2) + eps)


def adam_update(p, g, m, v, lr, b1, b2, eps, step):
    """One Adam update in place. ``step`` is the 1-based step count."""
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    pf = p.reshape(-1)
    gf = np.ascontiguousarray(g, dtype=p.dtype).reshape(-1)
    if BACKEND == "numba":
        _adam_nb(pf, gf, m, v, lr, b1, b2, eps, bc1, bc2)
    else:
        _adam_np(pf, gf, m, v, lr, b1, b2, eps, bc1, bc2)
