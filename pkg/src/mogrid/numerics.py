"""Dense array math with reverse-mode gradients.

Values are numpy arrays wrapped in :class:`Tensor`. Every operation records
its inputs and a backward closure, so calling :func:`backward` on a scalar
loss walks the recorded graph in reverse topological order. Only trailing-axis
(numpy-style) broadcasting is supported; each primitive documents what it
broadcasts. Results must stay finite: any NaN/Inf raises
:class:`NonFiniteError` (disable via :func:`set_finite_checks` for speed).

Training runs in float32; a float64 mode exists for finite-difference
verification (see :func:`precision`).
"""

from __future__ import annotations

import contextlib
import warnings
import zlib

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested primitive."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"non-finite loss at step {step}")
        self.step = step


_DEFAULT_DTYPE = np.float32
_FINITE_CHECKS = True


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("only float32 and float64 are supported")
    _DEFAULT_DTYPE = dtype.type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float width (float64 for grad checks)."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


@contextlib.contextmanager
def no_finite_checks():
    """Skip per-op finite validation (training loops check the loss instead)."""
    global _FINITE_CHECKS
    old = _FINITE_CHECKS
    _FINITE_CHECKS = False
    try:
        yield
    finally:
        _FINITE_CHECKS = old


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, order-independent child RNG stream of a run seed."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {op!r}")


class Tensor:
    """A recorded node: numpy payload plus the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), bwd=None):
        if isinstance(data, Tensor):
            raise TypeError("Tensor cannot wrap a Tensor")
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents if requires_grad else ()
        self._bwd = bwd if requires_grad else None
        _check_finite(arr, op)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    # operator sugar; non-Tensor operands become constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self):
        backward_scalar(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def _make(data, op, parents, bwd) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, op=op, parents=parents, bwd=bwd)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` back down to ``shape`` after trailing-axis broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (trailing-axis broadcast on both operands)
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, "add", (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, "sub", (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, "mul", (a, b), bwd)


def matmul(a, b):
    """np.matmul semantics for ndim >= 2; batch dims broadcast numpy-style."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires ndim >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, "matmul", (a, b), bwd)


# ---------------------------------------------------------------------------
# shape ops (no broadcast)
# ---------------------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(old))

    return _make(out_data, "reshape", (a,), bwd)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def bwd(g):
        a._accumulate(g.transpose(inv))

    return _make(out_data, "transpose", (a,), bwd)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out_data, "concat", tuple(tensors), bwd)


def getitem(a, idx):
    """Basic slicing only (slices/ints/Ellipsis); each source slot hit once."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        a._accumulate(full)

    return _make(np.ascontiguousarray(out_data), "getitem", (a,), bwd)


def repeat_axis(a, k, axis):
    """Nearest-repeat each entry k times along ``axis``."""
    a = as_tensor(a)
    out_data = np.repeat(a.data, k, axis=axis)
    n = a.shape[axis]

    def bwd(g):
        shp = g.shape[:axis] + (n, k) + g.shape[axis + 1 :]
        a._accumulate(g.reshape(shp).sum(axis=axis + 1))

    return _make(out_data, "repeat_axis", (a,), bwd)


def take_axis(a, idx, axis):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out_data = np.take(a.data, idx, axis=axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        fm = np.moveaxis(full, axis, 0)
        np.add.at(fm, idx, np.moveaxis(g, axis, 0))
        a._accumulate(full)

    return _make(out_data, "take_axis", (a,), bwd)


def group_mean(a, groups, axis):
    """Mean over index groups along ``axis``; output axis length = len(groups).

    The mean is anchored at the group's first member
    (``x0 + sum(x - x0) / k``), which makes it exactly the common value when
    all members are equal, for any group size. Gradient is the usual 1/k.
    """
    a = as_tensor(a)
    src = np.moveaxis(a.data, axis, 0)
    out = np.empty((len(groups),) + src.shape[1:], dtype=a.dtype)
    for gi, members in enumerate(groups):
        first = src[members[0]]
        if len(members) == 1:
            out[gi] = first
        else:
            acc = np.zeros_like(first)
            for m in members[1:]:
                acc += src[m] - first
            out[gi] = first + acc * (1.0 / len(members))
    out_data = np.moveaxis(out, 0, axis)

    def bwd(g):
        gm = np.moveaxis(g, axis, 0)
        full = np.zeros_like(a.data)
        fm = np.moveaxis(full, axis, 0)
        for gi, members in enumerate(groups):
            share = gm[gi] * (1.0 / len(members))
            for m in members:
                fm[m] += share
        a._accumulate(full)

    return _make(np.ascontiguousarray(out_data), "group_mean", (a,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            for ax in sorted(ax % a.ndim for ax in axes):
                gg = np.expand_dims(gg, ax)
        a._accumulate(np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False))

    return _make(out_data, "sum", (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * out_data)

    return _make(out_data, "exp", (a,), bwd)


def log(a):
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        a._accumulate(g / a.data)

    return _make(out_data, "log", (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    e = np.exp(-np.abs(a.data))
    pos = 1.0 / (1.0 + e)
    out_data = np.where(a.data >= 0, pos, 1.0 - pos)

    def bwd(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, "sigmoid", (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, "tanh", (a,), bwd)


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def bwd(g):
        a._accumulate(g * (a.data > 0))

    return _make(out_data, "relu", (a,), bwd)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a):
    """tanh-approximation GELU (smooth, finite-difference friendly)."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    out_data = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        a._accumulate(g * da)

    return _make(out_data, "gelu", (a,), bwd)


def softplus(a):
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def bwd(g):
        e = np.exp(-np.abs(a.data))
        pos = 1.0 / (1.0 + e)
        sig = np.where(a.data >= 0, pos, 1.0 - pos)
        a._accumulate(g * sig)

    return _make(out_data, "softplus", (a,), bwd)


def softmax(a, axis=-1):
    """Stable softmax along one axis (via the kernel backend on 2-D views)."""
    a = as_tensor(a)
    ax = axis % a.ndim
    moved = np.moveaxis(a.data, ax, -1)
    flat = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    y2 = kernels.softmax_rows_fwd(flat)
    out_data = np.moveaxis(y2.reshape(moved.shape), -1, ax)

    def bwd(g):
        gm = np.ascontiguousarray(np.moveaxis(g, ax, -1))
        g2 = gm.reshape(-1, gm.shape[-1])
        gx2 = kernels.softmax_rows_bwd(y2, g2)
        a._accumulate(np.moveaxis(gx2.reshape(gm.shape), -1, ax))

    return _make(np.ascontiguousarray(out_data), "softmax", (a,), bwd)


def masked_softmax(a, mask_add, axis=-1):
    """softmax(a + mask_add) along ``axis`` with one fused temporary.

    ``mask_add`` is a constant additive array (0 / -1e9), broadcast against
    ``a``. Fully masked entries underflow to exactly 0 after the shift."""
    a = as_tensor(a)
    ax = axis % a.ndim
    tmp = a.data + mask_add  # owned buffer, consumed in place by the kernel
    moved = np.moveaxis(tmp, ax, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    if not flat.flags.c_contiguous:
        flat = np.ascontiguousarray(flat)
    y2 = kernels.softmax_rows_inplace(flat)
    out_data = np.moveaxis(y2.reshape(moved.shape), -1, ax)

    def bwd(g):
        gm = np.ascontiguousarray(np.moveaxis(g, ax, -1))
        g2 = gm.reshape(-1, gm.shape[-1])
        gx2 = kernels.softmax_rows_bwd(y2, g2)
        a._accumulate(np.moveaxis(gx2.reshape(gm.shape), -1, ax))

    return _make(np.ascontiguousarray(out_data), "masked_softmax", (a,), bwd)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale/shift by gamma/beta (1-D)."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, x.shape[-1]).sum(axis=0))
        if a.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (dxhat - m1 - xhat * m2))

    return _make(out_data, "layer_norm", (a, gamma, beta), bwd)


def rope_rotate(a, cos, sin):
    """Rotary embedding: a*cos + rotate_pairs(a)*sin with constant tables.

    ``cos``/``sin`` broadcast against ``a``; consecutive pairs of the last
    axis share one angle. Fused into one node to keep attention graphs small.
    """
    a = as_tensor(a)
    x = a.data
    if x.shape[-1] % 2 != 0:
        raise ShapeError("rope_rotate needs an even last axis")
    rot = np.empty_like(x)
    rot[..., 0::2] = -x[..., 1::2]
    rot[..., 1::2] = x[..., 0::2]
    out_data = x * cos + rot * sin

    def bwd(g):
        gs = g * sin
        gx = g * cos
        gx[..., 0::2] += gs[..., 1::2]
        gx[..., 1::2] -= gs[..., 0::2]
        a._accumulate(gx)

    return _make(out_data, "rope_rotate", (a,), bwd)


def rotate_pairs(a):
    """(x0, x1) -> (-x1, x0) on consecutive pairs of the last axis (RoPE)."""
    a = as_tensor(a)
    x = a.data
    if x.shape[-1] % 2 != 0:
        raise ShapeError("rotate_pairs needs an even last axis")
    out_data = np.empty_like(x)
    out_data[..., 0::2] = -x[..., 1::2]
    out_data[..., 1::2] = x[..., 0::2]

    def bwd(g):
        gx = np.empty_like(g)
        gx[..., 1::2] = -g[..., 0::2]
        gx[..., 0::2] = g[..., 1::2]
        a._accumulate(gx)

    return _make(out_data, "rotate_pairs", (a,), bwd)


def sign_ste(a, scale=1.0):
    """sign(x)*scale with sign(0) := +1; straight-through backward.

    The backward pass treats the quantizer as identity for |x| <= 1 and
    blocks gradient outside, ignoring ``scale`` (standard STE convention).
    """
    a = as_tensor(a)
    out_data = np.where(a.data < 0, -scale, scale).astype(a.dtype)

    def bwd(g):
        a._accumulate(g * (np.abs(a.data) <= 1.0))

    return _make(out_data, "sign_ste", (a,), bwd)


def binary_entropy(p, eps=1e-12):
    """Elementwise Bernoulli entropy in nats; p clamped to [eps, 1-eps]."""
    p = as_tensor(p)
    c = np.clip(p.data, eps, 1.0 - eps)
    out_data = -(c * np.log(c) + (1.0 - c) * np.log(1.0 - c))

    def bwd(g):
        p._accumulate(g * np.log((1.0 - c) / c))

    return _make(out_data, "binary_entropy", (p,), bwd)


def conv1d_same(x, w, b):
    """Same-padded conv over axis 1 of (B, T, Cin); w is (K, Cin, Cout)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3 or w.ndim != 3 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv1d_same: x {x.shape} vs w {w.shape}")
    xd = np.ascontiguousarray(x.data)
    out_data = kernels.conv1d_fwd(xd, w.data, b.data)

    def bwd(g):
        gx, gw, gb = kernels.conv1d_bwd(xd, w.data, g)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return _make(out_data, "conv1d_same", (x, w, b), bwd)


# ---------------------------------------------------------------------------
# graph walking
# ---------------------------------------------------------------------------


def _topo(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward_scalar(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; accumulates into .grad."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any trainable tensor")
    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable leaves. Each parameter gets its own init stream, so
    creation order does not affect initial values."""

    def __init__(self, seed: int = 0, dtype=None):
        self.seed = seed
        self.dtype = np.dtype(dtype or default_dtype()).type
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, shape, init="normal", std=0.02) -> Tensor:
        if name in self.params:
            p = self.params[name]
            if p.shape != tuple(shape):
                raise ShapeError(f"param {name!r} re-created with shape {shape}, had {p.shape}")
            return p
        if init == "normal":
            rng = substream(self.seed, "init/" + name)
            data = rng.normal(0.0, std, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        else:
            data = np.asarray(init)
            if data.shape != tuple(shape):
                raise ShapeError(f"init array for {name!r} has shape {data.shape}")
        t = Tensor(data.astype(self.dtype), requires_grad=True, op="param")
        self.params[name] = t
        return t

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in sorted(self.params.items())}

    def load_state_dict(self, state: dict):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=self.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"param {k!r}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
            p.grad = None


def backward(loss: Tensor, store: ParamStore) -> dict[str, np.ndarray]:
    """Backward pass returning named gradients for every store parameter.

    Parameters disconnected from the loss get zero gradients plus a warning.
    """
    store.zero_grad()
    backward_scalar(loss)
    grads = {}
    for name, p in store.params.items():
        if p.grad is None:
            warnings.warn(f"parameter {name!r} is disconnected from the loss; gradient = 0")
            p.grad = np.zeros_like(p.data)
        grads[name] = p.grad
    return grads


class Adam:
    """Adam with bias correction. Defaults: lr 3e-4, betas (0.9, 0.99), eps 1e-8."""

    def __init__(self, store: ParamStore, lr=3e-4, betas=(0.9, 0.99), eps=1e-8):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros(p.data.size, dtype=p.data.dtype) for k, p in store.params.items()}
        self._v = {k: np.zeros(p.data.size, dtype=p.data.dtype) for k, p in store.params.items()}

    def step(self):
        self.t += 1
        for name in sorted(self.store.params):
            p = self.store.params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            kernels.adam_update(
                p.data, g, self._m[name], self._v[name], self.lr, self.b1, self.b2, self.eps, self.t
            )
