"""Small dense-tensor engine with tape-based reverse-mode differentiation.

Everything trains through this module: a ``Tensor`` wraps a float32/float64
numpy array, and while a ``Tape`` is active every op records a node whose
``backward`` closure maps the output gradient to input gradients.  Gradients
are accumulated by walking the node list in reverse; because each op creates
a fresh output tensor the recording order is already a topological order.

Every op checks its output for NaN/Inf and raises ``NonFiniteError`` on a
violation, so numerical blow-ups fail loudly at the op that produced them
instead of surfacing as a garbage loss many steps later.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class NonFiniteError(RuntimeError):
    """An op produced NaN or Inf on inputs that were supposed to be finite."""


class ShapeError(ValueError):
    """Operands have shapes the op does not accept."""


def _check_dtype(dtype: np.dtype) -> np.dtype:
    dtype = np.dtype(dtype)
    if dtype not in _FLOAT_DTYPES:
        raise TypeError(f"only float32/float64 tensors are supported, got {dtype}")
    return dtype


def _contig(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray promotes 0-d arrays to 1-d; 0-d is always contiguous
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def _ensure_finite(op: str, arr: np.ndarray) -> None:
    # A single reduction is much cheaper than isfinite().all() on big arrays;
    # any NaN/Inf poisons the sum (inf + -inf gives NaN), so a finite sum of a
    # sanely-scaled array implies a finite array.
    if not math.isfinite(float(np.sum(arr))):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


class Tensor:
    """Immutable-by-convention dense array; ops return new tensors.

    Optimizers may update ``.data`` in place between steps, but no op ever
    mutates an input.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor; use .detach() or .data")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(_check_dtype(dtype), copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        arr = _contig(arr)
        _ensure_finite("tensor", arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        return out

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; scalars are treated as non-differentiable constants.
    def __add__(self, other):
        return add_scalar(self, other) if _is_scalar(other) else add(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return add_scalar(self, -other) if _is_scalar(other) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if _is_scalar(other) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Records ops executed inside a ``with`` block and replays them in reverse.

    >>> with Tape() as tape:
    ...     loss = sum_all(mul(x, x))
    >>> tape.backward(loss)        # populates x.grad
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must be exited in LIFO order"
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        produced = {id(node.output) for node in self.nodes}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue  # output never influenced the loss
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for node in self.nodes:
            for inp in node.inputs:
                if inp.requires_grad and id(inp) not in produced:
                    gi = grads.get(id(inp))
                    if gi is None:
                        continue
                    if inp.grad is None:
                        inp.grad = np.array(gi, copy=True)
                    else:
                        inp.grad = inp.grad + gi
                    grads[id(inp)] = None  # leaf visited; don't double-add


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], tuple]) -> Tensor:
    _ensure_finite(op, out_data)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(TapeNode(op, inputs, out, backward))
    else:
        out.requires_grad = False
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit("scale", a.data * a.dtype.type(s), (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit("add_scalar", a.data + a.dtype.type(s), (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# matmul


def _matmul_ordered(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Accumulate over k in index order via rank-1 updates.  For tiny inner
    # dims this reproduces, bit for bit, a straightforward triple-loop
    # evaluation -- BLAS kernels are free to reorder and fuse, which changes
    # the last ulp and makes results unreproducible against simple references.
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    ad, bd = a.data, b.data
    if a.shape[1] <= 8:
        out = _matmul_ordered(ad, bd)
    else:
        out = ad @ bd
    return _emit("matmul", out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------------------
# activations and other nonlinearities


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _emit("exp", e, (a,), lambda g: (g * e,))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # exp is only ever fed a non-positive argument, so it cannot overflow.
    z = np.exp(-np.abs(x))
    pos = 1.0 / (1.0 + z)
    return np.where(x >= 0, pos, 1.0 - pos)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_stable(a.data)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("relu", np.maximum(ad, 0), (a,), lambda g: (g * (ad > 0),))


def silu(a: Tensor) -> Tensor:
    ad = a.data
    s = _sigmoid_stable(ad)
    return _emit("silu", ad * s, (a,), lambda g: (g * s * (1.0 + ad * (1.0 - s)),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) computed as max(x, 0) + log1p(exp(-|x|))."""
    ad = a.data
    out = np.maximum(ad, 0) + np.log1p(np.exp(-np.abs(ad)))
    return _emit("softplus", out, (a,), lambda g: (g * _sigmoid_stable(ad),))


def softmax_last(a: Tensor) -> Tensor:
    """Softmax along the last axis, shift-stabilized."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _emit("softmax", s, (a,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a per-feature affine map."""
    c = x.shape[-1]
    if c == 0:
        raise ShapeError("layernorm over an empty feature axis")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layernorm: affine params must have shape ({c},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        # reduce over every axis except the feature axis
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        return dx, dgamma, dbeta

    return _emit("layernorm", out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolutions and pooling


def dwconv3x3(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise 3x3 convolution with zero padding 1 on a (C, H, W) tensor.

    Accumulates the nine taps in row-major tap order, which keeps the result
    bit-identical to a direct sliding-window evaluation.
    """
    if x.ndim != 3:
        raise ShapeError(f"dwconv3x3 expects (C, H, W), got {x.shape}")
    c, h, w = x.shape
    if kernel.shape != (c, 3, 3):
        raise ShapeError(f"dwconv3x3: kernel must be ({c}, 3, 3), got {kernel.shape}")
    xd, kd = x.data, kernel.data
    xp = np.zeros((c, h + 2, w + 2), dtype=xd.dtype)
    xp[:, 1 : h + 1, 1 : w + 1] = xd
    out = np.zeros_like(xd)
    for di in range(3):
        for dj in range(3):
            out += xp[:, di : di + h, dj : dj + w] * kd[:, di, dj][:, None, None]
    if bias is not None:
        if bias.shape != (c,):
            raise ShapeError(f"dwconv3x3: bias must be ({c},)")
        out = out + bias.data[:, None, None]

    def backward(g):
        gp = np.zeros((c, h + 2, w + 2), dtype=g.dtype)
        gp[:, 1 : h + 1, 1 : w + 1] = g
        dx = np.zeros_like(xd)
        dk = np.zeros_like(kd)
        for di in range(3):
            for dj in range(3):
                # correlation flips to convolution in the input gradient
                dx += gp[:, 2 - di : 2 - di + h, 2 - dj : 2 - dj + w] \
                    * kd[:, di, dj][:, None, None]
                dk[:, di, dj] = (g * xp[:, di : di + h, dj : dj + w]).sum(axis=(1, 2))
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(1, 2))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit("dwconv3x3", out, inputs, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           padding: int = 1) -> Tensor:
    """Stride-1 2-D convolution on (B, Cin, H, W) with (Cout, Cin, kh, kw) weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape}, {weight.shape}")
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {cin_w}")
    xd, wd = x.data, weight.data
    xp = np.zeros((b, cin, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
    xp[:, :, padding : padding + h, padding : padding + w] = xd
    ho = h + 2 * padding - kh + 1
    wo = w + 2 * padding - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = _contig(win.transpose(0, 2, 3, 1, 4, 5)) \
        .reshape(b * ho * wo, cin * kh * kw)
    wmat = wd.reshape(cout, cin * kh * kw).T
    out = (cols @ wmat).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    out = _contig(out)
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d: bias must be ({cout},)")
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gmat = _contig(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, cout)
        dw = (gmat.T @ cols).reshape(cout, cin, kh, kw)
        dcols = gmat @ wmat.T
        dwin = dcols.reshape(b, ho, wo, cin, kh, kw)
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                dxp[:, :, di : di + ho, dj : dj + wo] += \
                    dwin[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", out, inputs, backward)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 on (B, C, H, W); H and W must be even."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2 expects (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2 needs even spatial dims, got {h}x{w}")
    xd = x.data.reshape(b, c, h // 2, 2, w // 2, 2)
    out = xd.mean(axis=(3, 5))

    def backward(g):
        gd = np.empty((b, c, h // 2, 2, w // 2, 2), dtype=g.dtype)
        gd[...] = (g * 0.25)[:, :, :, None, :, None]
        return (gd.reshape(b, c, h, w),)

    return _emit("avgpool2", out, (x,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)
    orig = x.shape
    return _emit("reshape", _contig(out), (x,),
                 lambda g: (g.reshape(orig),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    inv = tuple(np.argsort(axes))
    out = _contig(x.data.transpose(axes))
    return _emit("permute", out, (x,), lambda g: (g.transpose(inv),))


def flip(x: Tensor, axis: int) -> Tensor:
    out = _contig(np.flip(x.data, axis=axis))
    return _emit("flip", out, (x,), lambda g: (np.flip(g, axis=axis),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(_contig(p) for p in np.split(g, splits, axis=axis))

    return _emit("concat", out, tuple(tensors), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = _contig(x.data[idx])
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[idx] = g
        return (gx,)

    return _emit("slice", out, (x,), backward)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast to ``shape`` (numpy rules) as a materialized copy."""
    shape = tuple(int(s) for s in shape)
    out = _contig(np.broadcast_to(x.data, shape))
    in_shape = x.shape

    def backward(g):
        # sum over the axes that were added or stretched
        pad = len(shape) - len(in_shape)
        g = g.sum(axis=tuple(range(pad))) if pad else g
        axes = tuple(i for i, s in enumerate(in_shape) if s == 1 and shape[pad + i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(in_shape),)

    return _emit("expand", out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    shape = x.shape
    return _emit("sum_all", out, (x,),
                 lambda g: (np.broadcast_to(g, shape).astype(g.dtype, copy=True),))


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape
    ax = axis % x.ndim

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _emit("sum_axis", _contig(out), (x,), backward)


def mean_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = x.shape[axis % x.ndim]
    out = x.data.mean(axis=axis, keepdims=keepdims)
    shape = x.shape
    ax = axis % x.ndim

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=True),)

    return _emit("mean_axis", _contig(out), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# constructors

def zeros(shape, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_check_dtype(dtype)), requires_grad=requires_grad)


def ones(shape, dtype=np.float64, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_check_dtype(dtype)), requires_grad=requires_grad)


_ACTIVATIONS = {
    "relu": relu,
    "silu": silu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation '{kind}'") from None
    return fn(x)
