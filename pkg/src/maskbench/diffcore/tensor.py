"""Tensor type and reverse-mode tape.

Every differentiable op appends a node to the active :class:`Tape`.  Nodes are
recorded in execution order, so the tape is always topologically sorted and
:func:`backward` simply walks it in reverse.
"""
import threading
from contextlib import contextmanager

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


_local = threading.local()


class Node:
    __slots__ = ("op", "inputs", "backward_fn", "grad", "tape", "index")

    def __init__(self, op, inputs, backward_fn, tape, index):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.grad = None
        self.tape = tape
        self.index = index


class Tape:
    """Ordered record of differentiable operations for one thread."""

    def __init__(self):
        self.nodes = []

    def record(self, op, inputs, backward_fn):
        node = Node(op, inputs, backward_fn, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = [Tape()]
    return stack


def current_tape():
    return _tape_stack()[-1]


def grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    """n-dimensional real array, optionally tracked on the tape."""

    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, op, inputs, backward_fn):
    """Wrap an op result, checking finiteness and recording on the tape."""
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = current_tape().record(op, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def log(a):
    ad = a.data
    return _make(np.log(ad), "log", (a,), lambda g: (g / ad,))


def exp(a):
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def clip_min(a, floor):
    """max(a, floor) for a constant floor (scalar or broadcastable array); no gradient where clamped."""
    ad = a.data
    keep = ad > floor
    return _make(np.where(keep, ad, floor).astype(ad.dtype), "clip_min", (a,), lambda g: (g * keep,))


def square(a):
    ad = a.data
    return _make(ad * ad, "square", (a,), lambda g: (2.0 * g * ad,))


# ---------------------------------------------------------------------------
# linear algebra and reductions

def matmul(a, b):
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise DimensionError(f"matmul: {exc}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "matmul", (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# ---------------------------------------------------------------------------
# activations

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh", "prelu")


def activation(x, kind, alpha=None):
    """Elementwise nonlinearity; ``prelu`` needs a learnable ``alpha`` tensor."""
    if kind == "identity":
        return x
    xd = x.data
    if kind == "relu":
        pos = xd > 0
        return _make(np.where(pos, xd, 0.0).astype(xd.dtype), "relu", (x,), lambda g: (g * pos,))
    if kind == "sigmoid":
        out = 0.5 * (np.tanh(0.5 * xd) + 1.0)
        return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))
    if kind == "tanh":
        out = np.tanh(xd)
        return _make(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "prelu":
        if alpha is None:
            raise ContractError("prelu activation requires an alpha tensor")
        alpha = as_tensor(alpha, x)
        ad = alpha.data
        pos = xd > 0
        out = np.where(pos, xd, ad * xd).astype(xd.dtype)

        def backward(g):
            gx = np.where(pos, g, g * ad)
            ga = _unbroadcast(np.where(pos, 0.0, g * xd), ad.shape)
            return gx, ga

        return _make(out, "prelu", (x, alpha), backward)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def relu(x):
    return activation(x, "relu")


def sigmoid(x):
    return activation(x, "sigmoid")


def tanh(x):
    return activation(x, "tanh")


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x, gain, bias, eps=1e-8, axis=-2):
    """Normalize over ``axis`` (the feature axis) then apply gain and bias.

    ``gain`` and ``bias`` must broadcast against ``x`` and be constant along
    every axis except ``axis``; the default matches a D x T layout with D x 1
    affine parameters.
    """
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    gain, bias = as_tensor(gain, x), as_tensor(bias, x)
    xd = x.data
    n = xd.shape[axis]
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = gd * xhat + bias.data

    def backward(g):
        dxhat = g * gd
        dx = inv / n * (n * dxhat - dxhat.sum(axis=axis, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=axis, keepdims=True))
        return dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape)

    return _make(out, "layer_norm", (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# structural ops

def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: invalid axes {axes} for {a.ndim}-D tensor")
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), "transpose", (a,),
                 lambda g: (np.transpose(g, inverse),))


def _check_index(shape, idx):
    items = list(idx) if isinstance(idx, tuple) else [idx]
    if any(i is Ellipsis for i in items):
        pos = next(k for k, i in enumerate(items) if i is Ellipsis)
        used = sum(1 for i in items if i is not None and i is not Ellipsis)
        items[pos:pos + 1] = [slice(None)] * (len(shape) - used)
    dim = 0
    for item in items:
        if item is None:
            continue
        if dim >= len(shape):
            raise DimensionError(f"too many indices for shape {shape}")
        n = shape[dim]
        if isinstance(item, (int, np.integer)):
            if not -n <= item < n:
                raise DimensionError(f"index {item} out of range for axis {dim} of size {n}")
        elif isinstance(item, slice):
            for bound in (item.start, item.stop):
                if bound is not None and not -n <= bound <= n:
                    raise DimensionError(f"slice bound {bound} out of range for axis {dim} of size {n}")
        else:
            arr = np.asarray(item)
            if arr.dtype.kind in "iu" and arr.size and (arr.max() >= n or arr.min() < -n):
                raise DimensionError(f"index array out of range for axis {dim} of size {n}")
        dim += 1


def getitem(a, idx):
    """Indexing/slicing; out-of-range indices raise :class:`DimensionError`."""
    _check_index(a.shape, idx)
    out = a.data[idx]
    shape, dtype = a.shape, a.dtype
    basic = all(isinstance(i, (slice, int, np.integer, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, copy=True), "getitem", (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _make(out, "concat", tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, "stack", tuple(tensors), backward)


def reverse_time(x, axis=-1):
    """Flip the time axis (an involution)."""
    return _make(np.flip(x.data, axis=axis).copy(), "reverse_time", (x,),
                 lambda g: (np.flip(g, axis=axis).copy(),))


def pad_time(x, before, after):
    """Zero-pad the last axis."""
    if before < 0 or after < 0:
        raise DimensionError("padding must be non-negative")
    width = [(0, 0)] * (x.ndim - 1) + [(before, after)]
    n = x.shape[-1]
    return _make(np.pad(x.data, width), "pad_time", (x,),
                 lambda g: (g[..., before:before + n].copy(),))


def _frame_array(xd, size, hop, count):
    out = np.empty(xd.shape[:-1] + (size, count), dtype=xd.dtype)
    stop = hop * (count - 1) + 1
    for i in range(size):
        out[..., i, :] = xd[..., i:i + stop:hop]
    return out


def _overlap_add_array(fd, hop):
    size, count = fd.shape[-2], fd.shape[-1]
    length = hop * (count - 1) + size
    out = np.zeros(fd.shape[:-2] + (length,), dtype=fd.dtype)
    stop = hop * (count - 1) + 1
    for i in range(size):
        out[..., i:i + stop:hop] += fd[..., i, :]
    return out


def frame(x, size, hop):
    """Slice the last axis into overlapping frames -> (..., size, count).

    Column t holds samples ``t*hop .. t*hop+size-1``; the length must already
    satisfy ``(len - size) % hop == 0``.
    """
    n = x.shape[-1]
    if size < 1 or hop < 1 or n < size or (n - size) % hop:
        raise DimensionError(f"frame: length {n} does not tile with size={size}, hop={hop}")
    count = (n - size) // hop + 1
    return _make(_frame_array(x.data, size, hop, count), "frame", (x,),
                 lambda g: (_overlap_add_array(g, hop),))


def overlap_add(frames, hop):
    """Adjoint of :func:`frame`: sum frame columns back onto a time axis."""
    size, count = frames.shape[-2], frames.shape[-1]
    return _make(_overlap_add_array(frames.data, hop), "overlap_add", (frames,),
                 lambda g: (_frame_array(g, size, hop, count),))


# ---------------------------------------------------------------------------
# fused recurrence

def lstm(x, w_ih, w_hh, b):
    """Unidirectional LSTM over a time-major sequence, zero initial state.

    x: (T, B, D); w_ih: (4H, D); w_hh: (4H, H); b: (4H,).  Gate order is
    input, forget, output, cell candidate.  Returns hidden states (T, B, H).
    """
    if x.ndim != 3 or w_ih.shape[1] != x.shape[2] or w_hh.shape[0] != w_ih.shape[0] \
            or w_hh.shape[0] != 4 * w_hh.shape[1] or b.shape != (w_ih.shape[0],):
        raise DimensionError(f"lstm: incompatible shapes x={x.shape} w_ih={w_ih.shape} "
                             f"w_hh={w_hh.shape} b={b.shape}")
    xd, wi, wh = x.data, w_ih.data, w_hh.data
    T, B, D = xd.shape
    gx = (xd.reshape(T * B, D) @ wi.T + b.data).reshape(T, B, -1)
    w_hh_t = wh.T
    hs, cs, acts = kernels.lstm_forward(gx, w_hh_t)
    H = hs.shape[2]

    def backward(g):
        dgx = kernels.lstm_backward(g, acts, cs, w_hh_t)
        flat = dgx.reshape(T * B, 4 * H)
        dx = (flat @ wi).reshape(T, B, D) if x.requires_grad else None
        dwi = flat.T @ xd.reshape(T * B, D)
        h_prev = np.zeros_like(hs)
        h_prev[1:] = hs[:-1]
        dwh = flat.T @ h_prev.reshape(T * B, H)
        return dx, dwi, dwh, flat.sum(axis=0)

    return _make(hs, "lstm", (x, w_ih, w_hh, b), backward)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss):
    """Accumulate gradients of a scalar ``loss`` into every reachable leaf.

    Returns a dict mapping each leaf tensor (by identity) to its gradient.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward needs a scalar loss tensor")
    if loss.node is None:
        raise ContractError("loss is not on an active tape (no inputs require grad)")
    tape = loss.node.tape
    nodes = tape.nodes[:loss.node.index + 1]
    loss.node.grad = np.ones(loss.shape, dtype=loss.dtype)
    leaves = {}
    for node in reversed(nodes):
        g = node.grad
        if g is None:
            continue
        node.grad = None
        grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is not None:
                inp.node.grad = gi if inp.node.grad is None else inp.node.grad + gi
            else:
                gi = np.asarray(gi, dtype=inp.dtype).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                leaves[id(inp)] = inp
    tape.clear()
    return {t: t.grad for t in leaves.values()}
