"""Minimal n-dimensional tensor engine with reverse-mode differentiation.

Arrays are numpy float32/float64; every differentiable op records a node
holding its inputs and a VJP closure. ``backward`` walks the recorded
graph once in reverse topological order. Reductions use numpy's fixed
reduction order, so repeated runs on identical inputs are bit-identical.

Broadcasting is restricted to leading-axis expansion: two operands must
have equal shapes, or one shape must be a suffix of the other. Anything
fancier has to be an explicit reshape.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN/Inf from finite inputs."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar loss, double backward...)."""


_grad_enabled = True
_finite_checks = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op NaN/Inf checking; returns the previous setting."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = bool(enabled)
    return prev


class _Node:
    """One recorded operation: kind, parent tensors, and a VJP closure
    mapping the output cotangent to per-parent cotangents."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"Tensor supports float32/float64, got {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    # -- introspection ----------------------------------------------------

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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def gather(self, index, axis=0):
        return gather(self, index, axis)

    def slice(self, axis, start, stop):
        return slice_axis(self, axis, start, stop)

    def backward(self):
        return backward(self)


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _finite_or_raise(out: np.ndarray, op: str):
    # one fused pass: the float64 sum is NaN/Inf iff some element is
    if _finite_checks and not np.isfinite(np.sum(out, dtype=np.float64)):
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def _make(out_data, op, parents, vjp) -> Tensor:
    _finite_or_raise(out_data, op)
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad or p.node is not None for p in parents):
        out.node = _Node(op, tuple(parents), vjp)
        out.requires_grad = True
    return out


def _check_broadcast(op, a_shape, b_shape):
    """Equal shapes, or one a suffix of the other (leading-axis expansion)."""
    small, big = sorted((tuple(a_shape), tuple(b_shape)), key=len)
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"op '{op}': shapes {a_shape} and {b_shape} do not "
                         f"conform (only leading-axis broadcast is supported)")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum the leading axes a broadcast introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _check_dtypes(op, a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise TypeError(f"op '{op}': mixed dtypes {a.dtype} and {b.dtype}")


# -- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, getattr(b, "dtype", np.float32))
    b = _coerce(b, a.dtype)
    _check_dtypes("add", a, b)
    _check_broadcast("add", a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, getattr(b, "dtype", np.float32))
    b = _coerce(b, a.dtype)
    _check_dtypes("sub", a, b)
    _check_broadcast("sub", a.shape, b.shape)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(out, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, getattr(b, "dtype", np.float32))
    b = _coerce(b, a.dtype)
    _check_dtypes("mul", a, b)
    _check_broadcast("mul", a.shape, b.shape)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, "mul", (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


# -- matmul ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (..., m, k) @ b (k, n); b must be 2-D."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensor operands")
    _check_dtypes("matmul", a, b)
    if b.ndim != 2 or a.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"op 'matmul': shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(out, "matmul", (a, b), vjp)


# -- elementwise unary -------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _make(out, "log", (a,), lambda g: (g / a.data,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)
    return _make(out, "softplus", (a,), lambda g: (g * _sigmoid(a.data),))


def silu(a: Tensor) -> Tensor:
    sig = _sigmoid(a.data)
    out = a.data * sig

    def vjp(g):
        return (g * (sig + a.data * sig * (1.0 - sig)),)

    return _make(out, "silu", (a,), vjp)


# -- normalization (last axis, no affine) ------------------------------------


def rmsnorm(a: Tensor, eps: float = 1e-6) -> Tensor:
    ms = np.mean(a.data * a.data, axis=-1, keepdims=True)
    s = 1.0 / np.sqrt(ms + np.asarray(eps, dtype=a.dtype))
    out = a.data * s

    def vjp(g):
        n = a.shape[-1]
        gy = np.sum(g * out, axis=-1, keepdims=True) / n
        return (s * (g - out * gy),)

    return _make(out, "rmsnorm", (a,), vjp)


def layernorm(a: Tensor, eps: float = 1e-6) -> Tensor:
    mu = np.mean(a.data, axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    s = 1.0 / np.sqrt(var + np.asarray(eps, dtype=a.dtype))
    out = xc * s

    def vjp(g):
        n = a.shape[-1]
        gm = np.mean(g, axis=-1, keepdims=True)
        gy = np.mean(g * out, axis=-1, keepdims=True)
        return (s * (g - gm - out * gy),)

    return _make(out, "layernorm", (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    m = np.max(a.data, axis=-1, keepdims=True)
    z = a.data - m
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    out = z - lse

    def vjp(g):
        return (g - np.exp(out) * np.sum(g, axis=-1, keepdims=True),)

    return _make(out, "log_softmax", (a,), vjp)


# -- layout ------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size and -1 not in shape:
        raise ShapeError(f"op 'reshape': cannot reshape {a.shape} to {shape}")
    out = a.data.reshape(shape)
    return _make(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"op 'transpose': axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)
    return _make(out, "transpose", (a,), lambda g: (g.transpose(inv),))


def gather(a: Tensor, index, axis: int = 0) -> Tensor:
    """Select entries along one axis by an integer index list.

    Repeated indices are allowed; the VJP scatter-adds, so their
    cotangents accumulate.
    """
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"op 'gather': index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise ShapeError(f"op 'gather': index out of range for axis {axis} of {a.shape}")
    out = np.take(a.data, idx, axis=axis)

    def vjp(g):
        acc = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(acc, (slice(None),) * axis + (idx,), g)
        return (acc,)

    return _make(out, "gather", (a,), vjp)


def scatter(a: Tensor, index, axis: int = 0, size: int = None) -> Tensor:
    """Inverse of gather: place entries of ``a`` at ``index`` along ``axis``
    in a zero tensor whose that-axis extent is ``size`` (adds on repeats)."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1 or idx.size != a.shape[axis]:
        raise ShapeError(f"op 'scatter': index shape {idx.shape} does not match "
                         f"axis {axis} of {a.shape}")
    if size is None:
        size = int(idx.max()) + 1 if idx.size else 0
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ShapeError(f"op 'scatter': index out of range for size {size}")
    out_shape = a.shape[:axis] + (size,) + a.shape[axis + 1:]
    out = np.zeros(out_shape, dtype=a.dtype)
    np.add.at(out, (slice(None),) * axis + (idx,), a.data)

    def vjp(g):
        return (np.take(g, idx, axis=axis),)

    return _make(out, "scatter", (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("op 'concat': needs at least one tensor")
    ref = tensors[0]
    for t in tensors[1:]:
        _check_dtypes("concat", ref, t)
        if t.ndim != ref.ndim or (t.shape[:axis] + t.shape[axis + 1:]
                                  != ref.shape[:axis] + ref.shape[axis + 1:]):
            raise ShapeError(f"op 'concat': shape {t.shape} does not match {ref.shape} "
                             f"outside axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        grads, start = [], 0
        for n in sizes:
            sl = (slice(None),) * axis + (slice(start, start + n),)
            grads.append(g[sl])
            start += n
        return tuple(grads)

    return _make(out, "concat", tuple(tensors), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"op 'slice': [{start}:{stop}] out of range for axis "
                         f"{axis} of {a.shape}")
    sl = (slice(None),) * axis + (slice(start, stop),)
    out = a.data[sl]

    def vjp(g):
        acc = np.zeros(a.shape, dtype=g.dtype)
        acc[sl] = g
        return (acc,)

    return _make(out, "slice", (a,), vjp)


# -- reductions ----------------------------------------------------------------


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, "sum", (a,), vjp)


def reduce_mean(a: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.mean(a.data, axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype, copy=True),)

    return _make(out, "mean", (a,), vjp)


# -- custom-op escape hatch ----------------------------------------------------


def custom_op(op: str, out_data: np.ndarray, parents, vjp) -> Tensor:
    """Record a hand-written op (used by fused kernels such as the scan)."""
    return _make(out_data, op, tuple(parents), vjp)


# -- backward --------------------------------------------------------------------


def backward(loss: Tensor) -> dict:
    """Reverse-mode sweep from a scalar loss.

    Every tensor reached by the sweep gets ``.grad`` populated; leaf
    gradients accumulate additively across calls, intermediate ones are
    overwritten. Returns the gradient map {requires_grad leaf: gradient}.
    The graph is freed afterwards; a second call on it raises GraphError.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise GraphError("backward() on a tensor with no recorded graph "
                         "(already consumed, or built under no_grad)")
    if loss.node.vjp is None:
        raise GraphError("backward() called twice on the same graph")

    # iterative DFS postorder over tensors that carry graph nodes
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            topo.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            if p.node is not None and id(p) not in visited:
                stack.append((p, False))

    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for t in reversed(topo):
        g = acc.pop(id(t), None)
        if g is None:
            continue
        t.grad = g
        node = t.node
        if node.vjp is None:
            raise GraphError("backward() called twice on the same graph")
        grads = node.vjp(g)
        node.vjp = None
        for p, pg in zip(node.parents, grads):
            if pg is None:
                continue
            if p.node is not None:
                prev = acc.get(id(p))
                acc[id(p)] = pg if prev is None else prev + pg
            elif p.requires_grad:
                pg = pg.astype(p.dtype, copy=False)
                p.grad = pg if p.grad is None else p.grad + pg
                prev = leaf_grads.get(p)
                leaf_grads[p] = pg if prev is None else prev + pg
    return leaf_grads
