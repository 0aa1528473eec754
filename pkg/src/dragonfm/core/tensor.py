"""Dense tensors with reverse-mode autodiff on top of numpy.

Row-major float32 by default; float64 is used for gradient checks. Every
operation is a pure function that allocates a fresh output, so tensors can be
shared freely. Reductions run in numpy's fixed order, which keeps repeated
runs bit-identical on the same machine.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True

_FLOAT_DTYPES = (np.float32, np.float64)


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def default_fd_step(dtype) -> float:
    """Central-difference step balancing truncation vs round-off."""
    return 1e-5 if np.dtype(dtype) == np.float64 else 1e-3


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        out = _node(self.data.astype(dtype), (self,))
        if out.requires_grad:
            def bwd(g, a=self):
                _acc(a, g.astype(a.data.dtype))
            out._backward = bwd
        return out

    # -- autodiff ------------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() requires a scalar output, got shape {self.data.shape}"
                )
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self))

    def __pow__(self, c):
        return pow_scalar(self, c)

    # method-style conveniences
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return abs_(self)


# -- graph helpers ------------------------------------------------------------


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    req = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = req
    out._parents = parents if req else ()
    out._backward = None
    return out


def _acc(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_same_dtype(a: Tensor, b: Tensor, op: str):
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: mixed dtypes {a.dtype.name} vs {b.dtype.name}")


# -- elementwise primitives ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")
    out = _node(a.data + b.data, (a, b))
    if out.requires_grad:
        def bwd(g):
            _acc(a, _unbroadcast(g, a.data.shape))
            _acc(b, _unbroadcast(g, b.data.shape))
        out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "sub")
    out = _node(a.data - b.data, (a, b))
    if out.requires_grad:
        def bwd(g):
            _acc(a, _unbroadcast(g, a.data.shape))
            _acc(b, _unbroadcast(-g, b.data.shape))
        out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "mul")
    out = _node(a.data * b.data, (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g * a.data, b.data.shape))
        out._backward = bwd
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "div")
    out = _node(a.data / b.data, (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        out._backward = bwd
    return out


def neg(a: Tensor) -> Tensor:
    out = _node(-a.data, (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, -g)
    return out


def pow_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _node(a.data ** c, (a,))
    if out.requires_grad:
        def bwd(g):
            _acc(a, g * c * a.data ** (c - 1.0))
        out._backward = bwd
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = _node(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g * y)
    return out


def log(a: Tensor) -> Tensor:
    out = _node(np.log(a.data), (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g / a.data)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _node(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g * (1.0 - y * y))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = _node(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g * y * (1.0 - y))
    return out


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = _node(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g * 0.5 / y)
    return out


def abs_(a: Tensor) -> Tensor:
    out = _node(np.abs(a.data), (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g * np.sign(a.data))
    return out


def hypot(a: Tensor, b: Tensor) -> Tensor:
    """sqrt(a^2 + b^2) with exact zeros and a guarded gradient at the origin."""
    _check_same_dtype(a, b, "hypot")
    y = np.hypot(a.data, b.data)
    out = _node(y, (a, b))
    if out.requires_grad:
        safe = np.where(y > 0, y, 1.0)
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g * a.data / safe, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g * b.data / safe, b.data.shape))
        out._backward = bwd
    return out


def maximum(a: Tensor, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first argument."""
    if not isinstance(b, Tensor):
        b = _wrap(b, a)
    _check_same_dtype(a, b, "maximum")
    take_a = a.data >= b.data
    out = _node(np.where(take_a, a.data, b.data), (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g * take_a, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g * ~take_a, b.data.shape))
        out._backward = bwd
    return out


def relu(a: Tensor) -> Tensor:
    return maximum(a, 0.0)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    c = np.asarray(np.sqrt(2.0 / np.pi), dtype=a.dtype)
    k = np.asarray(0.044715, dtype=a.dtype)
    x = a.data
    u = c * (x + k * x ** 3)
    th = np.tanh(u)
    y = 0.5 * x * (1.0 + th)
    out = _node(y, (a,))
    if out.requires_grad:
        def bwd(g):
            du = c * (1.0 + 3.0 * k * x * x)
            _acc(a, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du))
        out._backward = bwd
    return out


# -- reductions / shape ops -----------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def bwd(g):
            if axis is None:
                _acc(a, np.broadcast_to(g, a.data.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                _acc(a, np.broadcast_to(ge, a.data.shape).copy())
        out._backward = bwd
    return out


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )
    return sum_(a, axis, keepdims) * (1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    out = _node(a.data.reshape(shape), (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g.reshape(a.data.shape))
    return out


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = _node(np.swapaxes(a.data, ax1, ax2), (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, np.swapaxes(g, ax1, ax2))
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = _node(np.broadcast_to(a.data, shape).copy(), (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, _unbroadcast(g, a.data.shape))
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                _acc(t, piece)
        out._backward = bwd
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _node(a.data[idx].copy(), (a,))
    if out.requires_grad:
        def bwd(g):
            gx = np.zeros_like(a.data)
            gx[idx] = g
            _acc(a, gx)
        out._backward = bwd
    return out


def flip_last(a: Tensor) -> Tensor:
    out = _node(a.data[..., ::-1].copy(), (a,))
    if out.requires_grad:
        out._backward = lambda g: _acc(a, g[..., ::-1].copy())
    return out


# -- matmul ---------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul requires rank >= 2 operands, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out = _node(a.data @ b.data, (a, b))
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))
        out._backward = bwd
    return out


# -- fused neural-net primitives --------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; -inf entries get exactly zero weight."""
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    y = e / s
    out = _node(y, (a,))
    if out.requires_grad:
        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            _acc(a, (g - dot) * y)
        out._backward = bwd
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply per-feature gain and bias."""
    _check_same_dtype(x, gain, "layer_norm")
    if gain.data.shape != (x.data.shape[-1],) or bias.data.shape != (x.data.shape[-1],):
        raise ValueError(
            f"layer_norm gain/bias must have shape ({x.data.shape[-1]},), "
            f"got {gain.data.shape} and {bias.data.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _node(xhat * gain.data + bias.data, (x, gain, bias))
    if out.requires_grad:
        def bwd(g):
            lead = tuple(range(g.ndim - 1))
            _acc(gain, (g * xhat).sum(axis=lead))
            _acc(bias, g.sum(axis=lead))
            dxh = g * gain.data
            m1 = dxh.mean(axis=-1, keepdims=True)
            m2 = (dxh * xhat).mean(axis=-1, keepdims=True)
            _acc(x, (dxh - m1 - xhat * m2) * inv)
        out._backward = bwd
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` (axis 0) by an integer index array."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding_lookup ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding id out of range [0, {table.data.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    out = _node(table.data[ids], (table,))
    if out.requires_grad:
        def bwd(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _acc(table, gt)
        out._backward = bwd
    return out


def take_last(x: Tensor, idx) -> Tensor:
    """Gather along the last axis with an arbitrary-shape integer index."""
    idx = np.asarray(idx)
    out_data = x.data[..., idx]
    out = _node(out_data, (x,))
    if out.requires_grad:
        def bwd(g):
            gx = np.zeros_like(x.data)
            if x.data.ndim == 1:
                np.add.at(gx, idx, g)
            else:
                lead = int(np.prod(x.data.shape[:-1]))
                gxf = gx.reshape(lead, gx.shape[-1])
                gf = g.reshape((lead,) + idx.shape)
                rows = np.arange(lead).reshape((lead,) + (1,) * idx.ndim)
                np.add.at(gxf, (rows, idx[None]), gf)
                gx = gxf.reshape(x.data.shape)
            _acc(x, gx)
        out._backward = bwd
    return out


def overlap_add(frames: Tensor, hop: int, out_len: int) -> Tensor:
    """Scatter-add frames [..., F, W] at stride `hop` into [..., out_len]."""
    F, W = frames.data.shape[-2], frames.data.shape[-1]
    need = (F - 1) * hop + W
    if out_len < need:
        raise ValueError(f"overlap_add out_len {out_len} < required {need}")
    pos = hop * np.arange(F)[:, None] + np.arange(W)[None, :]
    lead_shape = frames.data.shape[:-2]
    lead = int(np.prod(lead_shape)) if lead_shape else 1
    ff = frames.data.reshape(lead, F, W)
    buf = np.zeros((lead, out_len), dtype=frames.dtype)
    rows = np.arange(lead)[:, None, None]
    np.add.at(buf, (rows, pos[None]), ff)
    out = _node(buf.reshape(lead_shape + (out_len,)), (frames,))
    if out.requires_grad:
        def bwd(g):
            gf = g.reshape(lead, out_len)[rows, pos[None]]
            _acc(frames, gf.reshape(frames.data.shape))
        out._backward = bwd
    return out


# -- gradient drivers -------------------------------------------------------------


def reverse_grad(f: Callable[[], Tensor], params: Iterable[Tensor]) -> list[np.ndarray]:
    """Exact reverse-mode gradients of a scalar-valued computation.

    `f` must build its result from operations in this module, closing over
    `params`. Returns one gradient array per parameter (zeros where the
    output does not depend on a parameter).
    """
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if not isinstance(out, Tensor):
        raise TypeError("reverse_grad expects f() to return a Tensor")
    if out.data.size != 1:
        raise ValueError(f"reverse_grad requires a scalar output, got shape {out.data.shape}")
    out.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def directional_derivative(u: Callable, z, direction, h: float):
    """Central-difference directional derivative (u(z+h d) - u(z-h d)) / 2h."""
    if h <= 0:
        raise ValueError(f"finite-difference step h must be > 0, got {h}")
    z = np.asarray(z, dtype=float)
    d = np.asarray(direction, dtype=float)
    if d.shape != z.shape:
        raise ValueError(f"direction shape {d.shape} must equal input shape {z.shape}")
    up = np.asarray(u(z + h * d), dtype=float)
    um = np.asarray(u(z - h * d), dtype=float)
    return (up - um) / (2.0 * h)


def fd_gradient_at(f: Callable[[], Tensor], param: Tensor, flat_indices, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of f() w.r.t. selected entries of `param`."""
    if h is None:
        h = default_fd_step(param.dtype)
    base = param.data
    grads = np.zeros(len(flat_indices), dtype=np.float64)
    flat = base.reshape(-1)
    for j, idx in enumerate(flat_indices):
        for sign in (+1.0, -1.0):
            bumped = flat.copy()
            bumped[idx] += sign * h
            param.data = bumped.reshape(base.shape)
            with no_grad():
                val = float(f().data)
            if sign > 0:
                up = val
            else:
                dn = val
        grads[j] = (up - dn) / (2.0 * h)
    param.data = base
    return grads
