"""Reverse-mode automatic differentiation on numpy arrays.

Implements exactly the operator set the restoration model needs: matmul,
conv1d, nearest-neighbor upsampling, activations, softmax, elementwise
arithmetic, log/exp/softplus, concat/slice/transpose/reshape and the
sum/mean reductions.  Gradients are computed by walking the implicit
graph (parent links on each Tensor) in reverse topological order.

All data is float64: gradient checks at eps ~1e-5 are meaningless at
float32 resolution.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes violate an operation's shape contract."""


class ContractError(ValueError):
    """A precondition other than a shape constraint was violated."""


class NumericError(ArithmeticError):
    """NaN or Inf appeared where the contract requires finite values."""


_grad_enabled = True

# Test hook: when set, conv1d's input gradient is scaled by a wrong factor.
# Used only by the gradcheck CLI's negative control.
_conv_backward_fault = False


def set_conv_backward_fault(enabled: bool) -> None:
    global _conv_backward_fault
    _conv_backward_fault = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure forward compute)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the links needed for reverse-mode differentiation.

    ``grad`` is populated by :func:`backward` for tensors with
    ``requires_grad=True``; it always matches ``data`` in shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self, params: Optional[Iterable["Tensor"]] = None) -> None:
        backward(self, params)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(parents: Sequence[Tensor]) -> bool:
    return _grad_enabled and any(p.requires_grad or p._parents for p in parents)


def _node(out_data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data if out_data.dtype == DTYPE else out_data.astype(DTYPE)
    out.grad = None
    if _tracked(parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over the axes numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _node(out, (a, b), vjp)


# -- transcendental / activations -----------------------------------------


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _node(out, (a,), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _node(out, (a,), vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    z[~pos] = e / (1.0 + e)
    return z


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def vjp(g):
        return (g * _sigmoid(a.data),)

    return _node(out, (a,), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _node(out, (a,), vjp)


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data >= 0, a.data, alpha * a.data)

    def vjp(g):
        return (g * np.where(a.data >= 0, 1.0, alpha),)

    return _node(out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not (-a.data.ndim <= axis < a.data.ndim):
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), vjp)


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dims differ: {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.data.shape}")
    out = np.ascontiguousarray(a.data.T)

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return _node(out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _node(out, (a,), vjp)


def linear(w, x, b=None) -> Tensor:
    """w @ x (+ b), the two-dimensional fully connected map."""
    y = matmul(w, x)
    return y if b is None else add(y, b)


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention softmax(q kᵀ / sqrt(d_k)) v.

    Rows of the result are convex combinations of the rows of v.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError("attention expects 2-D q, k, v")
    if q.data.shape[1] != k.data.shape[1]:
        raise DimensionError(
            f"q and k feature widths differ: {q.data.shape} vs {k.data.shape}"
        )
    if k.data.shape[0] != v.data.shape[0]:
        raise DimensionError(
            f"k and v row counts differ: {k.data.shape} vs {v.data.shape}"
        )
    d_k = q.data.shape[1]
    scores = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(d_k))
    return matmul(softmax(scores, axis=-1), v)


# -- structural ops --------------------------------------------------------


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(out, ts, vjp)


def narrow(a, key) -> Tensor:
    """Basic slicing; the gradient scatters back into a zero buffer."""
    a = as_tensor(a)
    out = np.ascontiguousarray(a.data[key])

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[key] = g.reshape(buf[key].shape)
        return (buf,)

    return _node(out, (a,), vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _node(out, (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.data.shape).copy(),)

    return _node(out, (a,), vjp)


# -- convolution and upsampling -------------------------------------------


def conv1d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[C_in, L] with w[C_out, C_in, K].

    Output length is floor((L + 2*padding - K) / stride) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise DimensionError(
            f"conv1d expects x[C_in, L] and w[C_out, C_in, K], got "
            f"{x.data.shape} and {w.data.shape}"
        )
    c_in, length = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in_w != c_in:
        raise DimensionError(f"kernel expects {c_in_w} channels, input has {c_in}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    l_out = (length + 2 * padding - k) // stride + 1
    if length + 2 * padding < k or l_out <= 0:
        raise DimensionError(
            f"conv1d output length would be non-positive "
            f"(L={length}, padding={padding}, K={k}, stride={stride})"
        )

    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    # (C_in, L_out, K) windows -> (C_in*K, L_out) column matrix
    win = sliding_window_view(xp, k, axis=1)[:, ::stride, :]
    col = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(c_in * k, l_out)
    w2 = w.data.reshape(c_out, c_in * k)
    out = w2 @ col

    def vjp(g):
        dw = (g @ col.T).reshape(c_out, c_in, k)
        dcol = (w2.T @ g).reshape(c_in, k, l_out)
        dxp = np.zeros_like(xp)
        for t in range(k):
            dxp[:, t : t + stride * l_out : stride] += dcol[:, t, :]
        dx = dxp[:, padding : padding + length] if padding else dxp
        if _conv_backward_fault:
            dx = dx * 1.01
        return np.ascontiguousarray(dx), dw

    return _node(out, (x, w), vjp)


def upsample_nearest(x, factor: int) -> Tensor:
    """Repeat each position of x[C, L] `factor` times along the length axis."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"upsample expects x[C, L], got {x.data.shape}")
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    c, length = x.data.shape
    out = np.repeat(x.data, factor, axis=1)

    def vjp(g):
        return (g.reshape(c, length, factor).sum(axis=2),)

    return _node(out, (x,), vjp)


# -- backward pass ---------------------------------------------------------


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Populate .grad on every requires_grad leaf reachable from `loss`.

    Leaves listed in `params` that the graph never reached get a zero
    gradient buffer. Gradients accumulate into existing .grad buffers.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    # reverse topological order via iterative postorder DFS
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not (parent.requires_grad or parent._parents):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error at each coordinate is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    x.zero_grad()
    out = f(x)
    backward(out, [x])
    analytic = x.grad.copy()
    if not np.all(np.isfinite(analytic)):
        raise NumericError("analytic gradient contains NaN/Inf")

    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(x).item()
            flat[i] = orig - eps
            f_minus = f(x).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite central difference at index {i}")
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
