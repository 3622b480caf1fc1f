"""Dense tensors with tape-recorded reverse-mode differentiation.

Every op appends one record (op kind, inputs, backward closure) to the graph
of its output.  Records carry a global sequence number, so sorting the nodes
reachable from a loss by that number recovers the append order of the tape,
and ``backward`` walks it strictly in reverse.

Broadcasting is deliberately narrow: binary ops accept equal shapes, a
0-d operand, or a 1-d operand matching the trailing axis of the other.
Anything else raises ``ShapeError``.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_SEQ = itertools.count()
_STATE = threading.local()

L2_EPS = 1e-12


def is_grad_enabled() -> bool:
    return getattr(_STATE, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _STATE.enabled = False
    try:
        yield
    finally:
        _STATE.enabled = prev


class Node:
    """One op record on the tape."""

    __slots__ = ("op", "inputs", "backward", "seq", "key")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.seq = next(_SEQ)
        self.key = None

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
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

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar ------------------------------------------------
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, data: np.ndarray, inputs: tuple, grad_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite values in output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        node = Node(op, inputs, grad_fn)
        node.key = id(out)
        out._node = node
    return out


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------

def graph(output: Tensor) -> list[Node]:
    """Nodes reachable from ``output`` in append (tape) order."""
    seen: dict[int, Node] = {}
    stack = [output]
    while stack:
        t = stack.pop()
        node = t._node
        if node is None or node.seq in seen:
            continue
        seen[node.seq] = node
        stack.extend(node.inputs)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph(loss)):
        g = grads.pop(node.key, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            gi = np.asarray(gi, dtype=t.data.dtype).reshape(t.shape)
            if t._node is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                k = id(t)
                grads[k] = gi if k not in grads else grads[k] + gi


# ---------------------------------------------------------------------------
# binary elementwise ops
# ---------------------------------------------------------------------------

def _check_binary(op: str, sa: tuple, sb: tuple) -> None:
    if sa == sb or sa == () or sb == ():
        return
    if len(sb) == 1 and len(sa) >= 1 and sa[-1] == sb[0]:
        return
    if len(sa) == 1 and len(sb) >= 1 and sb[-1] == sa[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a.shape, b.shape)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a.shape, b.shape)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a.shape, b.shape)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("div", a.shape, b.shape)
    out = a.data / b.data
    return _result("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result("scale", a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _result("matmul", a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# unary elementwise ops
# ---------------------------------------------------------------------------

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_np(x.data)
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0).astype(x.dtype), (x,),
                   lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v ** 3)
    th = np.tanh(inner)
    out = 0.5 * v * (1.0 + th)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th ** 2) * d_inner),)

    return _result("gelu", out, (x,), grad_fn)


def relu_or_gelu(x: Tensor, kind: str = "relu") -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ContractError(f"unknown activation {kind!r}")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError below
        y = np.exp(x.data)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")
    return _result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _result("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("softmax", y, (x,), grad_fn)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def grad_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _result("layer_norm", xhat, (x,), grad_fn)


def l2_normalize(x: Tensor, eps: float = L2_EPS) -> Tensor:
    """Divide each last-axis vector by max(||x||, eps)."""
    norm = np.sqrt((x.data ** 2).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    active = norm > eps

    def grad_fn(g):
        radial = np.where(active, y * (g * y).sum(axis=-1, keepdims=True), 0.0)
        return ((g - radial) / denom,)

    return _result("l2_normalize", y, (x,), grad_fn)


# ---------------------------------------------------------------------------
# shape ops and reductions
# ---------------------------------------------------------------------------

def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _result("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes)

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape),)

    return _result("reduce_sum", np.asarray(out), (x,), grad_fn)


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise ContractError("reduce_mean over an empty axis")
    out = x.data.mean(axis=axes)

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape) / n,)

    return _result("reduce_mean", np.asarray(out), (x,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ContractError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from exc
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x: Tensor, key) -> Tensor:
    if isinstance(key, Tensor):
        raise ContractError("index with numpy arrays or ints, not Tensors")
    out = x.data[key]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _result("getitem", np.array(out), (x,), grad_fn)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, (1,) + t.shape) for t in tensors], axis=0)


def dot_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner products of two equal-shape matrices."""
    return reduce_sum(mul(a, b), axis=-1)
