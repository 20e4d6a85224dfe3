#!/usr/bin/env python3

"""
Module: autodiff.py

  Dense float64 tensors with reverse-mode automatic differentiation.

  Every operation returns a new Tensor holding its parents and a closure
  mapping the upstream gradient to one gradient per parent. Node ids come
  from a process-wide counter, so sorting reachable nodes by id gives the
  creation (topological) order; `backward` visits them in reverse order,
  each node once.

  Primitives:
    matmul, add, sub, mul, div, neg, pow (scalar exponent), relu,
    leaky_relu, sigmoid, softmax (rows), log, clip, sum, mean, concat
    (feature axis), columns, mse, dropout, grad_reverse, transpose.

  Elementwise broadcasting is restricted to: equal shapes, scalars,
  a missing leading batch dimension, or a (n, 1) column against (n, p).
"""
import itertools
import logging
from typing import Callable, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy import special

from amean.errors import ContractError, DimensionError, DomainError


logger = logging.getLogger(__name__)

_node_ids = itertools.count()

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """A dense float64 array participating in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "node_id", "_parents", "_backward")
    # numpy defers to the reflected Tensor operators:
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = None,
                 _parents: Tuple["Tensor", ...] = (), _backward: Callable = None, _op: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = _op
        self.node_id = next(_node_ids)
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        lbl = f"{self.name!r}, " if self.name else ""
        return f"Tensor({lbl}shape={self.shape}, op={self.op or 'leaf'})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}.")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Constant copy cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    # operator sugar:
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int = None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int = None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req,
                  _parents=parents if req else (),
                  _backward=backward_fn if req else None,
                  _op=op)


# .............................................................................
# broadcasting

def _allowed(shape: Tuple[int, ...], out: Tuple[int, ...]) -> bool:
    if shape == out or int(np.prod(shape)) == 1:
        return True
    if len(out) >= 2 and shape == out[1:]:
        # leading batch dimension
        return True
    if len(shape) == len(out) == 2 and shape[0] == out[0] and shape[1] == 1:
        # keepdims column
        return True
    return False


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None
    if not (_allowed(a.shape, out) and _allowed(b.shape, out)):
        raise DimensionError(op, a.shape, b.shape)
    return out


def unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (adjoint of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# .............................................................................
# elementwise binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def _bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def _bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def _bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)

    def _bw(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data ** 2), b.shape))

    return _make(a.data / b.data, (a, b), _bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    """Elementwise a**exponent for a scalar exponent."""
    a = as_tensor(a)
    exponent = float(exponent)

    def _bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(a.data ** exponent, (a,), _bw, "pow")


# .............................................................................
# linear algebra & shape

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError("transpose", a.shape)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate 2D tensors along the feature (last) axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat needs at least one tensor.")
    for t in ts[1:]:
        if t.data.ndim != 2 or ts[0].data.ndim != 2 or t.shape[0] != ts[0].shape[0]:
            raise DimensionError("concat", ts[0].shape, t.shape)
    if axis not in (-1, 1):
        raise ContractError("concat only supports the feature axis.")
    widths = [t.shape[1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def _bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _make(np.concatenate([t.data for t in ts], axis=1), tuple(ts), _bw, "concat")


def columns(a, start: int, stop: int) -> Tensor:
    """Column slice a[:, start:stop]."""
    a = as_tensor(a)
    if a.data.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise DimensionError("columns", a.shape, (start, stop))

    def _bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), _bw, "columns")


# .............................................................................
# activations

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)

    def _bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), _bw, "sigmoid")


def softmax(a) -> Tensor:
    """Softmax over the last axis (rows of a 2D tensor)."""
    a = as_tensor(a)
    out = special.softmax(a.data, axis=-1)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), _bw, "softmax")


def log(a) -> Tensor:
    """Natural log; callers clamp probabilities first."""
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log of non-positive value (min={a.data.min()!r}); clamp probabilities first.")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the value was inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# .............................................................................
# reductions & losses

def tsum(a, axis: int = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), _bw, "sum")


def mean(a, axis: int = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    if count == 0:
        raise ContractError("mean of an empty tensor.")

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), _bw, "mean")


def mse(a, b) -> Tensor:
    """Mean squared error over all entries."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("mse", a.shape, b.shape)
    diff = a.data - b.data
    scale = 2.0 / diff.size

    def _bw(g):
        return g * scale * diff, -g * scale * diff

    return _make(np.mean(diff ** 2), (a, b), _bw, "mse")


def dropout(a, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}.")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def grad_reverse(a, scale: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -scale."""
    a = as_tensor(a)
    scale = float(scale)
    if not np.isfinite(scale):
        raise ContractError(f"grad_reverse scale must be finite, got {scale}.")
    return _make(a.data.copy(), (a,), lambda g: (-scale * g,), "grad_reverse")


# .............................................................................
# graph traversal

def _topological(root: Tensor) -> List[Tensor]:
    """Reachable nodes sorted by decreasing creation id."""
    seen: Dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in seen:
            continue
        seen[node.node_id] = node
        stack.extend(node._parents)
    return [seen[i] for i in sorted(seen, reverse=True)]


def _propagate(output: Tensor) -> Dict[int, np.ndarray]:
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}.")
    grads: Dict[int, np.ndarray] = {output.node_id: np.ones_like(output.data)}
    for node in _topological(output):
        g = grads.get(node.node_id)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    return grads


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into t.grad for every tensor reachable from loss."""
    grads = _propagate(loss)
    for node in _topological(loss):
        g = grads.get(node.node_id)
        if g is not None and node.requires_grad:
            node.grad = node.grad + g
    if not loss.requires_grad:
        loss.grad = loss.grad + 1.0

    return


def grad(output: Tensor, inputs: Iterable[Tensor]) -> List[np.ndarray]:
    """Gradients of a scalar `output` w.r.t. `inputs`, leaving every .grad untouched."""
    grads = _propagate(output)
    return [grads.get(t.node_id, np.zeros_like(t.data)).copy() for t in inputs]


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()


def parameter(data: ArrayLike, name: str = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar fn() w.r.t. the values of t."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g
