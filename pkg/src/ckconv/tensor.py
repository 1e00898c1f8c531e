"""Dense float64 tensors with a minimal reverse-mode autodiff.

Every differentiable op builds a :class:`Node` linking its output to its
inputs. Node indices come from one global counter, so sorting the nodes
reachable from a loss by index yields a valid recording order; that sorted
list is the :class:`Tape` replayed backwards by :func:`backward`.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptyTapeError, NonFiniteError

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    __slots__ = ("index", "op", "inputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.index = next(_counter)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"Node({self.index}, {self.op})"


class Tensor:
    """A float64 array that may take part in gradient recording."""

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "grad", "name", "version", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} contains NaN or Inf".replace("  ", " "))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.version = 0
        self._node: Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, node: Node | None = None) -> "Tensor":
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = node is not None
        out.grad = None
        out.name = None
        out.version = 0
        out._node = node
        return out

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
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

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

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(arr: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op output, recording a node when any input needs gradients."""
    if _grad_enabled and any(t.requires_grad for t in inputs):
        return Tensor._wrap(arr, Node(op, tuple(inputs), backward_fn))
    return Tensor._wrap(arr)


# ---------------------------------------------------------------------------
# tape + backward
# ---------------------------------------------------------------------------

@dataclass
class Tape:
    """Recorded nodes reachable from a loss, in recording order."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        if loss._node is None:
            raise EmptyTapeError("loss is not attached to any recorded operation")
        seen = {}
        stack = [loss._node]
        while stack:
            node = stack.pop()
            if node.index in seen:
                continue
            seen[node.index] = node
            for inp in node.inputs:
                if inp._node is not None and inp._node.index not in seen:
                    stack.append(inp._node)
        return cls(sorted(seen.values(), key=lambda n: n.index))

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.from_loss(loss)
    if not tape.nodes or tape.nodes[-1] is not loss._node:
        raise EmptyTapeError("loss is not the terminal node of the tape")

    pending = {loss._node.index: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(node.index, None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.shape:
                raise ContractError(f"{node.op}: gradient shape {ig.shape} != input shape {inp.shape}")
            if inp._node is not None:
                key = inp._node.index
                pending[key] = pending[key] + ig if key in pending else ig
            else:
                inp.grad = ig.copy() if inp.grad is None else inp.grad + ig


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shapes(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    return make_result(a.data + b.data, "add", (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    return make_result(a.data - b.data, "sub", (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, "div", (a, b), bw)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return make_result(x.data * c, "scale", (x,), lambda g: (g * c,))


def sin(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.sin(x.data), "sin", (x,), lambda g: (g * np.cos(x.data),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0.0), "relu", (x,), lambda g: (g * pos,))


LEAKY_SLOPE = 0.01


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return make_result(x.data * factor, "leaky_relu", (x,), lambda g: (g * factor,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_result(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def swish(x) -> Tensor:
    """x * sigmoid(x) (beta = 1)."""
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_result(x.data * s, "swish", (x,),
                       lambda g: (g * (s + x.data * s * (1.0 - s)),))


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), "sum", (x,), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), "transpose", (x,),
                       lambda g: (np.transpose(g, inverse),))


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    fancy = _is_fancy(index)

    def bw(g):
        z = np.zeros_like(x.data)
        if fancy:
            np.add.at(z, index, g)
        else:
            z[index] = g
        return (z,)

    return make_result(np.array(x.data[index]), "getitem", (x,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, "concat", tuple(tensors), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast like ``numpy.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, "matmul", (a, b), bw)



def rowwise_linear(h, w) -> Tensor:
    """``h @ w.T`` for h (N, I), w (O, I), with each output row computed independently of N.

    BLAS picks different blockings for different row counts, so the same input
    row can round differently depending on what else is in the batch. This
    route keeps a fixed accumulation order per row, which makes kernel samples
    on a sub-grid bitwise equal to the matching samples of the full grid.
    """
    h, w = as_tensor(h), as_tensor(w)
    if h.ndim != 2 or w.ndim != 2 or h.shape[1] != w.shape[1]:
        raise DimensionError(f"rowwise_linear: incompatible shapes {h.shape} and {w.shape}")
    out = np.einsum("ni,oi->no", h.data, w.data, optimize=False)

    def bw(g):
        return (g @ w.data if h.requires_grad else None,
                g.T @ h.data if w.requires_grad else None)

    return make_result(out, "rowwise_linear", (h, w), bw)

def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum with explicit output subscripts."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        if len(set(own)) != len(own) or any(c not in out_sub and c not in other for c in own):
            raise ContractError(f"einsum '{subscripts}' is not supported by the backward rule")
    try:
        out = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise DimensionError(f"einsum '{subscripts}': {exc}") from None

    def bw(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_result(np.asarray(out), "einsum", (a, b), bw)
