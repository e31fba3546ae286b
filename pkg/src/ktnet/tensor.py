#!/usr/bin/env python3
"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every forward operation returns a new ``Tensor``. When gradients are enabled
and at least one input requires a gradient, the result records its inputs and
a backward rule; ``backward`` replays those rules in reverse topological
order and accumulates gradients into the leaf tensors.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GradientError, NonFiniteError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """
    A float64 array plus an optional node in the differentiation graph.

    Leaf tensors are created by the caller; non-leaf tensors are only created
    by the operations in this package and carry ``_parents`` and ``_backward``.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardRule] = None
        self._op = ""

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def _result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardRule,
    op: str,
) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data, dtype=np.float64)
    out.grad = None
    out._op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


def parameter(data: ArrayLike) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """
    Recorded graph below a root tensor, in topological order.

    ``nodes`` lists every non-leaf tensor reachable from the root with its
    inputs before it. ``visits`` counts how many backward rules ran during the
    last ``backward`` call.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = []
        self.leaves: List[Tensor] = []
        self.visits = 0
        self._build()

    def _build(self) -> None:
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self.root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                if node.is_leaf:
                    self.leaves.append(node)
                else:
                    self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

    def backward(self) -> None:
        self.visits = 0
        grads = {id(self.root): np.ones_like(self.root.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            self.visits += 1
            assert node._backward is not None
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise GradientError(
                        f"{node._op} returned gradient of shape {pg.shape} "
                        f"for input of shape {parent.shape}"
                    )
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            if g is None:
                continue
            if leaf.grad is None:
                leaf.grad = np.array(g, dtype=np.float64)
            else:
                leaf.grad = leaf.grad + g


def backward(loss: Tensor) -> Tape:
    """
    Populate ``grad`` on every leaf that ``loss`` depends on.

    Gradients accumulate across calls until the leaves are reset.

    Args:
        loss: Single-element tensor

    Returns:
        The tape that was replayed
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor requiring grad")
    tape = Tape(loss)
    tape.backward()
    return tape


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# Pointwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _result(
        a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul"
    )


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "sub":
        return sub(a, b)
    raise ValueError(f"unknown elementwise kind: {kind}")


def scale(x: Tensor, factor: float) -> Tensor:
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def shift(x: Tensor, offset: float) -> Tensor:
    return _result(x.data + offset, (x,), lambda g: (g,), "shift")


def add_n(parts: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors."""
    if not parts:
        raise ShapeError("add_n needs at least one tensor")
    for p in parts[1:]:
        _same_shape(parts[0], p, "add_n")
    total = np.sum([p.data for p in parts], axis=0)
    return _result(total, tuple(parts), lambda g: tuple(g for _ in parts), "add_n")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def rule(g: np.ndarray):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), rule, "matmul")


# Shape manipulation


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``x`` to ``shape``; the gradient is summed back."""
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {x.shape} to {shape}") from None
    lead = len(shape) - x.ndim

    def rule(g: np.ndarray):
        out = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and out.shape[i] != 1)
        if axes:
            out = out.sum(axis=axes, keepdims=True)
        return (out,)

    return _result(data, (x,), rule, "expand")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _result(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(
        x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose"
    )


def take(x: Tensor, key) -> Tensor:
    """
    Index ``x`` with any numpy key (slices, integer arrays, tuples of both).

    Repeated indices are allowed; their gradients add up.
    """
    try:
        data = x.data[key]
    except IndexError as e:
        raise ShapeError(f"take: {e}") from None

    def rule(g: np.ndarray):
        out = np.zeros_like(x.data)
        np.add.at(out, key, g)
        return (out,)

    return _result(np.array(data), (x,), rule, "take")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    ndim = parts[0].ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat: axis {axis} out of range for {ndim}-d tensors")
    axis = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat: shapes {parts[0].shape} and {p.shape} disagree off axis {axis}"
            )
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    data = np.concatenate([p.data for p in parts], axis=axis)
    return _result(data, tuple(parts), rule, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> List[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        key = [slice(None)] * x.ndim
        key[axis] = slice(start, start + n)
        out.append(take(x, tuple(key)))
        start += n
    return out


# Reductions


def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def rule(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(data), (x,), rule, "reduce_sum")


def reduce_mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    axis = _check_axis(x, axis, "softmax")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)

    def rule(g: np.ndarray):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p, (x,), rule, "softmax")


def log_softmax(x: Tensor, axis: int = 0) -> Tensor:
    axis = _check_axis(x, axis, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def rule(g: np.ndarray):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), rule, "log_softmax")


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NonFiniteError("sqrt of a negative value")
    r = np.sqrt(x.data)
    safe = np.where(r > 0, r, np.inf)
    return _result(r, (x,), lambda g: (g * 0.5 / safe,), "sqrt")


def reciprocal(x: Tensor) -> Tensor:
    if np.any(x.data == 0):
        raise NonFiniteError("reciprocal of zero")
    r = 1.0 / x.data
    return _result(r, (x,), lambda g: (-g * r * r,), "reciprocal")


def activation(x: Tensor, kind: str, slope: float = 0.2, axis: int = 0) -> Tensor:
    """
    Apply a named activation.

    Args:
        x: Input tensor
        kind: One of relu, leaky_relu, sigmoid, softmax
        slope: Negative slope for leaky_relu
        axis: Normalization axis for softmax

    Returns:
        Activated tensor
    """
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x, axis)
    raise ValueError(f"unknown activation: {kind}")
