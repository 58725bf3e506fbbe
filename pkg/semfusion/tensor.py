"""
Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every op whose inputs require grad records its parents and a backward
closure on the output node. ``backward(loss)`` walks those records in reverse
topological order, writes d(loss)/d(leaf) into each leaf's ``grad`` and then
consumes the tape. Tensors without tape attachments are plain values.
"""

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from semfusion.errors import DimensionError

Operand = Union["Tensor", np.ndarray, float, int]

_SIGMOID_LOW = np.finfo(np.float64).tiny
_SIGMOID_HIGH = np.nextafter(1.0, 0.0)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 array with an optional gradient tape node."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = ""
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # --- construction helpers ---

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    # --- basic properties ---

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # --- elementwise arithmetic ---

    def __add__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)

        def backward(g):
            _accumulate(self, g)
            _accumulate(other, g)

        return Tensor._result(self.data + other.data, (self, other), backward, "add")

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)

        def backward(g):
            _accumulate(self, g)
            _accumulate(other, -g)

        return Tensor._result(self.data - other.data, (self, other), backward, "sub")

    def __rsub__(self, other: Operand) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)

        def backward(g):
            _accumulate(self, g * other.data)
            _accumulate(other, g * self.data)

        return Tensor._result(self.data * other.data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)

        def backward(g):
            _accumulate(self, g / other.data)
            _accumulate(other, -g * self.data / (other.data * other.data))

        return Tensor._result(self.data / other.data, (self, other), backward, "div")

    def __rtruediv__(self, other: Operand) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        def backward(g):
            _accumulate(self, -g)

        return Tensor._result(-self.data, (self,), backward, "neg")

    def __pow__(self, exponent: float) -> "Tensor":
        exponent = float(exponent)

        def backward(g):
            _accumulate(self, g * exponent * self.data ** (exponent - 1.0))

        return Tensor._result(self.data ** exponent, (self,), backward, "pow")

    def __matmul__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {self.shape} by {other.shape}")

        def backward(g):
            _accumulate(self, g @ other.data.T)
            _accumulate(other, self.data.T @ g)

        return Tensor._result(self.data @ other.data, (self, other), backward, "matmul")

    # --- reductions and shape ops ---

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(g, shape))

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape

        def backward(g):
            _accumulate(self, g.reshape(original))

        return Tensor._result(self.data.reshape(shape), (self,), backward, "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))

        def backward(g):
            _accumulate(self, g.transpose(inverse))

        return Tensor._result(self.data.transpose(axes), (self,), backward, "transpose")

    def broadcast_to(self, shape) -> "Tensor":
        def backward(g):
            _accumulate(self, g)

        return Tensor._result(np.broadcast_to(self.data, shape).copy(), (self,), backward, "broadcast")

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            _accumulate(self, full)

        return Tensor._result(self.data[index], (self,), backward, "index")

    # --- nonlinearities ---

    def exp(self) -> "Tensor":
        value = np.exp(self.data)

        def backward(g):
            _accumulate(self, g * value)

        return Tensor._result(value, (self,), backward, "exp")

    def log(self) -> "Tensor":
        def backward(g):
            _accumulate(self, g / self.data)

        return Tensor._result(np.log(self.data), (self,), backward, "log")

    def relu(self) -> "Tensor":
        def backward(g):
            _accumulate(self, g * (self.data > 0))

        return Tensor._result(np.maximum(self.data, 0.0), (self,), backward, "relu")

    def sigmoid(self) -> "Tensor":
        value = np.clip(expit(self.data), _SIGMOID_LOW, _SIGMOID_HIGH)

        def backward(g):
            _accumulate(self, g * value * (1.0 - value))

        return Tensor._result(value, (self,), backward, "sigmoid")


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if not node.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad, dtype=np.float64), node.shape)
    node.grad = np.array(grad) if node.grad is None else node.grad + grad


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            _accumulate(t, piece)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._result(data, tensors, backward, "concat")


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on, then consume the tape."""
    if loss.size != 1:
        raise DimensionError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node.grad = None
            node._parents = ()
            node._backward = None
            node.requires_grad = False
