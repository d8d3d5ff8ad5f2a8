"""Dense tensor with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations are :class:`Function`
subclasses; calling ``Function.apply`` runs the forward pass on raw arrays and
records the function as the creator of the output so that :meth:`Tensor.backward`
can walk the graph in reverse topological order.
"""

from __future__ import annotations

from typing import Any, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class Function:
    """Base class for differentiable operations.

    ``forward`` receives the ``.data`` arrays of the input tensors and returns
    the output array. ``backward`` receives the gradient w.r.t. the output and
    returns one gradient array (or ``None``) per input, in input order.
    """

    def __init__(self, *tensors: "Tensor"):
        self.inputs = tensors

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        out = Tensor(out_data, requires_grad=requires_grad)
        if requires_grad:
            out._creator = func
        return out


def _as_array(data: Any, dtype: Any) -> np.ndarray:
    if dtype is not None:
        return np.array(data, dtype=dtype)
    if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
        return np.asarray(data)
    return np.array(data, dtype=np.float32)


class Tensor:
    """N-dimensional array that records the operations producing it.

    Non-float inputs and python sequences become 32-bit floats; float64 numpy
    arrays are kept as-is, which is how the 64-bit mode is selected.
    """

    __array_priority__ = 1000

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._creator: Optional[Function] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable tensor
        with ``requires_grad``."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            func = node._creator
            if func is None:
                continue
            in_grads = func.backward(g)
            for inp, ig in zip(func.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise ShapeError(
                        f"{type(func).__name__} produced gradient of shape {ig.shape} "
                        f"for input of shape {inp.shape}"
                    )
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig

    # operator sugar; the functional module holds the implementations
    def __add__(self, other: Any) -> "Tensor":
        from . import functional as F

        return F.add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Tensor":
        from . import functional as F

        return F.sub(self, _lift(other, self))

    def __rsub__(self, other: Any) -> "Tensor":
        from . import functional as F

        return F.sub(_lift(other, self), self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import functional as F

        if np.isscalar(other):
            return F.affine(self, float(other), 0.0)
        return F.hadamard(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from . import functional as F

        return F.affine(self, -1.0, 0.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import functional as F

        return F.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def mean(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        from . import functional as F

        return F.reduce_mean(self, axes)

    def sum(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        from . import functional as F

        return F.reduce_sum(self, axes)


def _lift(value: Any, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _topological_order(root: Tensor) -> list:
    """Post-order DFS over creators; iterative so deep nets do not hit the
    recursion limit."""
    order: list = []
    visited: set = set()
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
        if node._creator is not None:
            for inp in node._creator.inputs:
                if inp.requires_grad and id(inp) not in visited:
                    stack.append((inp, False))
    return order
