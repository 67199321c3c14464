"""Reverse-mode autodiff over numpy arrays.

Leaves hold network parameters and constants; the ops in
:mod:`gsanim.nnet.ops` build a DAG of Tensor nodes whose backward closures
scatter gradients to their parents. ``backward()`` runs one topological
sweep, accumulating into ``.grad`` (zeroed by the optimizer, not here).

Training runs in float32. Tests that compare against finite differences
flip the whole stack to float64 with :func:`set_default_dtype` before any
parameter is created; everything downstream inherits that dtype.
"""

import numpy as np

from ..errors import InvariantError

_default_dtype = np.float32


def set_default_dtype(dtype):
    global _default_dtype
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise InvariantError("default dtype must be float32 or float64")
    _default_dtype = dt


def default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.ascontiguousarray(data, dtype=_default_dtype)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data.copy())

    def accumulate(self, grad):
        """Add an incoming gradient; no-op on non-differentiable nodes."""
        if self.requires_grad:
            self.grad += grad

    def backward(self, grad=None):
        if not self.requires_grad:
            raise InvariantError("backward() on a node that requires no gradient")
        if grad is None:
            if self.data.size != 1:
                raise InvariantError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        self.grad += np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)
        for node in reversed(_toposort(self)):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # arithmetic sugar; the ops module owns the actual derivatives
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


def _toposort(root):
    """Post-order over the subgraph that can influence root's gradient."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
