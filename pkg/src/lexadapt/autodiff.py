"""Reverse-mode automatic differentiation over dense float64 tensors.

Tensors double as nodes of the computation graph: each operation returns a
new tensor that remembers its inputs and a closure pushing the output
gradient back to them. The graph is a tape rebuilt per step; nothing is
retained between batches. Every forward value is checked for NaN/Inf at
creation so numerical blow-ups abort the step with a diagnostic instead of
propagating silently.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    NumericError,
)

Array = np.ndarray


def _require_finite(values: Array, op: str) -> None:
    if not np.all(np.isfinite(values)):
        kind = "NaN" if np.any(np.isnan(values)) else "Inf"
        raise NumericError(f"{op} produced {kind}; aborting the step")


class Tensor:
    """Dense float64 array participating in the active computation graph."""

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        _require_finite(arr, op)
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.op = op
        self._parents = parents
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> dict["Tensor", Array]:
        return backward(self)

    # arithmetic sugar; constants are lifted to leaf tensors
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return subtract(self, as_tensor(other))

    def __rsub__(self, other):
        return subtract(as_tensor(other), self)

    def __mul__(self, other):
        return multiply(self, as_tensor(other))

    def __rmul__(self, other):
        return multiply(as_tensor(other), self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS: unrolled RNN chains exceed the interpreter recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, Array]:
    """Run reverse accumulation from a scalar loss.

    Gradients of every node reachable from the loss are reset before the
    sweep, so repeated calls over the same graph are idempotent. Returns the
    gradient map (node -> gradient array); nodes not in the map were never
    touched by this loss and their gradients are zero.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()
    return {node: node.grad for node in order}


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _binary(op: str, a: Tensor, b: Tensor, values: Array, da, db) -> Tensor:
    out = Tensor(values, parents=(a, b), op=op)

    def _bk():
        a.grad += _unbroadcast(da(out.grad), a.shape)
        b.grad += _unbroadcast(db(out.grad), b.shape)

    out._backward = _bk
    return out


def _check_broadcastable(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not align") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable("add", a, b)
    return _binary("add", a, b, a.data + b.data, lambda g: g, lambda g: g)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable("sub", a, b)
    return _binary("sub", a, b, a.data - b.data, lambda g: g, lambda g: -g)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable("mul", a, b)
    return _binary("mul", a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def negate(x: Tensor) -> Tensor:
    out = Tensor(-x.data, parents=(x,), op="neg")

    def _bk():
        x.grad += -out.grad

    out._backward = _bk
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands (vectors act as row/column)."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b), op="matmul")

    def _bk():
        g = out.grad
        a2 = a.data.reshape(1, -1) if a.ndim == 1 else a.data
        b2 = b.data.reshape(-1, 1) if b.ndim == 1 else b.data
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        a.grad += (g2 @ b2.T).reshape(a.shape)
        b.grad += (a2.T @ g2).reshape(b.shape)

    out._backward = _bk
    return out


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    out = Tensor(x.data.T, parents=(x,), op="transpose")

    def _bk():
        x.grad += out.grad.T

    out._backward = _bk
    return out


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    out = Tensor(x.data.reshape(shape), parents=(x,), op="reshape")

    def _bk():
        x.grad += out.grad.reshape(x.shape)

    out._backward = _bk
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; the adjoint scatters back into place."""
    if not 0 <= axis < x.ndim:
        raise ContractError(f"narrow axis {axis} out of range for shape {x.shape}")
    if start < 0 or length < 1 or start + length > x.shape[axis]:
        raise ContractError(
            f"narrow [{start}:{start + length}) exceeds axis {axis} of shape {x.shape}"
        )
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(x.data[index], parents=(x,), op="narrow")

    def _bk():
        x.grad[index] += out.grad

    out._backward = _bk
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty sequence")
    parts = list(tensors)
    try:
        values = np.concatenate([t.data for t in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    out = Tensor(values, parents=tuple(parts), op="concat")
    sizes = [t.shape[axis] for t in parts]

    def _bk():
        offset = 0
        for t, size in zip(parts, sizes):
            index = [slice(None)] * out.ndim
            index[axis] = slice(offset, offset + size)
            t.grad += out.grad[tuple(index)]
            offset += size

    out._backward = _bk
    return out


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup into a 2-D table; gradients scatter-add into gathered rows."""
    from .errors import VocabularyError

    if table.ndim != 2:
        raise DimensionError(f"gather_rows expects a matrix table, got shape {table.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractError("gather_rows expects a flat index sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise VocabularyError(
            f"index out of range: table has {table.shape[0]} rows, got {idx.tolist()}"
        )
    out = Tensor(table.data[idx], parents=(table,), op="gather_rows")

    def _bk():
        np.add.at(table.grad, idx, out.grad)

    out._backward = _bk
    return out


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), parents=(x,), op="sum")

    def _bk():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.grad += np.broadcast_to(g, x.shape)

    out._backward = _bk
    return out


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims), parents=(x,), op="mean")

    def _bk():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.grad += np.broadcast_to(g, x.shape) / count

    out._backward = _bk
    return out


def exp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data), parents=(x,), op="exp")

    def _bk():
        x.grad += out.grad * out.data

    out._backward = _bk
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    out = Tensor(np.log(x.data), parents=(x,), op="log")

    def _bk():
        x.grad += out.grad / x.data

    out._backward = _bk
    return out


def sigmoid(x: Tensor) -> Tensor:
    # Two-branch form avoids overflow for large |x|.
    v = x.data
    values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Tensor(values, parents=(x,), op="sigmoid")

    def _bk():
        x.grad += out.grad * out.data * (1.0 - out.data)

    out._backward = _bk
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data), parents=(x,), op="tanh")

    def _bk():
        x.grad += out.grad * (1.0 - out.data * out.data)

    out._backward = _bk
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,), op="relu")

    def _bk():
        x.grad += out.grad * (x.data > 0.0)

    out._backward = _bk
    return out


def power(x: Tensor, exponent: float) -> Tensor:
    """x ** exponent for a constant exponent (integer exponents >= 1)."""
    if exponent < 1 or exponent != int(exponent):
        raise ContractError(f"power supports integer exponents >= 1, got {exponent}")
    out = Tensor(x.data ** exponent, parents=(x,), op="power")

    def _bk():
        x.grad += out.grad * exponent * x.data ** (exponent - 1)

    out._backward = _bk
    return out


def absolute(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data), parents=(x,), op="abs")

    def _bk():
        x.grad += out.grad * np.sign(x.data)

    out._backward = _bk
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax; rows along the axis sum to one."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(values, parents=(x,), op="softmax")

    def _bk():
        g = out.grad
        dot = (g * out.data).sum(axis=axis, keepdims=True)
        x.grad += out.data * (g - dot)

    out._backward = _bk
    return out


def masked_softmax(x: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to positions where ``mask`` is True.

    Masked positions get probability exactly 0; every row must keep at least
    one position. The mask is a plain boolean array (no gradient).
    """
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not keep.any(axis=axis).all():
        raise ContractError("masked_softmax: a row has no unmasked positions")
    neg = np.where(keep, x.data, -np.inf)
    shifted = x.data - neg.max(axis=axis, keepdims=True)
    e = np.exp(shifted) * keep
    values = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(values, parents=(x,), op="masked_softmax")

    def _bk():
        g = out.grad
        dot = (g * out.data).sum(axis=axis, keepdims=True)
        x.grad += out.data * (g - dot)

    out._backward = _bk
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse, parents=(x,), op="log_softmax")

    def _bk():
        g = out.grad
        x.grad += g - np.exp(out.data) * g.sum(axis=axis, keepdims=True)

    out._backward = _bk
    return out


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine part)."""
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    values = (x.data - mean) * inv
    out = Tensor(values, parents=(x,), op="layer_norm")

    def _bk():
        g = out.grad
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out.data).mean(axis=-1, keepdims=True)
        x.grad += inv * (g - gm - out.data * gy)

    out._backward = _bk
    return out


def grad_reverse(x: Tensor, scale: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by -scale.

    The reversal strength equals the adversarial coefficient in force for the
    current epoch, so upstream feature extractors are pushed to maximize the
    discriminator loss while the discriminator itself trains normally.
    """
    if scale < 0:
        raise ConfigError(f"grad_reverse scale must be >= 0, got {scale} (would un-reverse)")
    out = Tensor(x.data, parents=(x,), op="grad_reverse")

    def _bk():
        x.grad += -scale * out.grad

    out._backward = _bk
    return out


_UNARY_OPS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "exp": exp, "log": log}
_BINARY_OPS = {"add": add, "mul": multiply, "sub": subtract}


def elementwise(tag: str, *operands: Tensor) -> Tensor:
    """Dispatch a pointwise operation by name.

    Binary tags require operands of identical shape; broadcasting is the
    business of the direct operators, not of this strict surface.
    """
    if tag in _UNARY_OPS:
        if len(operands) != 1:
            raise ContractError(f"elementwise {tag!r} takes exactly one operand")
        return _UNARY_OPS[tag](operands[0])
    if tag in _BINARY_OPS:
        if len(operands) != 2:
            raise ContractError(f"elementwise {tag!r} takes exactly two operands")
        a, b = operands
        if a.shape != b.shape:
            raise DimensionError(f"elementwise {tag!r}: shapes {a.shape} != {b.shape}")
        return _BINARY_OPS[tag](a, b)
    known = sorted(_UNARY_OPS) + sorted(_BINARY_OPS)
    raise ConfigError(f"unknown elementwise op {tag!r}; known: {known}")


def global_norm(gradients: Iterable[Array]) -> float:
    total = 0.0
    for g in gradients:
        total += float(np.sum(g * g))
    return math.sqrt(total)
