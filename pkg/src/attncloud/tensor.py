"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation records its inputs and a backward rule on the tensor it
produces; the recording order doubles as the tape. ``backward`` replays the
reachable records in reverse creation order, so each gradient contribution
is accumulated exactly once per use. Tensors are never mutated in place
after creation, which keeps the recorded rules valid.

Graphs are independent of each other: there is no global state beyond a
monotonic creation counter, so separate forward passes may run on separate
threads.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ContractError, ShapeError

_SEQ = itertools.count()


class Tensor:
    """A dense multi-dimensional array of float64 values.

    Attributes:
        data: the values, a numpy float64 array (treated as read-only).
        requires_grad: True for trainable leaves; such tensors always carry
            a same-shape ``grad`` buffer (zeros until a backward pass).
        grad: dLoss/dTensor after ``backward``; None on non-leaf tensors.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_seq", "_needs")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._vjp = None
        self._seq = next(_SEQ)
        self._needs = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def record_op(data, parents, vjp) -> Tensor:
    """Create the output tensor of an operation and record it on the tape.

    ``vjp(grad_out)`` must return one gradient array (or None) per parent.
    The record only participates in backward passes when some parent leads
    to a requires_grad leaf.
    """
    out = Tensor(data)
    if any(p._needs for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
        out._needs = True
    return out


def backward(loss: Tensor):
    """Accumulate dLoss/dLeaf into every requires_grad leaf reachable from loss.

    The loss must be a scalar. Replaying the same recorded state twice
    produces identical leaf gradients (assignment, not re-accumulation);
    unreachable leaves are left untouched.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    nodes = {id(loss): loss}
    stack = [loss]
    while stack:
        for p in stack.pop()._parents:
            if id(p) not in nodes and p._needs:
                nodes[id(p)] = p
                stack.append(p)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.reshape(node.data.shape).copy()
        if node._vjp is None:
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not p._needs:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg
            else:
                acc += pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return record_op(
        data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return record_op(
        data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return record_op(
        data, (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a._needs else None,
            _unbroadcast(g * a.data, b.shape) if b._needs else None,
        ),
    )


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return record_op(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        ga = gb = None
        if a._needs:
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        if b._needs:
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return record_op(data, (a, b), vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return record_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def affine(x, w, b, relu_after: bool = False) -> Tensor:
    """x @ w + b over 2D x, optionally ReLU-activated, as one tape record.

    Semantically identical to matmul/add/relu chained; fused to cut the
    number of full passes over large activation arrays.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} vs weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} vs weights {w.shape}")
    data = np.matmul(x.data, w.data)
    data += b.data
    mask = None
    if relu_after:
        np.maximum(data, 0.0, out=data)
        mask = data > 0.0

    def vjp(g):
        if mask is not None:
            g = g * mask
        return (
            np.matmul(g, w.data.T) if x._needs else None,
            np.matmul(x.data.T, g) if w._needs else None,
            g.sum(axis=0) if b._needs else None,
        )

    return record_op(data, (x, w, b), vjp)


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return record_op(data, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    """Permute axes (reverses all axes when axes is None)."""
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for shape {a.shape}")
    inv = tuple(int(i) for i in np.argsort(axes))
    return record_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an existing axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        )
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return record_op(data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def _check_axis(a: Tensor, axis: int) -> int:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    return axis % a.data.ndim


def reduce_max(a, axis: int) -> Tensor:
    """Maximum along one axis; gradient routes to the first (lowest-index) argmax."""
    a = as_tensor(a)
    axis = _check_axis(a, axis)
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return record_op(data, (a,), vjp)


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
        return record_op(
            np.asarray(a.data.mean()), (a,),
            lambda g: (np.broadcast_to(g / n, a.shape).copy(),),
        )
    axis = _check_axis(a, axis)
    n = a.shape[axis]
    return record_op(
        a.data.mean(axis=axis), (a,),
        lambda g: (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),),
    )


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        return record_op(
            np.asarray(a.data.sum()), (a,),
            lambda g: (np.broadcast_to(g, a.shape).copy(),),
        )
    axis = _check_axis(a, axis)
    n = a.shape[axis]
    return record_op(
        a.data.sum(axis=axis), (a,),
        lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis),),
    )


def expand(a, shape) -> Tensor:
    """Broadcast to a larger shape; gradient sums over the broadcast axes."""
    a = as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}")
    return record_op(np.ascontiguousarray(data), (a,), lambda g: (_unbroadcast(g, a.shape),))


def softmax(a, axis: int) -> Tensor:
    """Stable softmax: exp(x - max) normalized along ``axis``."""
    a = as_tensor(a)
    axis = _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return record_op(s, (a,), vjp)


def take_rows(a, idx) -> Tensor:
    """Select rows along the second-to-last axis.

    ``a`` is [n, d] with idx [k], or [b, n, d] with idx [b, k]. Duplicate
    indices are allowed; their gradients accumulate.
    """
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim == 2 and idx.ndim == 1:
        data = a.data[idx]

        def vjp(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return (ga,)

    elif a.data.ndim == 3 and idx.ndim == 2 and idx.shape[0] == a.shape[0]:
        data = np.take_along_axis(a.data, idx[:, :, None], axis=1)

        def vjp(g):
            ga = np.zeros_like(a.data)
            for i in range(a.shape[0]):
                np.add.at(ga[i], idx[i], g[i])
            return (ga,)

    else:
        raise ShapeError(f"take_rows: tensor {a.shape} with indices {idx.shape}")
    return record_op(data, (a,), vjp)
