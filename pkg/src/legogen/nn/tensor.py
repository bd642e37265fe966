"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` of the
current thread when at least one input requires a gradient; outside a tape
they are plain numpy computations.
"""
from __future__ import annotations

import threading
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Records operations for one backward pass; use as a context manager."""

    def __init__(self):
        self.records: List[Tuple["Tensor", Tuple["Tensor", ...], Callable]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def reset(self):
        self.records.clear()


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    t = Tensor(out)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._tape = tape
        tape.records.append((t, tuple(parents), backward))
    return t


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring a gradient."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(loss._tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._tape is None:
                p.grad = pg.copy() if p.grad is None else p.grad + pg
            else:
                key = id(p)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# operations


def _check(cond: bool, what: str, *shapes):
    if not cond:
        raise ShapeError(f"{what}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
           "matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _record(ad @ bd, (a, b), bw)


def _broadcast_ok(a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return True
    if len(sa) != len(sb):
        return False
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(_broadcast_ok(a, b), "add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(_broadcast_ok(a, b), "sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check(_broadcast_ok(a, b), "mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _record(ad * bd, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    other = 1 - axis
    _check(all(t.data.ndim == 2 for t in tensors)
           and len({t.shape[other] for t in tensors}) == 1,
           "concat", *[t.shape for t in tensors])
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        if axis == 1:
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record(a.data[:, start:stop], (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor."""
    out = np.exp(_log_softmax(a.data))

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record(out, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    out = _log_softmax(a.data)
    p = np.exp(out)
    return _record(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def _scatter_rows(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n`` buckets; a one-hot product beats np.add.at here."""
    if values.ndim == 2 and len(index) * n <= 1 << 20:
        onehot = np.zeros((n, len(index)))
        onehot[index, np.arange(len(index))] = 1.0
        return onehot @ values
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, index, values)
    return out


def gather(a: Tensor, index) -> Tensor:
    """Rows ``a[index]``."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def bw(g):
        return (_scatter_rows(g, index, shape[0]),)

    return _record(a.data[index], (a,), bw)


def segment_sum(a: Tensor, index, num_segments: int) -> Tensor:
    """Row ``i`` of the result sums the rows of ``a`` whose ``index`` is ``i``."""
    index = np.asarray(index, dtype=np.int64)
    out = _scatter_rows(a.data, index, num_segments)
    return _record(out, (a,), lambda g: (g[index],))


def spmm(matrix, a: Tensor) -> Tensor:
    """Constant (scipy sparse or dense) matrix times tensor."""
    _check(matrix.shape[1] == a.shape[0], "spmm", matrix.shape, a.shape)
    mt = matrix.T
    return _record(np.asarray(matrix @ a.data), (a,), lambda g: (np.asarray(mt @ g),))


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape
    if axis is None:
        return _record(np.array(a.data.sum()).reshape(1, 1), (a,),
                       lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))
    out = a.data.sum(axis=axis, keepdims=True)
    return _record(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of class ``target`` under softmax of a 1xK row."""
    k = logits.data.size
    if not 0 <= target < k:
        raise IndexError(f"class index {target} out of range for {k} logits")
    row = logits.data.reshape(-1)
    logp = _log_softmax(row)
    shape = logits.shape

    def bw(g):
        d = np.exp(logp)
        d[target] -= 1.0
        return ((g.reshape(()) * d).reshape(shape),)

    return _record(np.array([[-logp[target]]]), (logits,), bw)


def bernoulli_ce(logits: Tensor, bits) -> Tensor:
    """Summed binary cross-entropy of independent sigmoid outputs."""
    t = np.asarray(bits, dtype=np.float64).reshape(logits.shape)
    if np.any((t != 0) & (t != 1)):
        raise ValueError("bernoulli targets must be 0 or 1")
    x = logits.data
    loss = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        return (g.reshape(()) * (_sigmoid(x) - t),)

    return _record(np.array([[loss.sum()]]), (logits,), bw)
