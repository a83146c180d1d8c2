"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Creation order on the tape is a valid
topological order, so the backward sweep simply walks the records in reverse.
Outside a tape every operation is a plain numpy computation.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .. import kernels
from ..errors import NonScalarLoss, ShapeMismatch

_DEFAULT_DTYPE = [np.float32]
_TAPES: list["Tape"] = []


def default_dtype():
    return _DEFAULT_DTYPE[-1]


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors (e.g. float64 for gradient checks)."""
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype})"

    # operator sugar
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
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Tape:
    """Ordered record of primitive operations for one reverse sweep."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads

    def gradient(self, loss: Tensor, params) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` w.r.t. named parameters; zeros for unused ones."""
        grads = self.backward(loss)
        items = params.items() if hasattr(params, "items") else params
        out = {}
        for name, p in items:
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False)
        return out


def _record(out_data, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs and bool(_TAPES), dtype=out_data.dtype)
    if out.requires_grad:
        _TAPES[-1].records.append((out, tuple(inputs), fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _dtype_of(*ts):
    return np.result_type(*(t.data.dtype for t in ts))


# ---------------------------------------------------------------------------
# elementwise / linear algebra
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = a.data.dtype.type(b)
        return _record(a.data * s, (a,), lambda g: (g * s,))
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 2:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), (b.shape[1],))
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul needs operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record(np.matmul(ad, bd), (a, b), back)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)
    return _record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def expand(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, old),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _record(data, xs, lambda g: tuple(np.split(g, splits, axis=axis)))


def take(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _record(np.asarray(x.data[idx]), (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def silu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    s = 1.0 / (1.0 + np.exp(-xd))
    return _record(xd * s, (x,), lambda g: (g * (s * (1.0 + xd * (1.0 - s))),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _record(y, (x,), lambda g: (g * y,))


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. Entries where ``mask`` is False get weight 0."""
    x = as_tensor(x)
    if mask is None:
        mask = np.ones(x.shape[-1:], dtype=bool)
    y = kernels.masked_softmax(x.data, np.asarray(mask, dtype=bool))
    return _record(y, (x,), lambda g: (kernels.softmax_backward(y, g),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None (eval) or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    x = as_tensor(x)
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
    return _record(x.data * keep, (x,), lambda g: (g * keep,))


def mse(pred: Tensor, target) -> Tensor:
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ShapeMismatch(f"mse: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size
    return _record(
        np.asarray(np.mean(diff * diff), dtype=pred.data.dtype),
        (pred,),
        lambda g: (g * (2.0 / n) * diff,),
    )


def forward_backward(fn: Callable[[], Tensor], params) -> tuple[Tensor, dict[str, np.ndarray]]:
    """Run ``fn`` under a fresh tape; return the scalar loss and named gradients."""
    with Tape() as tape:
        loss = fn()
    return loss, tape.gradient(loss, params)


def stack_rows(xs: Iterable[Tensor]) -> Tensor:
    xs = [reshape(as_tensor(x), (1,) + as_tensor(x).shape) for x in xs]
    return concat(xs, axis=0)
