"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Without an active tape the same
functions run as plain numpy (inference mode).

Storage is float32 by default; reductions and layer-norm statistics are
accumulated in float64. :func:`precision` switches the storage type, which
the finite-difference checks use to run the whole graph in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError

_TAPES: list["Tape"] = []
_DEFAULT_DTYPE = np.float32


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage dtype used for new tensors."""
    global _DEFAULT_DTYPE
    prev, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def default_dtype():
    return _DEFAULT_DTYPE


class _Op:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    Usable as a context manager; nested tapes shadow outer ones.
    """

    def __init__(self):
        self.ops: list[_Op] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.ops)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "nonfinite")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.nonfinite = not bool(np.isfinite(arr).all())

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_const(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def __getitem__(self, key):
        return slice_(self, key)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)


def _const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _wrap(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, name: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.nonfinite = any(t.nonfinite for t in inputs)
    if out.requires_grad and _TAPES:
        _TAPES[-1].ops.append(_Op(name, tuple(inputs), out, backward))
    return out


def _broadcast_mode(a: Tensor, b: Tensor, op: str) -> int:
    """0: same shape, 1: b is a trailing-dim operand of a, 2: the reverse."""
    if a.shape == b.shape:
        return 0
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return 1
    if a.ndim < b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return 2
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are neither equal nor trailing-compatible")


def _reduce_to(g: np.ndarray, shape: tuple, dtype) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)), dtype=np.float64).astype(dtype)


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _const(a), _const(b, a if isinstance(a, Tensor) else None)
    _broadcast_mode(a, b, "add")

    def backward(g):
        return _reduce_to(g, a.shape, a.dtype), _reduce_to(g, b.shape, b.dtype)

    return _wrap(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b, a if isinstance(a, Tensor) else None)
    _broadcast_mode(a, b, "sub")

    def backward(g):
        return _reduce_to(g, a.shape, a.dtype), _reduce_to(-g, b.shape, b.dtype)

    return _wrap(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b, a if isinstance(a, Tensor) else None)
    _broadcast_mode(a, b, "mul")

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape, a.dtype) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape, b.dtype) if b.requires_grad else None
        return ga, gb

    return _wrap(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c_ = a.dtype.type(c)

    def backward(g):
        return (g * c_,)

    return _wrap(a.data * c_, (a,), backward, "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _wrap(np.maximum(a.data, a.dtype.type(0)), (a,), backward, "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1 - out * out),)

    return _wrap(out, (a,), backward, "tanh")


def smooth_l1(x: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss: 0.5 x^2 / beta inside |x| < beta, else |x| - 0.5 beta."""
    if not beta > 0:
        raise ValueError(f"smooth_l1 needs beta > 0, got {beta}")
    ax = np.abs(x.data)
    inside = ax < beta
    out = np.where(inside, 0.5 * x.data * x.data / beta, ax - 0.5 * beta).astype(x.dtype)

    def backward(g):
        return ((g * np.where(inside, x.data / beta, np.sign(x.data))).astype(x.dtype),)

    return _wrap(out, (x,), backward, "smooth_l1")


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true; ``mask`` must broadcast to ``x``."""
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(mask.shape, x.shape)
    except ValueError:
        raise ShapeError(f"masked_fill: mask {mask.shape} does not broadcast to {x.shape}") from None
    out = np.where(mask, x.dtype.type(value), x.data)

    def backward(g):
        return (np.where(mask, g.dtype.type(0), g),)

    return _wrap(out, (x,), backward, "masked_fill")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. A no-op when ``p == 0`` or ``rng`` is None (inference)."""
    if p <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)
    return mul(x, Tensor(keep, dtype=x.dtype))


# --- linear algebra --------------------------------------------------------

def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``(..., m, k) @ (k, n)`` or batched ``(..., m, k) @ (..., k, n)``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape[:-2]} vs {b.shape[:-2]}")

    def backward(g):
        ga = g @ _swap(b.data) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _swap(a.data) @ g
        return ga, gb

    return _wrap(a.data @ b.data, (a, b), backward, "matmul")


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=-1, keepdims=True, dtype=np.float64)).astype(x.dtype)

    def backward(g):
        inner = np.sum(g * out, axis=-1, keepdims=True, dtype=np.float64)
        return ((out * (g - inner)).astype(x.dtype),)

    return _wrap(out, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} do not match last dim {d}")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = (xhat * gamma.data + beta.data).astype(x.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        gx = None
        if x.requires_grad:
            dxhat = g64 * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            gx = gx.astype(x.dtype)
        lead = tuple(range(x.ndim - 1))
        ggamma = (g64 * xhat).sum(axis=lead).astype(gamma.dtype)
        gbeta = g64.sum(axis=lead).astype(beta.dtype)
        return gx, ggamma, gbeta

    return _wrap(out, (x, gamma, beta), backward, "layer_norm")


def embedding_lookup(table: Tensor, idx) -> Tensor:
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"embedding_lookup: indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table with {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros(table.shape, dtype=np.float64)
        np.add.at(gt, idx, g)
        return (gt.astype(table.dtype),)

    return _wrap(table.data[idx], (table,), backward, "embedding")


# --- structural ------------------------------------------------------------

def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat: empty input")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: {t.shape} incompatible with {ts[0].shape} along axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _wrap(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing."""
    out = np.array(x.data[key])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return _wrap(out, (x,), backward, "slice")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _wrap(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _wrap(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward, "transpose")


# --- reductions ------------------------------------------------------------

def _norm_axes(x: Tensor, axis):
    if axis is None:
        return tuple(range(x.ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % x.ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(x, axis)
    out = x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gk, x.shape).astype(x.dtype),)

    return _wrap(out, (x,), backward, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(x, axis)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return ((np.broadcast_to(gk, x.shape) / n).astype(x.dtype),)

    return _wrap(out, (x,), backward, "mean")


# --- differentiation -------------------------------------------------------

def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None):
    """Populate ``.grad`` for every gradient-requiring leaf on ``tape``.

    Gradients are recomputed from scratch on each call, so running this twice
    on the same tape gives identical results. Leaves with no path to ``loss``
    (and any extra ``params`` passed in) receive zero gradients.
    Returns the gradients of ``params`` in order when given.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    leaves: dict[int, Tensor] = {}
    for op in tape.ops:
        produced.add(id(op.output))
        for t in op.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
    for op in reversed(tape.ops):
        g = grads.pop(id(op.output), None)
        if g is None:
            continue
        for inp, gi in zip(op.inputs, op.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, t in leaves.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype).reshape(t.shape)
    if params is None:
        return None
    out = []
    for p in params:
        if id(p) not in leaves:
            g = grads.get(id(p))
            p.grad = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype)
        out.append(p.grad)
    return out
