"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Values are float64 numpy arrays wrapped in :class:`Tensor`. Operations executed
while a :class:`Tape` is live append a node holding the parents and a closure
that maps the output cotangent to parent cotangents. :func:`backward` replays
the tape in reverse insertion order, so every node is visited once.

Outside a live tape the same functions are plain numpy computations, which is
what inference and finite-difference probing use.
"""

from __future__ import annotations

import itertools
import math
import os
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, LayoutError, NumericError, TapeError

DEBUG = bool(os.environ.get("EMPMP_DEBUG"))

_local = threading.local()
_tape_ids = itertools.count(1)


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    if stack and stack[-1].live:
        return stack[-1]
    return None


class Tensor:
    """A float64 array plus optional gradient buffer and tape membership."""

    __slots__ = ("data", "grad", "requires_grad", "name", "tape_id", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        tape = active_tape()
        self.tape_id = tape.id if tape is not None else None
        self._node: _Node | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("out", "parents", "backward_fn", "index")

    def __init__(self, out, parents, backward_fn, index):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.index = index


class Tape:
    """Append-only record of operations; use as a context manager.

    >>> w = Tensor([1.0, -2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(w, w))
    >>> backward(loss, tape)[w].tolist()
    [2.0, -4.0]
    """

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[_Node] = []
        self.live = False
        self._params: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        self.live = True
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        self.live = False

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t.requires_grad and t._node is None:
                self._params.setdefault(id(t), t)

    @property
    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def record(self, out: Tensor, parents: tuple, backward_fn: Callable) -> None:
        node = _Node(out, parents, backward_fn, len(self.nodes))
        self.nodes.append(node)
        out._node = node
        out.tape_id = self.id
        for p in parents:
            if p.requires_grad and p._node is None:
                self._params.setdefault(id(p), p)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.tape_id = None
    out._node = None
    tape = active_tape()
    if tape is not None:
        tape.record(out, parents, backward_fn)
    return out


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for a {ndim}-d tensor")
    return axis % ndim


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise DimensionError(f"shapes {a} and {b} are not compatible") from exc


# elementwise --------------------------------------------------------------

def add(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x.shape, y.shape)
    sx, sy = x.shape, y.shape
    return _make(x.data + y.data, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(g, sy)))


def sub(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x.shape, y.shape)
    sx, sy = x.shape, y.shape
    return _make(x.data - y.data, (x, y), lambda g: (_unbroadcast(g, sx), -_unbroadcast(g, sy)))


def mul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x.shape, y.shape)
    xd, yd = x.data, y.data
    return _make(xd * yd, (x, y),
                 lambda g: (_unbroadcast(g * yd, xd.shape), _unbroadcast(g * xd, yd.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + float(c), (x,), lambda g: (g,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def hadamard(x: Tensor, y: Tensor, axis: int | None = None) -> Tensor:
    """Elementwise product.

    ``y`` either matches ``x`` exactly or equals ``x.shape`` with ``axis``
    removed, in which case it is repeated along that axis.
    """
    if x.shape == y.shape:
        return mul(x, y)
    if axis is not None:
        ax = _norm_axis(axis, x.ndim)
        if y.shape == x.shape[:ax] + x.shape[ax + 1:]:
            return mul(x, expand_dims(y, ax))
    raise DimensionError(f"hadamard: shapes {x.shape} and {y.shape} are incompatible")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return scale(sum_all(x), 1.0 / n)


def sum_axes(x: Tensor, axes: Sequence[int], keepdims: bool = False) -> Tensor:
    axes = tuple(_norm_axis(a, x.ndim) for a in axes)
    shape = x.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), back)


def diff(x: Tensor, axis: int) -> Tensor:
    """Forward difference ``x[t+1] - x[t]`` along ``axis``."""
    ax = _norm_axis(axis, x.ndim)
    if x.shape[ax] < 2:
        raise ContractError(f"diff needs at least 2 entries along axis {ax}")
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        hi = [slice(None)] * len(shape)
        lo = [slice(None)] * len(shape)
        hi[ax] = slice(1, None)
        lo[ax] = slice(None, -1)
        gx[tuple(hi)] += g
        gx[tuple(lo)] -= g
        return (gx,)

    return _make(np.diff(x.data, axis=ax), (x,), back)


# layout -------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def expand_dims(x: Tensor, axis: int) -> Tensor:
    shape = list(x.shape)
    shape.insert(axis % (x.ndim + 1), 1)
    return reshape(x, shape)


def merge_axes(x: Tensor, first: int, second: int) -> Tensor:
    """Fuse two adjacent axes; ``first`` becomes the outer index."""
    a, b = _norm_axis(first, x.ndim), _norm_axis(second, x.ndim)
    if b != a + 1:
        raise LayoutError(f"merge_axes needs adjacent axes, got {first} and {second}")
    shape = x.shape[:a] + (x.shape[a] * x.shape[b],) + x.shape[b + 1:]
    return reshape(x, shape)


def split_axes(x: Tensor, axis: int, sizes: Sequence[int]) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    sizes = tuple(int(s) for s in sizes)
    if math.prod(sizes) != x.shape[ax]:
        raise DimensionError(f"axis {ax} has size {x.shape[ax]}, cannot split into {sizes}")
    return reshape(x, x.shape[:ax] + sizes + x.shape[ax + 1:])


def moveaxis(x: Tensor, source: int, destination: int) -> Tensor:
    src, dst = _norm_axis(source, x.ndim), _norm_axis(destination, x.ndim)
    return _make(np.moveaxis(x.data, src, dst), (x,), lambda g: (np.moveaxis(g, dst, src),))


# learned maps -------------------------------------------------------------

class MacCounter:
    """Tallies multiply-accumulates of :func:`linear_along_axis` calls by label."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def __enter__(self) -> "MacCounter":
        _local.macs = self
        return self

    def __exit__(self, *exc) -> None:
        _local.macs = None

    def add(self, label: str, n: int) -> None:
        self.counts[label] = self.counts.get(label, 0) + n

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def linear_along_axis(x: Tensor, axis: int, w: Tensor, b: Tensor | None = None,
                      label: str = "linear") -> Tensor:
    """Apply ``slice @ w + b`` to every fiber of ``x`` along ``axis``."""
    ax = _norm_axis(axis, x.ndim)
    if w.ndim != 2:
        raise DimensionError(f"weight must be 2-D, got shape {w.shape}")
    n_in, n_out = w.shape
    if x.shape[ax] != n_in:
        raise DimensionError(f"axis {ax} has size {x.shape[ax]} but weight expects {n_in}")
    if b is not None and b.shape != (n_out,):
        raise DimensionError(f"bias must have shape ({n_out},), got {b.shape}")

    counter = getattr(_local, "macs", None)
    if counter is not None:
        counter.add(label, (x.size // n_in) * n_in * n_out)

    xm = np.moveaxis(x.data, ax, -1)
    out = xm @ w.data
    if b is not None:
        out = out + b.data
    wd = w.data

    def back(g):
        gm = np.moveaxis(g, ax, -1)
        gx = np.moveaxis(gm @ wd.T, -1, ax)
        g2 = gm.reshape(-1, n_out)
        gw = xm.reshape(-1, n_in).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.moveaxis(out, -1, ax), parents, back)


def layer_norm(x: Tensor, axis: int, gain: Tensor, bias: Tensor, eps: float = 1e-5,
               stats_axes: Sequence[int] | None = None) -> Tensor:
    """Normalize ``x`` and apply a per-entry affine along ``axis``.

    Mean and population variance are taken over ``stats_axes`` (default: just
    ``axis``); ``gain``/``bias`` have length ``x.shape[axis]``.
    """
    if not eps > 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    ax = _norm_axis(axis, x.ndim)
    n = x.shape[ax]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"gain/bias must have shape ({n},) for axis {ax}")
    axes = (ax,) if stats_axes is None else tuple(sorted(_norm_axis(a, x.ndim) for a in stats_axes))
    bshape = [1] * x.ndim
    bshape[ax] = n
    gd = gain.data.reshape(bshape)

    # sums scaled by 1/count avoid the per-call overhead of ndarray.mean
    scale = 1.0 / math.prod(x.shape[a] for a in axes)
    mu = np.add.reduce(x.data, axis=axes, keepdims=True) * scale
    xc = x.data - mu
    var = np.add.reduce(xc * xc, axis=axes, keepdims=True) * scale
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + bias.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != ax)

    def back(g):
        gh = g * gd
        gx = gh - np.add.reduce(gh, axis=axes, keepdims=True) * scale
        gx -= xhat * (np.add.reduce(gh * xhat, axis=axes, keepdims=True) * scale)
        gx *= inv
        return gx, np.add.reduce(g * xhat, axis=other), np.add.reduce(g, axis=other)

    return _make(out, (x, gain, bias), back)


# differentiation ----------------------------------------------------------

def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(param) into ``param.grad`` for every registered parameter.

    Returns a mapping from each tape-registered parameter to its (accumulated)
    gradient array.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape_id != tape.id:
        raise TapeError("loss was not produced under the given tape")

    for p in tape.parameters:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)

    if loss._node is not None and loss.requires_grad:
        cot: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape.nodes[: loss._node.index + 1]):
            g = cot.pop(id(node.out), None)
            if g is None:
                continue
            pgs = node.backward_fn(g)
            for parent, pg in zip(node.parents, pgs):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg
                else:
                    key = id(parent)
                    if key in cot:
                        cot[key] = cot[key] + pg
                    else:
                        cot[key] = pg
    elif loss.requires_grad and loss._node is None:
        loss.grad = (loss.grad if loss.grad is not None else 0.0) + np.ones_like(loss.data)

    return {p: p.grad for p in tape.parameters}


def _scalar(value) -> float:
    v = float(value.data.reshape(-1)[0]) if isinstance(value, Tensor) else float(value)
    if not math.isfinite(v):
        raise NumericError(f"objective evaluated to a non-finite value ({v})")
    return v


def finite_diff_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5) -> float:
    """Max relative gap between tape gradients and central differences.

    ``f`` takes no arguments and rebuilds the scalar objective from the current
    parameter values. The per-entry error is
    ``|a - c| / (|a| + |c| + 1e-12)``.
    """
    if not step > 0:
        raise ContractError(f"step must be positive, got {step}")
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with Tape() as tape:
        tape.watch(*params)
        loss = f()
    _scalar(loss)
    if isinstance(loss, Tensor):
        backward(loss, tape)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ContractError("parameter data must be contiguous")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(f())
            flat[i] = orig - step
            fm = _scalar(f())
            flat[i] = orig
            c = (fp - fm) / (2.0 * step)
            ai = a.flat[i]
            worst = max(worst, abs(ai - c) / (abs(ai) + abs(c) + 1e-12))
    return worst
