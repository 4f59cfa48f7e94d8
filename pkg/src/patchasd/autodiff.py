"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation in this package is built from the primitives
defined here. Forward values are plain numpy arrays wrapped in immutable
:class:`Tensor` nodes; when a :class:`Tape` is active, each primitive records
a vector-Jacobian pull so that :func:`value_and_grad` can replay the tape
backwards. Gradient checks run in float64 (finite differences are unreliable
in float32); training may run the same code at float32.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# arccos inputs are clamped this far inside [-1, 1] so the derivative stays finite
ARCCOS_CLAMP = 1e-7


class ShapeError(ValueError):
    """A primitive received inconsistently shaped operands."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class Tensor:
    """Immutable dense array node.

    ``data`` is a read-only numpy float array. ``requires_grad`` marks leaves
    whose gradients are wanted; it propagates through every primitive so that
    constant subtrees cost nothing on the backward pass.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, arr, requires_grad: bool) -> "Tensor":
        # Internal: adopt a freshly computed array without copying.
        out = object.__new__(cls)
        arr = np.asarray(arr)
        arr.flags.writeable = False
        out.data = arr
        out.requires_grad = requires_grad
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


class Tape:
    """Ordered, single-use record of primitive applications.

    Each record holds the output node plus (parent, pull) pairs, where pull
    maps the output cotangent to the parent cotangent. Replaying the records
    in reverse accumulates d(scalar)/d(leaf) for every recorded leaf.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, list[tuple[Tensor, Callable]]]] = []
        self._used = False

    def _append(self, out: Tensor, pulls) -> None:
        self._records.append((out, pulls))

    def gradients(self, output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
        if self._used:
            raise RuntimeError("Tape is single-use; build a new tape per backward pass")
        self._used = True
        grads: dict[int, np.ndarray] = {
            id(output): np.ones_like(output.data)
        }
        for out, pulls in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pull in pulls:
                contrib = pull(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        results = []
        for leaf in leaves:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            results.append(np.ascontiguousarray(g))
        return results


_TAPE_STACK: list[Tape] = []


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _lift_pair(a, b) -> tuple[Tensor, Tensor]:
    # Python scalars adopt the other operand's dtype so float32 graphs stay float32.
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.isscalar(b):
        return a, Tensor(np.asarray(b, dtype=np.result_type(a.data.dtype, b)))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.isscalar(a):
        return Tensor(np.asarray(a, dtype=np.result_type(b.data.dtype, a))), b
    return _lift(a), _lift(b)


def _record(out: Tensor, pulls) -> None:
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1]._append(out, [(p, f) for p, f in pulls if p.requires_grad])


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(op: str, a, b, fwd, pull_a, pull_b) -> Tensor:
    a, b = _lift_pair(a, b)
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None
    out = Tensor._wrap(data, a.requires_grad or b.requires_grad)
    _record(out, [(a, pull_a(a, b)), (b, pull_b(a, b))])
    return out


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b) -> Tensor:
    return _binary(
        "add", a, b,
        lambda x, y: x + y,
        lambda a, b: lambda g: _unbroadcast(g, a.shape),
        lambda a, b: lambda g: _unbroadcast(g, b.shape),
    )


def sub(a, b) -> Tensor:
    return _binary(
        "sub", a, b,
        lambda x, y: x - y,
        lambda a, b: lambda g: _unbroadcast(g, a.shape),
        lambda a, b: lambda g: _unbroadcast(-g, b.shape),
    )


def mul(a, b) -> Tensor:
    return _binary(
        "mul", a, b,
        lambda x, y: x * y,
        lambda a, b: lambda g: _unbroadcast(g * b.data, a.shape),
        lambda a, b: lambda g: _unbroadcast(g * a.data, b.shape),
    )


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b,
        lambda x, y: x / y,
        lambda a, b: lambda g: _unbroadcast(g / b.data, a.shape),
        lambda a, b: lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
    )


def neg(a) -> Tensor:
    a = _lift(a)
    out = Tensor._wrap(-a.data, a.requires_grad)
    _record(out, [(a, lambda g: -g)])
    return out


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    out = Tensor._wrap(data, a.requires_grad or b.requires_grad)

    def pull_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def pull_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    _record(out, [(a, pull_a), (b, pull_b)])
    return out


# ---------------------------------------------------------------------------
# shape primitives


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    out = Tensor._wrap(data, a.requires_grad)
    _record(out, [(a, lambda g: g.reshape(a.shape))])
    return out


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    out = Tensor._wrap(np.transpose(a.data, axes), a.requires_grad)
    inv = tuple(np.argsort(axes))
    _record(out, [(a, lambda g: np.transpose(g, inv))])
    return out


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _lift(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts]) from None
    out = Tensor._wrap(data, any(p.requires_grad for p in parts))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_pull(i):
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    _record(out, [(p, make_pull(i)) for i, p in enumerate(parts)])
    return out


def getitem(a, key) -> Tensor:
    a = _lift(a)
    data = a.data[key]
    out = Tensor._wrap(np.ascontiguousarray(data), a.requires_grad)

    def pull(g):
        z = np.zeros_like(a.data)
        np.add.at(z, key, g)
        return z

    _record(out, [(a, pull)])
    return out


def take_rows(a, indices) -> Tensor:
    """Gather rows of a 2-D tensor by integer index (repeats allowed)."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2:
        raise ShapeError("take_rows", a.shape)
    out = Tensor._wrap(a.data[idx], a.requires_grad)

    def pull(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return z

    _record(out, [(a, pull)])
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = Tensor._wrap(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def pull(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    _record(out, [(a, pull)])
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinear primitives


def _unary(a, data: np.ndarray, pull) -> Tensor:
    out = Tensor._wrap(data, a.requires_grad)
    _record(out, [(a, pull)])
    return out


def exp(a) -> Tensor:
    a = _lift(a)
    y = np.exp(a.data)
    return _unary(a, y, lambda g: g * y)


def log(a) -> Tensor:
    a = _lift(a)
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sqrt(a) -> Tensor:
    a = _lift(a)
    y = np.sqrt(a.data)
    return _unary(a, y, lambda g: g / (2.0 * y))


def tanh(a) -> Tensor:
    a = _lift(a)
    y = np.tanh(a.data)
    return _unary(a, y, lambda g: g * (1.0 - y * y))


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _lift(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * cdf

    def pull(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return g * (cdf + x * pdf)

    return _unary(a, y, pull)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with pass-through gradient strictly inside (lo, hi)."""
    a = _lift(a)
    y = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return _unary(a, y, lambda g: g * inside)


def arccos(a) -> Tensor:
    """arccos with inputs clamped to [-1+eps, 1-eps] before differentiation."""
    a = _lift(a)
    lo, hi = -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP
    xc = np.clip(a.data, lo, hi)
    y = np.arccos(xc)
    inside = (a.data > lo) & (a.data < hi)

    def pull(g):
        return g * np.where(inside, -1.0 / np.sqrt(1.0 - xc * xc), 0.0)

    return _unary(a, y, pull)


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def pull(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _unary(a, y, pull)


def layernorm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis: gamma * (x - mu)/sigma + beta."""
    a, gamma, beta = _lift(a), _lift(gamma), _lift(beta)
    if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
        raise ShapeError("layernorm", a.shape, gamma.shape, beta.shape)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x - mu) / sigma
    y = gamma.data * xhat + beta.data
    out = Tensor._wrap(y, a.requires_grad or gamma.requires_grad or beta.requires_grad)

    reduce_axes = tuple(range(x.ndim - 1))

    def pull_x(g):
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        return (gx - m1 - xhat * m2) / sigma

    def pull_gamma(g):
        return (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat

    def pull_beta(g):
        return g.sum(axis=reduce_axes) if reduce_axes else g

    _record(out, [(a, pull_x), (gamma, pull_gamma), (beta, pull_beta)])
    return out


# ---------------------------------------------------------------------------
# gradient driver and oracle


def value_and_grad(f: Callable, params: Sequence) -> tuple[float, list[Tensor]]:
    """Evaluate a scalar-valued computation and its gradients.

    ``f`` receives a list of leaf tensors (one per entry of ``params``) and
    must return a scalar Tensor built solely from the primitives in this
    module. Returns ``(float value, [gradient per param])`` where each
    gradient has the shape of its parameter.
    """
    leaves = []
    for p in params:
        arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        leaves.append(Tensor._wrap(np.array(arr, copy=True), requires_grad=True))
    tape = Tape()
    _TAPE_STACK.append(tape)
    try:
        out = f(leaves)
    finally:
        _TAPE_STACK.pop()
    if not isinstance(out, Tensor):
        raise TypeError("f must return a Tensor")
    if out.data.shape != ():
        raise ShapeError("value_and_grad(scalar output)", out.data.shape)
    grads = tape.gradients(out, leaves)
    return float(out.data), [Tensor(g) for g in grads]


def finite_diff_grad(f: Callable, params: Sequence, h: float = 1e-6,
                     coords: Sequence | None = None) -> list[Tensor]:
    """Central-difference gradient oracle.

    Perturbs one parameter element at a time: (f(p+h) - f(p-h)) / 2h.
    ``coords`` optionally restricts each parameter to a list of flat indices
    (all other entries of the returned gradient stay zero); by default every
    element is probed. ``f`` must be deterministic.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = []
    for p in params:
        arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        base.append(np.array(arr, dtype=np.float64))

    def evaluate(arrays):
        out = f([Tensor(a) for a in arrays])
        val = float(out.data if isinstance(out, Tensor) else out)
        if not math.isfinite(val):
            raise FloatingPointError("non-finite objective during finite differencing")
        return val

    grads = []
    for i, arr in enumerate(base):
        g = np.zeros_like(arr)
        flat_indices = range(arr.size) if coords is None else coords[i]
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in flat_indices:
            orig = flat[j]
            flat[j] = orig + h
            up = evaluate(base)
            flat[j] = orig - h
            down = evaluate(base)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(Tensor(g))
    return grads
