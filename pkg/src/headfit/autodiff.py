"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and records how it was produced; the graph
of parent links *is* the tape, ordered by creation id.  ``backward`` replays
it once in reverse creation order, which is a valid topological order because
parents always exist before their children.

The operation set is exactly what the decode -> project -> loss pipeline
needs.  Everything is float64; any operation that produces NaN/Inf raises
immediately instead of propagating poison.  No GPU, no broadcasting beyond
numpy's own rules, no higher-order derivatives.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_next_oid = itertools.count()
_grad_enabled = True


def _all_finite(arr: np.ndarray) -> bool:
    # a single C reduction; NaN/Inf anywhere poisons the sum
    return math.isfinite(arr.sum())


@contextmanager
def no_grad():
    """Disable recording inside the block; ops return untracked tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("value", "name", "_parents", "_vjps", "_oid")

    def __init__(self, value, name: str | None = None):
        arr = np.asarray(value, dtype=np.float64)
        if not _all_finite(arr):
            raise ValueError(f"non-finite values in tensor {name or '<leaf>'}")
        self.value = arr
        self.name = name
        self._parents = ()
        self._vjps = ()
        self._oid = next(_next_oid)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value.item())

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, tracked={bool(self._parents)})"

    # arithmetic sugar; constants stay plain numpy and are never tracked
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        if exponent == 2:
            return mul(self, self)
        raise ValueError("only squaring is supported")

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x, name: str | None = None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, name)


def _val(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _node(value: np.ndarray, edges: Sequence[tuple]) -> Tensor:
    """Build an op-result tensor.  ``edges`` pairs tracked parents with vjps."""
    out = Tensor.__new__(Tensor)
    arr = np.asarray(value, dtype=np.float64)
    if not _all_finite(arr):
        raise ValueError("non-finite result from tensor operation")
    out.value = arr
    out.name = None
    if _grad_enabled and edges:
        out._parents = tuple(p for p, _ in edges)
        out._vjps = tuple(v for _, v in edges)
    else:
        out._parents = ()
        out._vjps = ()
    out._oid = next(_next_oid)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _edges(operands_and_vjps) -> list[tuple]:
    return [(op, vjp) for op, vjp in operands_and_vjps if isinstance(op, Tensor)]


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    va, vb = _val(a), _val(b)
    return _node(va + vb, _edges([
        (a, lambda g: _unbroadcast(g, va.shape)),
        (b, lambda g: _unbroadcast(g, vb.shape)),
    ]))


def sub(a, b) -> Tensor:
    va, vb = _val(a), _val(b)
    return _node(va - vb, _edges([
        (a, lambda g: _unbroadcast(g, va.shape)),
        (b, lambda g: _unbroadcast(-g, vb.shape)),
    ]))


def mul(a, b) -> Tensor:
    va, vb = _val(a), _val(b)
    return _node(va * vb, _edges([
        (a, lambda g: _unbroadcast(g * vb, va.shape)),
        (b, lambda g: _unbroadcast(g * va, vb.shape)),
    ]))


def div(a, b) -> Tensor:
    va, vb = _val(a), _val(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = va / vb  # non-finite results are rejected by _node
    return _node(out, _edges([
        (a, lambda g: _unbroadcast(g / vb, va.shape)),
        (b, lambda g: _unbroadcast(-g * va / (vb * vb), vb.shape)),
    ]))


def neg(a) -> Tensor:
    va = _val(a)
    return _node(-va, _edges([(a, lambda g: -g)]))


def t_abs(a) -> Tensor:
    """|a| elementwise; subgradient 0 at the kink."""
    va = _val(a)
    return _node(np.abs(va), _edges([(a, lambda g: g * np.sign(va))]))


def relu(a) -> Tensor:
    """max(a, 0) elementwise; subgradient 0 at the kink."""
    va = _val(a)
    return _node(np.maximum(va, 0.0), _edges([(a, lambda g: g * (va > 0.0))]))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; zero gradient outside the open interval."""
    va = _val(a)
    inside = (va > lo) & (va < hi)
    return _node(np.clip(va, lo, hi), _edges([(a, lambda g: g * inside)]))


def sqrt(a) -> Tensor:
    va = _val(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(va)  # negatives surface as the usual non-finite error
    return _node(out, _edges([(a, lambda g: g * 0.5 / out)]))


def exp(a) -> Tensor:
    va = _val(a)
    with np.errstate(over="ignore"):
        out = np.exp(va)  # overflow surfaces as the usual non-finite error
    return _node(out, _edges([(a, lambda g: g * out)]))


def t_sin(a) -> Tensor:
    va = _val(a)
    return _node(np.sin(va), _edges([(a, lambda g: g * np.cos(va))]))


def t_cos(a) -> Tensor:
    va = _val(a)
    return _node(np.cos(va), _edges([(a, lambda g: -g * np.sin(va))]))


def atan2(a, b) -> Tensor:
    """Elementwise atan2(a, b)."""
    va, vb = _val(a), _val(b)
    denom = va * va + vb * vb
    return _node(np.arctan2(va, vb), _edges([
        (a, lambda g: _unbroadcast(g * vb / denom, va.shape)),
        (b, lambda g: _unbroadcast(-g * va / denom, vb.shape)),
    ]))


# ---------------------------------------------------------------------------
# reductions and linear algebra


def t_sum(a, axis: int | None = None) -> Tensor:
    va = _val(a)
    if axis is None:
        return _node(va.sum(), _edges([(a, lambda g: np.broadcast_to(g, va.shape))]))
    return _node(va.sum(axis=axis), _edges([
        (a, lambda g: np.broadcast_to(np.expand_dims(g, axis), va.shape)),
    ]))


def t_mean(a) -> Tensor:
    va = _val(a)
    n = va.size
    return _node(va.mean(), _edges([(a, lambda g: np.broadcast_to(g / n, va.shape))]))


def dot(a, b) -> Tensor:
    return t_sum(mul(a, b))


def sum_sq(a) -> Tensor:
    return t_sum(mul(a, a))


def matmul(a, b) -> Tensor:
    va, vb = _val(a), _val(b)
    with np.errstate(over="ignore", invalid="ignore"):
        out = va @ vb  # overflow surfaces as the usual non-finite error

    if va.ndim == 2 and vb.ndim == 2:
        vjp_a = lambda g: g @ vb.T
        vjp_b = lambda g: va.T @ g
    elif va.ndim == 1 and vb.ndim == 2:
        vjp_a = lambda g: vb @ g
        vjp_b = lambda g: va[:, None] * g
    elif va.ndim == 2 and vb.ndim == 1:
        vjp_a = lambda g: g[:, None] * vb
        vjp_b = lambda g: va.T @ g
    elif va.ndim == 1 and vb.ndim == 1:
        vjp_a = lambda g: g * vb
        vjp_b = lambda g: g * va
    else:
        raise ValueError(f"unsupported matmul ranks {va.ndim} @ {vb.ndim}")
    return _node(out, _edges([(a, vjp_a), (b, vjp_b)]))


# ---------------------------------------------------------------------------
# shape surgery


def reshape(a, shape) -> Tensor:
    va = _val(a)
    return _node(va.reshape(shape), _edges([(a, lambda g: g.reshape(va.shape))]))


def transpose(a) -> Tensor:
    va = _val(a)
    if va.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return _node(va.T, _edges([(a, lambda g: g.T)]))


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    offsets = np.cumsum([0] + [v.shape[axis] for v in vals])

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _node(out, _edges([(p, make_vjp(i)) for i, p in enumerate(parts)]))


def getitem(a, key) -> Tensor:
    """Basic int/slice indexing (no integer-array fancy indexing)."""
    va = _val(a)
    out = va[key]

    def vjp(g):
        acc = np.zeros_like(va)
        acc[key] = g
        return acc

    return _node(out, _edges([(a, vjp)]))


def take_rows(a, indices: np.ndarray) -> Tensor:
    """Gather rows by integer index; duplicates accumulate on backward."""
    va = _val(a)
    idx = np.asarray(indices)
    out = va[idx]

    def vjp(g):
        acc = np.zeros_like(va)
        np.add.at(acc, idx, g)
        return acc

    return _node(out, _edges([(a, vjp)]))


# ---------------------------------------------------------------------------
# rotations

_EYE3 = np.eye(3)

# below this rotation angle the sin/cos coefficients switch to their
# second-order Taylor expansion, keeping gradients defined at zero rotation
SMALL_ANGLE = 1e-8


def rodrigues(axis_angle) -> Tensor:
    """Rotation matrix from an axis-angle 3-vector (angle = vector norm).

    Differentiable through the tape; the zero vector maps to the identity via
    the small-angle branch.
    """
    v = as_tensor(axis_angle)
    if v.value.shape != (3,):
        raise ValueError("axis-angle vector must have shape (3,)")
    x, y, z = v[0:1], v[1:2], v[2:3]
    zero = np.zeros(1)
    skew = concat([zero, -z, y, z, zero, -x, -y, x, zero]).reshape((3, 3))
    skew_sq = matmul(skew, skew)
    sq_angle = sum_sq(v)
    if sq_angle.item() < SMALL_ANGLE * SMALL_ANGLE:
        return add(_EYE3, add(skew, mul(0.5, skew_sq)))
    angle = sqrt(sq_angle)
    sin_coef = div(t_sin(angle), angle)
    cos_coef = div(sub(1.0, t_cos(angle)), sq_angle)
    return add(_EYE3, add(mul(sin_coef, skew), mul(cos_coef, skew_sq)))


# ---------------------------------------------------------------------------
# backward pass and verification


def backward(output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar output with respect to the given leaves.

    Every node in the reachable subgraph is visited exactly once, in reverse
    creation order.  Leaves that do not participate get zero gradients.
    """
    if output.value.size != 1:
        raise ValueError("backward requires a scalar output")
    seen: dict[int, Tensor] = {id(output): output}
    stack = [output]
    while stack:
        node = stack.pop()
        for p in node._parents:
            assert p._oid < node._oid, "tape order violated"
            if id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda t: t._oid)

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    return [np.array(grads.get(id(leaf), np.zeros_like(leaf.value)))
            for leaf in leaves]


def grad(output: Tensor, leaf: Tensor) -> np.ndarray:
    return backward(output, [leaf])[0]


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative gap between analytic and central-difference gradients.

    The relative measure is |analytic - numeric| / max(1, |analytic|), taken
    over every coordinate of ``point``.  ``f`` must map a tensor to a scalar
    tensor; evaluation failures propagate.
    """
    x0 = np.asarray(point, dtype=np.float64)
    leaf = Tensor(x0)
    out = f(leaf)
    if out.value.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    analytic = backward(out, [leaf])[0].ravel()

    flat = x0.ravel()
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            bump = flat.copy()
            bump[i] = flat[i] + step
            hi = f(Tensor(bump.reshape(x0.shape))).item()
            bump[i] = flat[i] - step
            lo = f(Tensor(bump.reshape(x0.shape))).item()
            numeric = (hi - lo) / (2.0 * step)
            gap = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, gap)
    return worst
