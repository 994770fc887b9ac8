"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor is a plain numpy float64 array plus an optional gradient
buffer.  Operations executed while gradients are enabled record their
inputs and a gradient rule on the output node; ``backward`` replays the
rules in reverse topological order.  Broadcasting follows numpy's
trailing-dimension rules and nothing fancier.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf as _erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Global switch: inside no_grad() nothing is recorded on the tape.
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable gradient recording inside the block (pure forward eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array, optionally tracked on the autodiff tape.

    ``_parents`` and ``_grad_fn`` are set only on op outputs; leaves have
    an empty parent tuple.  ``grad`` is allocated lazily on first
    accumulation and always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _fail(
            f"item() needs a scalar, got shape {self.shape}"
        )

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _fail(msg: str):
    raise ValueError(msg)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


# -- tape plumbing ----------------------------------------------------------


def _make_node(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may alias the consumer's grad buffer or be a broadcast view
        t.grad = np.array(np.broadcast_to(g, t.shape))
    else:
        t.grad += g


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting: reduce g back to the given shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def topo_order(root: Tensor) -> list[Tensor]:
    """Execution order of the recorded graph below root (inputs first).

    Iterative depth-first post-order; each tracked tensor appears exactly
    once, and every node's parents precede it.
    """
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/dx into .grad of every tracked tensor below root."""
    if root.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward on a tensor with no recorded graph")
    order = topo_order(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)


# -- elementwise ops --------------------------------------------------------


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def grad_fn(g):
        _accum(a, _sum_to_shape(g, a.shape))
        _accum(b, _sum_to_shape(g, b.shape))

    return _make_node(a.data + b.data, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def grad_fn(g):
        _accum(a, _sum_to_shape(g, a.shape))
        _accum(b, _sum_to_shape(-g, b.shape))

    return _make_node(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def grad_fn(g):
        _accum(a, _sum_to_shape(g * b.data, a.shape))
        _accum(b, _sum_to_shape(g * a.data, b.shape))

    return _make_node(a.data * b.data, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0.0):
        raise ValueError("div: division by exact zero")
    out_data = a.data / b.data

    def grad_fn(g):
        _accum(a, _sum_to_shape(g / b.data, a.shape))
        _accum(b, _sum_to_shape(-g * out_data / b.data, b.shape))

    return _make_node(out_data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    def grad_fn(g):
        _accum(a, -g)

    return _make_node(-a.data, (a,), grad_fn)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def grad_fn(g):
        _accum(a, g * out_data)

    return _make_node(out_data, (a,), grad_fn)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log: non-positive input")

    def grad_fn(g):
        _accum(a, g / a.data)

    return _make_node(np.log(a.data), (a,), grad_fn)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: negative input")
    out_data = np.sqrt(a.data)

    def grad_fn(g):
        _accum(a, g * 0.5 / out_data)

    return _make_node(out_data, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign for stability at large |x|.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def grad_fn(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make_node(out_data, (a,), grad_fn)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit; smooth, so finite differences stay honest."""
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x / _SQRT2))
    out_data = x * cdf

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        _accum(a, g * (cdf + x * pdf))

    return _make_node(out_data, (a,), grad_fn)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "min")
    take_a = a.data <= b.data

    def grad_fn(g):
        _accum(a, _sum_to_shape(g * take_a, a.shape))
        _accum(b, _sum_to_shape(g * ~take_a, b.shape))

    return _make_node(np.minimum(a.data, b.data), (a, b), grad_fn)


ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "min": minimum}
ELEMENTWISE_UNARY = {"sigmoid": sigmoid, "exp": exp, "log": log}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch by op name; binary ops require b."""
    if op in ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise {op} needs two operands")
        return ELEMENTWISE_BINARY[op](a, b)
    if op in ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"elementwise {op} is unary")
        return ELEMENTWISE_UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- reductions and shape ops ------------------------------------------------


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make_node(out_data, (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, a.shape) / count)

    return _make_node(out_data, (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def grad_fn(g):
        _accum(a, g.reshape(a.shape))

    return _make_node(a.data.reshape(shape), (a,), grad_fn)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def grad_fn(g):
        _accum(a, g.transpose(inv))

    return _make_node(a.data.transpose(axes), (a,), grad_fn)


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast to a larger shape; gradient sums the broadcast axes back."""
    shape = tuple(shape)

    def grad_fn(g):
        _accum(a, _sum_to_shape(g, a.shape))

    return _make_node(np.broadcast_to(a.data, shape).copy(), (a,), grad_fn)


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    axis = axis % parts[0].ndim
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return _make_node(np.concatenate([p.data for p in parts], axis=axis), parts, grad_fn)


def pad_end(a: Tensor, pads: Sequence[int], mode: str = "edge") -> Tensor:
    """Pad each axis at its far end only; mode 'edge' or 'zero'."""
    pads = tuple(int(p) for p in pads)
    if len(pads) != a.ndim:
        raise ValueError("pad_end: one pad per axis")
    spec = [(0, p) for p in pads]
    out_data = np.pad(a.data, spec, mode=("edge" if mode == "edge" else "constant"))

    def grad_fn(g):
        # Fold axes one at a time so corner cells (padded on several axes)
        # route their gradient back to the single source cell they copied.
        cur = g
        for ax, p in enumerate(pads):
            if p == 0:
                continue
            n = a.shape[ax]
            main = np.take(cur, np.arange(n), axis=ax).copy()
            if mode == "edge":
                tail = np.take(cur, np.arange(n, n + p), axis=ax)
                edge = [slice(None)] * a.ndim
                edge[ax] = n - 1
                main[tuple(edge)] += tail.sum(axis=ax)
            cur = main
        _accum(a, np.ascontiguousarray(cur))

    return _make_node(out_data, (a,), grad_fn)


# -- contractions -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents {a.shape[-1]} != {b.shape[-2]}")
    out_data = a.data @ b.data

    def grad_fn(g):
        _accum(a, _sum_to_shape(g @ b.data.swapaxes(-1, -2), a.shape))
        _accum(b, _sum_to_shape(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make_node(out_data, (a, b), grad_fn)


def softmax(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(x, out_data * (g - inner))

    return _make_node(out_data, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm: empty last dimension")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ValueError("layer_norm: gamma/beta must match the last dimension")
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    y = div(xc, sqrt(add(var, Tensor(eps))))
    return add(mul(y, gamma), beta)


# -- gradient checking -------------------------------------------------------


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    eps: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between analytic gradient and central differences.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    ``coords`` restricts the check to a subset of flat indices (used for
    whole-model checks where exhaustive differencing is too slow).
    """
    x = Tensor(point.data.copy(), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ValueError("grad_check: f must be scalar-valued")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = point.data.reshape(-1).copy()
    idxs = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + eps
        with no_grad():
            hi = f(Tensor(flat.reshape(point.shape))).item()
        flat[i] = orig - eps
        with no_grad():
            lo = f(Tensor(flat.reshape(point.shape))).item()
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise FloatingPointError("grad_check: non-finite function value")
        numeric = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
