"""Dense float64 tensors with a reverse-mode differentiation tape.

Every value is a node on an implicit tape: it caches its forward array,
remembers its parents and one vector-Jacobian closure per parent, and
accumulates an adjoint during ``backward``.  The tape is append-only per
forward pass and is garbage-collected with the nodes once the gradients
have been harvested; there is no support for higher-order derivatives.

Elementwise binary ops require equal shapes or a rank-0 operand (scalar
broadcast).  ``matmul`` additionally accepts leading batch dimensions on
either operand and sums gradients over broadcast batch axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the requested op."""


class DomainError(ValueError):
    """Math domain violation (e.g. log of a non-positive value)."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


Array = np.ndarray


def _as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """One tape node: cached forward value plus adjoint accumulator."""

    __slots__ = ("data", "op", "parents", "vjps", "grad")

    def __init__(
        self,
        data,
        op: str = "leaf",
        parents: tuple["Tensor", ...] = (),
        vjps: tuple[Callable[[Array], Array] | None, ...] = (),
    ):
        self.data = _as_f64(data)
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # Operator sugar; scalars and ndarrays are lifted to constant leaves.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data)
        self.op = "parameter"
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A non-trainable leaf holding ``x``."""
    return Tensor(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (undoes scalar/batch broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not conform")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    return Tensor(
        a.data + b.data,
        "add",
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(g, b.data.shape),
        ),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    return Tensor(
        a.data - b.data,
        "sub",
        (a, b),
        (
            lambda g: _unbroadcast(g, a.data.shape),
            lambda g: _unbroadcast(-g, b.data.shape),
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    return Tensor(
        a.data * b.data,
        "mul",
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.data.shape),
            lambda g: _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data * c, "scalar-scale", (a,), (lambda g: g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp_a(g: Array) -> Array:
        return _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)

    def vjp_b(g: Array) -> Array:
        return _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)

    return Tensor(out, "matmul", (a, b), (vjp_a, vjp_b))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), "relu", (a,), (lambda g: g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-safe on both tails
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor(s, "sigmoid", (a,), (lambda g: g * s * (1.0 - s),))


def softplus(a: Tensor) -> Tensor:
    v = softplus_array(a.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor(v, "softplus", (a,), (lambda g: g * s,))


def softplus_array(x: Array) -> Array:
    """log(1 + e^x) computed as log1p(exp(-|x|)) + max(x, 0)."""
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return Tensor(t, "tanh", (a,), (lambda g: g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return Tensor(e, "exp", (a,), (lambda g: g * e,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        bad = float(np.min(a.data))
        raise DomainError(f"log: non-positive input (min value {bad})")
    return Tensor(np.log(a.data), "log", (a,), (lambda g: g / a.data,))


def sum_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def vjp(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return Tensor(out, "sum-reduce", (a,), (vjp,))


def mean_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def vjp(g: Array) -> Array:
        if axis is None:
            return np.broadcast_to(g / n, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy()

    return Tensor(out, "mean-reduce", (a,), (vjp,))


def max_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; the gradient is routed to the (first) argmax."""
    if axis is None:
        out = a.data.max()
        idx = np.unravel_index(np.argmax(a.data), a.data.shape)

        def vjp(g: Array) -> Array:
            full = np.zeros_like(a.data)
            full[idx] = g
            return full

    else:
        out = a.data.max(axis=axis)
        arg = np.argmax(a.data, axis=axis)

        def vjp(g: Array) -> Array:
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
            return full

    return Tensor(out, "max-reduce-with-argmax", (a,), (vjp,))


def concat_last(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat-last-axis: empty input list")
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.shape[:-1] != lead:
            raise ShapeError(
                f"concat-last-axis: leading shapes differ, {tensors[0].data.shape} vs {t.data.shape}"
            )
    out = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.data.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def make_vjp(k: int):
        lo, hi = offsets[k], offsets[k + 1]
        return lambda g: g[..., lo:hi]

    return Tensor(out, "concat-last-axis", tuple(tensors), tuple(make_vjp(k) for k in range(len(tensors))))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]

    def vjp(g: Array) -> Array:
        full = np.zeros_like(a.data)
        full[index] = g
        return full

    return Tensor(out, "slice", (a,), (vjp,))


def transpose2d(a: Tensor) -> Tensor:
    """Swap the last two axes (plain transpose for rank 2)."""
    if a.data.ndim < 2:
        raise ShapeError(f"transpose-2d: rank {a.data.ndim} input")
    return Tensor(a.data.swapaxes(-1, -2), "transpose-2d", (a,), (lambda g: g.swapaxes(-1, -2),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor(out, "reshape", (a,), (lambda g: g.reshape(a.data.shape),))


def minimum_const(a: Tensor, c: float) -> Tensor:
    """min(a, c) composed from relu: a - relu(a - c)."""
    return sub(a, relu(sub(a, constant(float(c)))))


def maximum_const(a: Tensor, c: float) -> Tensor:
    """max(a, c) composed from relu: a + relu(c - a)."""
    return add(a, relu(sub(constant(float(c)), a)))


def custom(data, parents: tuple[Tensor, ...], vjps: tuple, op: str) -> Tensor:
    """Hook for fused ops with hand-written reverse rules (scans, scatters)."""
    return Tensor(data, op, parents, vjps)


# ---------------------------------------------------------------------------
# op-kind dispatcher
# ---------------------------------------------------------------------------

_UNARY = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "transpose-2d": transpose2d,
}

_BINARY = {"matmul": matmul, "add": add, "sub": sub, "mul": mul}

_REDUCE = {"sum-reduce": sum_reduce, "mean-reduce": mean_reduce, "max-reduce-with-argmax": max_reduce}


def forward_op(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Build one tape node of the named kind from ``inputs``.

    Extra arguments: ``c`` for scalar-scale, ``axis`` for reductions,
    ``axis``/``start``/``stop`` for slice, ``shape`` for reshape.
    """
    inputs = [_lift(x) for x in inputs]
    if kind in _BINARY:
        return _BINARY[kind](inputs[0], inputs[1])
    if kind in _UNARY:
        return _UNARY[kind](inputs[0])
    if kind in _REDUCE:
        return _REDUCE[kind](inputs[0], axis=kwargs.get("axis"))
    if kind == "scalar-scale":
        return scale(inputs[0], kwargs["c"])
    if kind == "concat-last-axis":
        return concat_last(inputs)
    if kind == "slice":
        return slice_axis(inputs[0], kwargs["axis"], kwargs["start"], kwargs["stop"])
    if kind == "reshape":
        return reshape(inputs[0], kwargs["shape"])
    raise ContractError(f"unknown op kind {kind!r}")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, parameters: Iterable[Parameter] = ()) -> dict[str, Array]:
    """Accumulate adjoints from a scalar ``root`` down to the leaves.

    Returns a name -> gradient map over ``parameters``; parameters not
    reachable from the root get a zero gradient of their own shape.  Every
    visited node's ``.grad`` is also populated.
    """
    if root.data.ndim != 0:
        raise ContractError(f"backward: root must be a scalar, got shape {root.data.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if vjp is None:
                continue
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = contrib.copy() if contrib.base is not None else contrib
            else:
                parent.grad = parent.grad + contrib
    grads: dict[str, Array] = {}
    for p in parameters:
        grads[p.name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return grads
