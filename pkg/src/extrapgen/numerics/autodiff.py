"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Values are wrapped in :class:`Tensor`. Operations on tensors always compute
their forward value with plain numpy; when a :class:`Tape` is active and at
least one input is being tracked, the operation is also appended to the tape
so that :meth:`Tape.gradient` can sweep it in reverse.

Broadcasting follows numpy for the elementwise binary primitives (needed for
bias rows and scalars); the backward pass sums gradients back to the input
shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from ..errors import ContractError, NumericError

_ACTIVE: list["Tape"] = []


class Tensor:
    """Immutable dense array value participating in differentiation."""

    __slots__ = ("data",)
    __array_priority__ = 100.0

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # arr is a fresh array owned by the new tensor; skip the defensive copy
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return take(self, key)


def _not_scalar(shape):
    raise ContractError(f"expected a scalar tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    """One recorded primitive: ``out = forward(*inputs, **kwargs)``.

    ``inputs`` holds, per argument, either the index of an earlier node or
    ``None`` for an untracked constant (whose value is kept in ``consts``).
    Leaves (watched tensors) have ``op == "leaf"`` and no inputs.
    """

    op: str
    inputs: tuple[int | None, ...]
    consts: tuple[np.ndarray | None, ...]
    kwargs: dict[str, Any]
    out: Tensor


class Tape:
    """Records primitives for reverse-mode differentiation.

    Usage::

        with Tape() as tape:
            w = tape.watch(Tensor(w0))
            loss = mean(square(x @ w - y))
        (gw,) = tape.gradient(loss, [w])
    """

    def __init__(self, check_nan: bool = True):
        self.nodes: list[Node] = []
        self.check_nan = check_nan
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def watch(self, t) -> Tensor:
        t = as_tensor(t)
        if id(t) not in self._index:
            self._append(Node("leaf", (), (), {}, t))
        return t

    def tracks(self, t) -> bool:
        return isinstance(t, Tensor) and id(t) in self._index

    def _append(self, node: Node) -> None:
        self._index[id(node.out)] = len(self.nodes)
        self.nodes.append(node)

    def gradient(self, target: Tensor, sources) -> list[np.ndarray]:
        """Return d(target)/d(source) for each source, as arrays of source shape."""
        if not isinstance(target, Tensor) or target.size != 1:
            raise ContractError(
                "gradient target must be a scalar Tensor, got "
                f"{getattr(target, 'shape', type(target).__name__)}"
            )
        if id(target) not in self._index:
            return [np.zeros(as_tensor(s).shape) for s in sources]
        last = self._index[id(target)]
        adj: list[np.ndarray | None] = [None] * (last + 1)
        adj[last] = np.ones(target.shape)
        for i in range(last, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or node.op == "leaf":
                continue
            args = [
                self.nodes[j].out.data if j is not None else c
                for j, c in zip(node.inputs, node.consts)
            ]
            grads = _PRIMS[node.op].vjp(g, node.out.data, *args, **node.kwargs)
            for j, gj in zip(node.inputs, grads):
                if j is None or gj is None:
                    continue
                adj[j] = gj if adj[j] is None else adj[j] + gj
        out = []
        for s in sources:
            j = self._index.get(id(s))
            if j is None or j > last or adj[j] is None:
                out.append(np.zeros(as_tensor(s).shape))
            else:
                out.append(np.asarray(adj[j], dtype=np.float64).reshape(s.shape))
        return out

    def replay(self, leaves: Mapping[int, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every node's value from the leaves, in recorded order.

        ``leaves`` optionally maps node index to a replacement leaf value.
        With no replacements the result equals the recorded values bit-for-bit.
        """
        vals: list[np.ndarray] = []
        for i, node in enumerate(self.nodes):
            if node.op == "leaf":
                v = node.out.data if leaves is None or i not in leaves else np.asarray(leaves[i], float)
            else:
                args = [vals[j] if j is not None else c for j, c in zip(node.inputs, node.consts)]
                v = _PRIMS[node.op].forward(*args, **node.kwargs)
            vals.append(v)
        return vals


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]


_PRIMS: dict[str, Primitive] = {}


def _apply(name: str, *inputs, **kwargs) -> Tensor:
    prim = _PRIMS[name]
    tensors = [as_tensor(x) for x in inputs]
    out = prim.forward(*(t.data for t in tensors), **kwargs)
    tape = _ACTIVE[-1] if _ACTIVE else None
    if tape is not None and tape.check_nan and np.isnan(out).any():
        raise NumericError(name)
    result = Tensor._wrap(out)
    if tape is not None and any(tape.tracks(t) for t in tensors):
        idx = tuple(tape._index.get(id(t)) for t in tensors)
        consts = tuple(t.data if i is None else None for t, i in zip(tensors, idx))
        tape._append(Node(name, idx, consts, kwargs, result))
    return result


def _register(name, forward, vjp):
    _PRIMS[name] = Primitive(name, forward, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


_register("add", np.add, lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
_register("sub", np.subtract, lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
_register("mul", np.multiply, lambda g, o, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
_register(
    "div",
    np.divide,
    lambda g, o, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * o / b, b.shape)),
)
_register("neg", np.negative, lambda g, o, a: (-g,))
_register("exp", np.exp, lambda g, o, a: (g * o,))
_register("log", np.log, lambda g, o, a: (g / a,))
_register("tanh", np.tanh, lambda g, o, a: (g * (1.0 - o * o),))
_register("square", np.square, lambda g, o, a: (2.0 * g * a,))
_register("sqrt", np.sqrt, lambda g, o, a: (0.5 * g / o,))


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


_register("softplus", _softplus, lambda g, o, a: (g * _sigmoid(a),))
_register("sigmoid", _sigmoid, lambda g, o, a: (g * o * (1.0 - o),))


def _matmul_fwd(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    return a @ b


_register("matmul", _matmul_fwd, lambda g, o, a, b: (g @ b.T, a.T @ g))


def _sum_fwd(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _sum_vjp(g, o, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _mean_fwd(a, axis=None, keepdims=False):
    return np.mean(a, axis=axis, keepdims=keepdims)


def _mean_vjp(g, o, a, axis=None, keepdims=False):
    n = a.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    (full,) = _sum_vjp(g, o, a, axis, keepdims)
    return (full / n,)


_register("sum", _sum_fwd, _sum_vjp)
_register("mean", _mean_fwd, _mean_vjp)


def _take_fwd(a, key=None):
    return np.array(a[key])


def _take_vjp(g, o, a, key=None):
    out = np.zeros(a.shape)
    np.add.at(out, key, g)
    return (out,)


_register("take", _take_fwd, _take_vjp)


def _concat_fwd(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis)


def _concat_vjp(g, o, *arrays, axis=0):
    cuts = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return tuple(np.split(g, cuts, axis=axis))


_register("concat", _concat_fwd, _concat_vjp)
_register(
    "reshape",
    lambda a, shape=None: np.reshape(a, shape),
    lambda g, o, a, shape=None: (np.reshape(g, a.shape),),
)


def add(a, b) -> Tensor:
    return _apply("add", a, b)


def sub(a, b) -> Tensor:
    return _apply("sub", a, b)


def mul(a, b) -> Tensor:
    return _apply("mul", a, b)


def div(a, b) -> Tensor:
    return _apply("div", a, b)


def neg(a) -> Tensor:
    return _apply("neg", a)


def matmul(a, b) -> Tensor:
    return _apply("matmul", a, b)


def exp(a) -> Tensor:
    return _apply("exp", a)


def log(a) -> Tensor:
    return _apply("log", a)


def tanh(a) -> Tensor:
    return _apply("tanh", a)


def softplus(a) -> Tensor:
    return _apply("softplus", a)


def sigmoid(a) -> Tensor:
    return _apply("sigmoid", a)


def square(a) -> Tensor:
    return _apply("square", a)


def sqrt(a) -> Tensor:
    return _apply("sqrt", a)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return _apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False) -> Tensor:
    return _apply("mean", a, axis=axis, keepdims=keepdims)


def take(a, key) -> Tensor:
    """Index/slice ``a[key]`` (basic or integer-array indexing)."""
    return _apply("take", a, key=key)


def concat(tensors, axis=0) -> Tensor:
    return _apply("concat", *tensors, axis=axis)


def reshape(a, shape) -> Tensor:
    return _apply("reshape", a, shape=tuple(shape))


def value_and_grad(loss_fn, params: Mapping[str, np.ndarray], check_nan: bool = True):
    """Evaluate ``loss_fn(tensors)`` and its gradient w.r.t. every entry of ``params``.

    ``loss_fn`` receives a dict of :class:`Tensor` keyed like ``params`` and
    must return a scalar tensor. Returns ``(loss_value, grads_dict)``.
    """
    with Tape(check_nan=check_nan) as tape:
        watched = {k: tape.watch(Tensor(v)) for k, v in params.items()}
        loss = loss_fn(watched)
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ContractError(
                f"loss_fn must return a scalar Tensor, got {getattr(loss, 'shape', type(loss).__name__)}"
            )
    keys = list(watched)
    grads = tape.gradient(loss, [watched[k] for k in keys])
    return float(loss.data.reshape(-1)[0]), dict(zip(keys, grads))


def grad(loss_fn, params: Mapping[str, np.ndarray], check_nan: bool = True) -> dict[str, np.ndarray]:
    return value_and_grad(loss_fn, params, check_nan)[1]
