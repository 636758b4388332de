"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of operations needed by MLP score networks and affine
coupling flows are provided. Broadcasting is deliberately absent except for
the explicit leading-axis ``broadcast`` op, so every backward rule below can
be checked by eye.

Usage::

    with Tape() as tape:
        w = tape.watch(Tensor(w0))
        loss = ad.sum(ad.square(ad.matmul(x, w)))
    (gw,) = tape.gradient(loss, [w])
"""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError, UsageError

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "dinof_active_tape", default=None
)

OP_KINDS = (
    "add", "sub", "mul", "matmul", "affine", "tanh", "softplus", "exp", "log",
    "sum", "mean", "square", "concat", "split", "scale", "broadcast",
)


class Tensor:
    """An n-dimensional float64 array, optionally recorded on a tape."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data, *, _tape: "Tape | None" = None, _node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self._tape = _tape
        self._node = _node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def node_id(self) -> int | None:
        return self._node

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f", node={self._node}" if self._node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, float(value)))


@dataclass
class _Node:
    kind: str
    inputs: tuple[int | None, ...]
    shape: tuple[int, ...]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None


@dataclass
class Tape:
    """Append-only record of operations plus the gradients of the last backward."""

    nodes: list[_Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._tokens.pop())
        return False

    def watch(self, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a differentiable leaf (in place) and return it."""
        if tensor._tape is self:
            return tensor
        tensor._tape = self
        tensor._node = len(self.nodes)
        self.nodes.append(_Node("leaf", (), tensor.shape, None))
        return tensor

    def reset(self):
        self.grads.clear()

    def _input_id(self, t: Tensor) -> int | None:
        return t._node if t._tape is self else None

    def _record(self, kind, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
        ids = tuple(self._input_id(t) for t in inputs)
        if all(i is None for i in ids):
            return Tensor(out)
        node = len(self.nodes)
        self.nodes.append(_Node(kind, ids, out.shape, vjp))
        return Tensor(out, _tape=self, _node=node)

    def backward(self, root: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(root)/d(node) into ``self.grads`` for every reachable node."""
        if root._tape is not self:
            raise UsageError("backward root is not recorded on this tape")
        if root.data.size != 1:
            raise UsageError(f"backward root must be scalar, got shape {root.shape}")
        local: dict[int, np.ndarray] = {root._node: np.ones(root.shape)}
        for idx in range(root._node, -1, -1):
            g = local.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.vjp is None:
                continue
            for in_id, in_g in zip(node.inputs, node.vjp(g)):
                if in_id is None or in_g is None:
                    continue
                prev = local.get(in_id)
                local[in_id] = in_g if prev is None else prev + in_g
        for idx, g in local.items():
            prev = self.grads.get(idx)
            self.grads[idx] = g if prev is None else prev + g
        return self.grads

    def gradient(self, root: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of ``root`` w.r.t. ``sources``; zeros where unreachable.

        A ``root`` that was never recorded (a constant) yields all-zero gradients.
        """
        self.reset()
        if root._tape is self:
            self.backward(root)
        out = []
        for s in sources:
            g = self.grads.get(s._node) if s._tape is self else None
            out.append(np.zeros(s.shape) if g is None else g)
        return out


def _tape_for(*inputs: Tensor) -> Tape | None:
    tape = _active_tape.get()
    if tape is None:
        return None
    for t in inputs:
        if t._tape is tape:
            return tape
    return None


def _emit(kind, inputs, out, vjp) -> Tensor:
    tape = _tape_for(*inputs)
    if tape is None:
        return Tensor(out)
    return tape._record(kind, inputs, out, vjp)


def _same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def _tracked(t: Tensor) -> bool:
    tape = _active_tape.get()
    return tape is not None and t._tape is tape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    need_a, need_b = _tracked(a), _tracked(b)
    return _emit(
        "matmul", (a, b), ad @ bd,
        lambda g: (g @ bd.T if need_a else None, ad.T @ g if need_b else None),
    )


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` of shape [out] shared across the batch axis."""
    if (
        x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1
        or x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]
    ):
        raise ShapeError("affine", x.shape, w.shape, b.shape)
    xd, wd = x.data, w.data
    need_x = _tracked(x)
    return _emit(
        "affine", (x, w, b), xd @ wd + b.data,
        lambda g: (g @ wd.T if need_x else None, xd.T @ g, g.sum(axis=0)),
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    y = np.logaddexp(0.0, xd)
    return _emit("softplus", (x,), y, lambda g: (g * _sigmoid(xd),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", (x,), y, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError(f"log of non-positive value (min {xd.min()!r})")
    return _emit("log", (x,), np.log(xd), lambda g: (g / xd,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _emit("square", (x,), xd * xd, lambda g: (2.0 * g * xd,))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", (x,), x.data * c, lambda g: (g * c,))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _emit("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full(shape, g),))
    ax = axis % x.data.ndim
    return _emit(
        "sum", (x,), x.data.sum(axis=ax),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),),
    )


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        n = x.data.size
        return _emit("mean", (x,), np.asarray(x.data.mean()), lambda g: (np.full(shape, g / n),))
    ax = axis % x.data.ndim
    n = shape[ax]
    return _emit(
        "mean", (x,), x.data.mean(axis=ax),
        lambda g: (np.broadcast_to(np.expand_dims(g / n, ax), shape).copy(),),
    )


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise UsageError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        s0 = tuple(d for i, d in enumerate(tensors[0].shape) if i != ax)
        s1 = tuple(d for i, d in enumerate(t.shape) if i != ax)
        if t.data.ndim != ndim or s0 != s1:
            raise ShapeError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _emit("concat", tuple(tensors), out, lambda g: tuple(np.split(g, cuts, axis=ax)))


def split(x: Tensor, index: int, axis: int = -1) -> tuple[Tensor, Tensor]:
    """Split into ``[..., :index]`` and ``[..., index:]`` along ``axis``."""
    ax = axis % x.data.ndim
    if not 0 <= index <= x.shape[ax]:
        raise ShapeError("split", x.shape, (index,))
    lo, hi = np.split(x.data, [index], axis=ax)
    shape = x.shape

    def pad(g, first):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[ax] = slice(0, index) if first else slice(index, None)
        full[tuple(sl)] = g
        return (full,)

    return (
        _emit("split", (x,), lo, lambda g: pad(g, True)),
        _emit("split", (x,), hi, lambda g: pad(g, False)),
    )


def broadcast(x: Tensor, n: int) -> Tensor:
    """Repeat ``x`` along a new leading axis of length ``n``."""
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return _emit("broadcast", (x,), out, lambda g: (g.sum(axis=0),))


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam", (len(params),), (len(grads),), (len(state.m),))
    step = state.step + 1
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError("adam", p.shape, g.shape)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(step, new_m, new_v)
