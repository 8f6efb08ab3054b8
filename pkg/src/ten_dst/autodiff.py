"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` holds a value, an accumulated gradient and a record of the
operation that produced it. Gradients are obtained with :func:`backward` on a
scalar root; leaves must be cleared with :func:`zero_grad` between calls.

Besides elementwise/linear primitives there are two fused operations,
:func:`gru_sequence` and :func:`bp_chain`, whose forward and backward passes
run in :mod:`ten_dst.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "name",
                 "requires_grad", "_dirty")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward_fn: Callable | None = None,
                 op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.requires_grad = requires_grad
        self._dirty = False

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def parameter(value, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(value, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.parents = parents if req else ()
    out.backward_fn = backward_fn if req else None
    out.op = op
    out.name = None
    out.requires_grad = req
    out._dirty = False
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_check(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), bw, "sub")


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("hadamard", a, b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), bw, "hadamard")


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        return (g * c,)

    return _node(a.value * c, (a,), bw, "scale")


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (numpy ``@`` semantics)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim not in (1, 2) or b.value.ndim not in (1, 2) \
            or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), bw, "matmul")


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def bw(g):
        return (g * s * (1.0 - s),)

    return _node(s, (a,), bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)

    def bw(g):
        return (g * (1.0 - t * t),)

    return _node(t, (a,), bw, "tanh")


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    if a.value.ndim == 0 or a.shape[-1] == 0:
        raise ValueError(f"softmax: needs a non-empty last axis, got shape {a.shape}")
    e = np.exp(a.value - a.value.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), bw, "softmax")


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the input is clamped from below first."""
    x = a.value if floor is None else np.maximum(a.value, floor)

    def bw(g):
        d = g / x
        if floor is not None:
            d = np.where(a.value >= floor, d, 0.0)
        return (d,)

    return _node(np.log(x), (a,), bw, "log")


def concat(items: Sequence, axis: int = 0) -> Tensor:
    items = [_as_tensor(x) for x in items]
    try:
        value = np.concatenate([x.value for x in items], axis=axis)
    except ValueError:
        raise ValueError(
            f"concat: incompatible shapes {[x.shape for x in items]} on axis {axis}"
        ) from None
    bounds = np.cumsum([x.shape[axis] for x in items])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(value, tuple(items), bw, "concat")


def stack(items: Sequence) -> Tensor:
    items = [_as_tensor(x) for x in items]
    shapes = {x.shape for x in items}
    if len(shapes) != 1:
        raise ValueError(f"stack: mismatched shapes {[x.shape for x in items]}")

    def bw(g):
        return tuple(g[i] for i in range(len(items)))

    return _node(np.stack([x.value for x in items]), tuple(items), bw, "stack")


def take(a: Tensor, index) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in backward."""
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.value[index], (a,), bw, "take")


def flip(a: Tensor) -> Tensor:
    def bw(g):
        return (g[::-1],)

    return _node(a.value[::-1], (a,), bw, "flip")


def total(a: Tensor) -> Tensor:
    def bw(g):
        return (np.full(a.shape, g),)

    return _node(np.asarray(a.value.sum()), (a,), bw, "sum")


def scale_sum(weights: Tensor, rows: Tensor) -> Tensor:
    """Weighted row sum ``sum_i weights[i] * rows[i]``."""
    if weights.value.ndim != 1 or rows.value.ndim != 2 \
            or weights.shape[0] != rows.shape[0]:
        raise ValueError(
            f"scale_sum: incompatible shapes {weights.shape} and {rows.shape}")
    w, r = weights.value, rows.value

    def bw(g):
        return r @ g, np.outer(w, g)

    return _node(w @ r, (weights, rows), bw, "scale_sum")


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "hadamard": hadamard,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "concat": lambda *xs: concat(xs),
    "log": log,
    "scale_sum": scale_sum,
}


def tensor_op(kind: str, *inputs) -> Tensor:
    """Apply a primitive by name."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------- GRU

@dataclass
class GRUParams:
    """Gate weights stacked as reset, update, candidate."""

    Wx: Tensor
    Wh: Tensor
    bx: Tensor
    bh: Tensor

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[1]

    @property
    def input_size(self) -> int:
        return self.Wx.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"Wx": self.Wx, "Wh": self.Wh, "bx": self.bx, "bh": self.bh}

    @classmethod
    def init(cls, prefix: str, input_size: int, hidden_size: int,
             rng: np.random.Generator, init_range: float = 0.08) -> "GRUParams":
        H, D, a = hidden_size, input_size, init_range
        return cls(
            Wx=parameter(rng.uniform(-a, a, (3 * H, D)), f"{prefix}.Wx"),
            Wh=parameter(rng.uniform(-a, a, (3 * H, H)), f"{prefix}.Wh"),
            bx=parameter(np.zeros(3 * H), f"{prefix}.bx"),
            bh=parameter(np.zeros(3 * H), f"{prefix}.bh"),
        )


def gru_cell(h_prev, x, p: GRUParams) -> Tensor:
    """One GRU step composed from primitives."""
    h_prev, x = _as_tensor(h_prev), _as_tensor(x)
    H = p.hidden_size
    if h_prev.shape != (H,) or x.shape != (p.input_size,):
        raise ValueError(
            f"gru_cell: h_prev {h_prev.shape} / x {x.shape} do not match "
            f"params (H={H}, D={p.input_size})")
    ax = add(matmul(p.Wx, x), p.bx)
    ah = add(matmul(p.Wh, h_prev), p.bh)
    r = sigmoid(add(take(ax, slice(0, H)), take(ah, slice(0, H))))
    z = sigmoid(add(take(ax, slice(H, 2 * H)), take(ah, slice(H, 2 * H))))
    n = tanh(add(take(ax, slice(2 * H, 3 * H)), hadamard(r, take(ah, slice(2 * H, 3 * H)))))
    return add(n, hadamard(z, sub(h_prev, n)))


def gru_sequence(X: Tensor, p: GRUParams, h0: Tensor | None = None,
                 reverse: bool = False) -> Tensor:
    """All hidden states of a GRU run over the rows of ``X`` (fused kernel).

    With ``reverse`` the sequence is consumed last-to-first; row ``i`` of the
    output is still the state at position ``i``.
    """
    H = p.hidden_size
    if X.value.ndim != 2 or X.shape[1] != p.input_size or X.shape[0] == 0:
        raise ValueError(
            f"gru_sequence: input shape {X.shape} does not match input size {p.input_size}")
    if h0 is None:
        h0 = constant(np.zeros(H))
    elif h0.shape != (H,):
        raise ValueError(f"gru_sequence: h0 shape {h0.shape} != ({H},)")
    xv = X.value[::-1] if reverse else X.value
    xv = np.ascontiguousarray(xv)
    Wx, Wh = p.Wx.value, p.Wh.value
    cache = kernels.gru_forward(xv, h0.value, Wx, Wh, p.bx.value, p.bh.value)
    Hs = cache[0]

    def bw(g):
        g = np.ascontiguousarray(g[::-1] if reverse else g)
        dX, dh0, dWx, dWh, dbx, dbh = kernels.gru_backward(g, xv, h0.value, Wx, Wh, *cache)
        if reverse:
            dX = dX[::-1]
        return dX, dh0, dWx, dWh, dbx, dbh

    out = Hs[::-1] if reverse else Hs
    return _node(out, (X, h0, p.Wx, p.Wh, p.bx, p.bh), bw, "gru_sequence")


# ---------------------------------------------------------------- chain BP

def bp_chain(alphas: Tensor) -> Tensor:
    """State marginals of the ◁ aggregation chain for turn distributions ``alphas``.

    ``alphas`` is ``(T, V)`` with column 0 the ``unknown`` value; the chain
    starts from a point mass on ``unknown``.
    """
    if alphas.value.ndim != 2:
        raise ValueError(f"bp_chain: expected (T, V) input, got {alphas.shape}")
    A = np.ascontiguousarray(alphas.value)
    Q = kernels.bp_chain_forward(A)

    def bw(g):
        return (kernels.bp_chain_backward(np.ascontiguousarray(g), A, Q),)

    return _node(Q, (alphas,), bw, "bp_chain")


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    Returns a map leaf -> gradient. Raises if ``root`` is not scalar or if a
    reachable leaf still holds gradients from a previous call.
    """
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topological(root)
    leaves = [n for n in order if n.is_leaf]
    for leaf in leaves:
        if leaf._dirty:
            raise RuntimeError(
                f"backward: leaf {leaf.name or leaf!r} holds stale gradients; call zero_grad first")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is not None:
                node.grad = node.grad + g
            node._dirty = True
            continue
        if g is None:
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {leaf: leaf.grad for leaf in leaves}


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)
        p._dirty = False


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> None:
    """Update ``params`` in place with one bias-corrected Adam step."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter "
                             f"shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
