"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:func:`backward` on a scalar walks the recorded graph in reverse topological
order.  The graph is rebuilt on every forward pass; nothing persists between
training steps.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_EPS = 1e-12

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _debug() -> bool:
    return getattr(_state, "debug", False)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (target nets, rollouts)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def debug_mode(enabled: bool = True):
    """Check every op output for non-finite values and validate distributions."""
    prev = _debug()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def zero_grad(self) -> None:
        self.grad = None

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
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable leaf tensor; optimizers keep their moment buffers in ``state``."""

    __slots__ = ("state",)

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.state: dict[str, np.ndarray | int] = {}


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _debug() and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite output from op '{op}'")
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))

    return _make(out, (a, b), backward, "div")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def elu(x: Tensor) -> Tensor:
    xd = x.data
    neg = np.expm1(np.minimum(xd, 0.0))
    y = np.where(xd > 0, xd, neg)
    return _make(y, (x,), lambda g: (g * np.where(xd > 0, 1.0, neg + 1.0),), "elu")


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor, eps: float = 0.0) -> Tensor:
    shifted = x.data + eps
    return _make(np.log(shifted), (x,), lambda g: (g / shifted,), "log")


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; contributes nothing to the parents' gradients."""
    out = Tensor(x.data)
    out.op = "stop_gradient"
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- structure


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        a2 = ad if ad.ndim > 1 else ad[None, :]
        b2 = bd if bd.ndim > 1 else bd[:, None]
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(ad.shape)
        gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bd.shape)
        return (ga, gb)

    return _make(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` as one node; ``x`` is (..., in), ``weight`` is (in, out)."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xd.reshape(-1, xd.shape[-1])
        gx = (g @ wd.T) if x.requires_grad else None
        gw = x2.T @ g2
        if bias is None:
            return (gx, gw)
        return (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "linear")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), backward, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, backward, "stack")


def embedding(table: Tensor, index) -> Tensor:
    """Row lookup; the gradient lands only in the rows that were read."""
    idx = np.asarray(index, dtype=np.int64)
    k = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise IndexError(f"embedding index out of range [0, {k}): {idx.min()}..{idx.max()}")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], (table,), backward, "embedding")


# ---------------------------------------------------------------- distributions


def softmax_with_temperature(logits, offset=0.0, temperature: float = 1.0) -> Tensor:
    """``Softmax((logits - offset) / temperature)`` over the last axis."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    logits = as_tensor(logits)
    off = offset.data if isinstance(offset, Tensor) else np.asarray(offset, dtype=np.float64)
    z = (logits.data - off) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((y * (g - (g * y).sum(axis=-1, keepdims=True))) / temperature,)

    return _make(y, (logits,), backward, "softmax")


def cross_entropy(p, q) -> Tensor:
    """``-sum_i p_i log(q_i + 1e-12)`` over the last axis (broadcasting leading axes)."""
    p, q = as_tensor(p), as_tensor(q)
    if _debug():
        for name, t in (("p", p), ("q", q)):
            if np.any(t.data < 0) or np.any(np.abs(t.data.sum(axis=-1) - 1.0) > 1e-6):
                raise ValueError(f"cross_entropy: {name} is not a distribution")
    lq = np.log(q.data + LOG_EPS)
    pd, qd = p.data, q.data
    out = -(pd * lq).sum(axis=-1)

    def backward(g):
        ge = g[..., None]
        gp = _unbroadcast(-ge * lq, pd.shape) if p.requires_grad else None
        gq = _unbroadcast(-ge * pd / (qd + LOG_EPS), qd.shape) if q.requires_grad else None
        return (gp, gq)

    return _make(out, (p, q), backward, "cross_entropy")


# ---------------------------------------------------------------- recurrent


def gru_cell(x: Tensor, h: Tensor, w_x: Tensor, w_h: Tensor, b_x: Tensor, b_h: Tensor) -> Tensor:
    """One GRU step, gates ordered [reset, update, candidate] along the last axis.

    ``h' = (1 - z) * h + z * n`` so a closed update gate keeps the old state.
    """
    x, h = as_tensor(x), as_tensor(h)
    hid = h.shape[-1]
    if w_x.shape != (x.shape[-1], 3 * hid) or w_h.shape != (hid, 3 * hid):
        raise ShapeError(f"gru_cell: input {x.shape} / hidden {h.shape} do not match "
                         f"weights {w_x.shape}, {w_h.shape}")
    xd, hd = x.data, h.data
    ax = xd @ w_x.data + b_x.data
    ah = hd @ w_h.data + b_h.data
    r = _sigmoid(ax[..., :hid] + ah[..., :hid])
    z = _sigmoid(ax[..., hid:2 * hid] + ah[..., hid:2 * hid])
    hn = ah[..., 2 * hid:]
    n = np.tanh(ax[..., 2 * hid:] + r * hn)
    out = (1.0 - z) * hd + z * n

    def backward(g):
        dn = g * z * (1.0 - n * n)
        dz = g * (n - hd) * z * (1.0 - z)
        dr = dn * hn * r * (1.0 - r)
        gx = np.concatenate([dr, dz, dn], axis=-1)
        gh = np.concatenate([dr, dz, dn * r], axis=-1)
        gx2 = gx.reshape(-1, 3 * hid)
        gh2 = gh.reshape(-1, 3 * hid)
        dx = gx @ w_x.data.T if x.requires_grad else None
        dh = (gh @ w_h.data.T + g * (1.0 - z)) if h.requires_grad else None
        return (dx, dh,
                xd.reshape(-1, xd.shape[-1]).T @ gx2,
                hd.reshape(-1, hid).T @ gh2,
                gx2.sum(axis=0), gh2.sum(axis=0))

    return _make(out, (x, h, w_x, w_h, b_x, b_h), backward, "gru_cell")


# ---------------------------------------------------------------- backward


@dataclass
class Tape:
    """Nodes reachable from a root in topological order (parents first)."""

    nodes: list[Tensor] = field(default_factory=list)

    def index(self, node: Tensor) -> int:
        for i, n in enumerate(self.nodes):
            if n is node:
                return i
        raise KeyError(node)


def _topo(root: Tensor) -> list[Tensor]:
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


def backward(root: Tensor, accumulate: bool = True) -> Tape:
    """Populate ``.grad`` on every node that ``root`` depends on.

    Leaf gradients accumulate across calls when ``accumulate`` is true, the way
    parameter gradients do between ``zero_grad`` calls.  Intermediate node
    gradients are always fresh.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    tape = Tape(_topo(root))
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.data)
        if node._backward is None:
            if accumulate and node.grad is not None:
                node.grad = node.grad + g
            else:
                node.grad = np.array(g, dtype=np.float64)
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if _debug():
        for node in tape.nodes:
            if not np.all(np.isfinite(node.grad)):
                raise NonFiniteError(f"non-finite gradient at op '{node.op}'")
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
