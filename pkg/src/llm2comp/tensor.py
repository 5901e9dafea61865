"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Operations record onto the innermost active :class:`Graph`. Outside any graph
(or inside :func:`no_grad`) nothing is recorded, which keeps frozen-teacher and
evaluation forwards cheap.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

LOG_CLAMP = 1e-12


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    out: "Tensor"
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Graph:
    """Ordered record of differentiable operations for one step."""

    nodes: list[Node] = field(default_factory=list)

    def reset(self) -> None:
        self.nodes.clear()

    def __enter__(self) -> "Graph":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STACK.pop()


_STACK: list[Graph | None] = []


@contextmanager
def no_grad() -> Iterator[None]:
    _STACK.append(None)
    try:
        yield
    finally:
        _STACK.pop()


def _current() -> Graph | None:
    return _STACK[-1] if _STACK else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor with dims {self.dims}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(dims={self.dims}{tag})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{op} produced non-finite values")
    out = Tensor(data)
    graph = _current()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.nodes.append(Node(op, inputs, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0):
        raise DomainError("log of non-positive value")
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    ad = a.data
    keep = ad >= floor
    return _emit("clamp_min", np.where(keep, ad, floor), (a,), lambda g: (g * keep,))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = 1.0 / (1.0 + np.exp(-x))
    return _emit("silu", x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask is drawn from ``rng`` even when ``a`` is constant."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions / shape


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    count = a.data.size if axis is None else int(np.prod([shape[i] for i in np.atleast_1d(axis)]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return _emit("mean", np.mean(a.data, axis=axis, keepdims=keepdims), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def take(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take", a.data[index], (a,), back)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _emit("concat", np.concatenate([p.data for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    return _emit("stack", np.stack([p.data for p in parts], axis=axis), parts,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.dims} x {b.dims}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _emit("matmul", ad @ bd, (a, b), back)


def linear(x: Tensor, weight: Tensor) -> Tensor:
    """``x @ weight.T`` with ``weight`` stored as [out, in]."""
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} vs weight {weight.dims}")
    xd, wd = x.data, weight.data

    def back(g):
        gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        return g @ wd, gw

    return _emit("linear", xd @ wd.T, (x, weight), back)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    xd, gd = x.data, gain.data
    d = xd.shape[-1]
    r = 1.0 / np.sqrt(np.mean(xd * xd, axis=-1, keepdims=True) + eps)
    normed = xd * r

    def back(g):
        gg = g * gd
        gx = r * gg - xd * (r ** 3) * np.sum(xd * gg, axis=-1, keepdims=True) / d
        return gx, _unbroadcast(g * normed, gd.shape)

    return _emit("rms_norm", normed * gd, (x, gain), back)


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate channel halves of ``x[..., seq, d_head]`` by fixed position angles."""
    half = x.shape[-1] // 2

    def rot(v):
        return np.concatenate([-v[..., half:], v[..., :half]], axis=-1)

    def rot_t(v):
        return np.concatenate([v[..., half:], -v[..., :half]], axis=-1)

    xd = x.data
    return _emit("rope", xd * cos + rot(xd) * sin, (x,),
                 lambda g: (g * cos + rot_t(g * sin),))


# ---------------------------------------------------------------- probability


def _masked(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return x if mask is None else np.where(mask, x, -np.inf)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax; ``mask`` (broadcastable bool, True = keep) zeroes excluded entries."""
    z = _masked(x.data, mask)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _emit("softmax", out, (x,), back)


def log_softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    z = _masked(x.data, mask)
    z = z - np.max(z, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    if mask is not None:
        out = np.where(mask, out, 0.0)

    def back(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _emit("log_softmax", out, (x,), back)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """−log softmax(logits)[target]; 2-D logits give one loss per row."""
    v = logits.shape[-1]
    t = np.asarray(target, dtype=np.int64)
    if np.any(t < 0) or np.any(t >= v):
        raise IndexError(f"target {target} outside vocabulary of {v}")
    xd = logits.data
    z = xd - np.max(xd, axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    logp = z - lse
    if xd.ndim == 1:
        picked = -logp[t]
    else:
        if t.shape != xd.shape[:-1]:
            raise ShapeError(f"targets {t.shape} vs logits {xd.shape}")
        picked = -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    ceiling = -np.log(LOG_CLAMP)
    loss = np.clip(picked, 0.0, ceiling)
    live = picked < ceiling

    def back(g):
        g = np.where(live, g, 0.0)
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        if xd.ndim == 1:
            onehot[t] = 1.0
        else:
            np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
        return ((grad - onehot) * np.expand_dims(g, -1),)

    return _emit("cross_entropy", loss, (logits,), back)


def kl_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Σ p·log(p/q) along the last axis, with 0·log 0 = 0 and q clamped at 1e-12."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise ShapeError(f"kl_divergence dims differ: {p.dims} vs {q.dims}")
    pd, qd = p.data, q.data
    for name, arr in (("p", pd), ("q", qd)):
        if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > 1e-9):
            raise DomainError(f"{name} is not a probability vector")
    qc = np.maximum(qd, LOG_CLAMP)
    pos = pd > 0
    logp = np.log(np.where(pos, pd, 1.0))
    terms = np.where(pos, pd * (logp - np.log(qc)), 0.0)
    out = np.maximum(np.sum(terms, axis=-1), 0.0)

    def back(g):
        g = np.expand_dims(g, -1)
        gp = np.where(pos, logp - np.log(qc) + 1.0, 0.0) * g
        gq = np.where(qd >= LOG_CLAMP, -pd / qc, 0.0) * g
        return gp, gq

    return _emit("kl_divergence", out, (p, q), back)


# ---------------------------------------------------------------- differentiation


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate ∂loss/∂leaf into ``.grad`` of every tensor reached from ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got dims {loss.dims}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in reversed(graph.nodes):
        g = node.out.grad
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            inp.grad = gi if inp.grad is None else inp.grad + gi


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences.

    ``x`` is perturbed in place and restored, so it may be a model parameter
    that ``f`` closes over.
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    with Graph() as graph:
        loss = f(x)
        backward(graph, loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.requires_grad = was
    x.grad = None

    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    numeric = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = f(x).item()
            flat[i] = keep - eps
            down = f(x).item()
            flat[i] = keep
            numeric[i] = (up - down) / (2.0 * eps)
    a = analytic.reshape(-1)
    return float(np.max(np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + 1e-8)))


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
