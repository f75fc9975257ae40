"""Tape-based reverse-mode differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Tape`; outside a
tape they only compute values, which keeps inference cheap. Spike generation
uses the triangular surrogate derivative in the backward pass, every other op
its exact local derivative.

    with Tape() as tape:
        loss = (w @ x).sum()
    grads = tape.backward(loss, [w])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import conv as K
from .neurons import SurrogateSpec, surrogate_grad
from .tensor import DomainError

_state = threading.local()


class TapeError(RuntimeError):
    """The recorded graph cannot be differentiated (cycle, non-scalar loss)."""


def _stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


class Tensor:
    """A value node. Leaves with ``requires_grad`` are trainable parameters."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.grad: np.ndarray | None = None
        # set on outputs of spike(); residual adds refuse such tensors
        self.spiking = False

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __matmul__ = lambda a, b: matmul(a, b)
    __neg__ = lambda a: mul(a, -1.0)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def parameter(data, name: str | None = None) -> Tensor:
    """Trainable leaf owning a private, writable copy of ``data``."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records differentiable operations executed inside its ``with`` block."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def topological_order(self, loss: Tensor) -> list[Tensor]:
        """Nodes reachable from ``loss``, inputs before outputs; raises on cycles."""
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack = [(loss, iter(loss.parents))]
        state[id(loss)] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                state[id(node)] = 2
                order.append(node)
                continue
            if not nxt.requires_grad:
                continue
            mark = state.get(id(nxt))
            if mark == 1:
                raise TapeError(f"cycle through {nxt!r}")
            if mark is None:
                state[id(nxt)] = 1
                stack.append((nxt, iter(nxt.parents)))
        return order

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None, visit: Callable | None = None) -> dict:
        """Propagate d(loss) back through the recorded ops.

        Returns a ``{param: gradient}`` dict. Parameters the loss does not depend
        on get zero gradients. ``visit`` (if given) is called on each op node in
        the order it is processed.
        """
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        order = self.topological_order(loss) if loss.requires_grad else [loss]
        leaves = {}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.backward_fn is None:
                if node.requires_grad:
                    leaves[id(node)] = (node, g)
                continue
            if visit is not None:
                visit(node)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        out = {}
        targets = list(params) if params is not None else [n for n, _ in leaves.values()]
        for p in targets:
            g = leaves.get(id(p), (p, None))[1]
            p.grad = np.zeros_like(p.data) if g is None else np.asarray(g).reshape(p.data.shape)
            out[p] = p.grad
        return out


def _record(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    tapes = _stack()
    if tapes and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
        tapes[-1].nodes.append(out)
    return out


def no_grad_active() -> bool:
    return not _stack()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )
    # spike * spike is a mask select and stays binary
    out.spiking = a.spiking and b.spiking
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data / b.data,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / b.data**2, b.shape)),
        "div",
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), back, "matmul")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size // np.asarray(a.data.sum(axis=axis, keepdims=keepdims)).size
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")
    out.spiking = a.spiking
    return out


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    out = _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")
    out.spiking = a.spiking
    return out


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        if isinstance(idx, (int, np.integer, slice)):
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    out = _record(a.data[idx], (a,), back, "index")
    out.spiking = a.spiking
    return out


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    n = len(ts)
    out = _record(
        np.stack([t.data for t in ts], axis=axis),
        tuple(ts),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )
    out.spiking = all(t.spiking for t in ts)
    return out


def residual_add(u, o) -> Tensor:
    """Membrane-potential shortcut ``u + o``; both operands must be real-valued."""
    u, o = as_tensor(u), as_tensor(o)
    if u.spiking or o.spiking:
        raise TypeError("residual connections add membrane potentials, not spike tensors")
    return add(u, o)


def spike(u, v_th, spec: SurrogateSpec = SurrogateSpec()) -> Tensor:
    """Heaviside firing ``u >= v_th`` with the triangular surrogate as its derivative."""
    u, v = as_tensor(u), as_tensor(v_th)

    def back(g):
        sg = g * surrogate_grad(u.data, v.data, spec)
        return _unbroadcast(sg, u.shape), _unbroadcast(-sg, v.shape)

    out = _record((u.data >= v.data).astype(np.float64), (u, v), back, "spike")
    out.spiking = True
    return out


def relaxed_spike(u, v_th, spec: SurrogateSpec = SurrogateSpec()) -> Tensor:
    """Smooth stand-in for :func:`spike`: the antiderivative of its surrogate.

    Its exact derivative is the surrogate, so finite differences can check
    spiking graphs end to end.
    """
    u, v = as_tensor(u), as_tensor(v_th)
    w = spec.width
    d = np.clip(u.data - v.data, -w, w)
    val = np.where(d <= 0, (d + w) ** 2, 2 * w * w - (w - d) ** 2) / (2 * w * w)

    def back(g):
        sg = g * surrogate_grad(u.data, v.data, spec)
        return _unbroadcast(sg, u.shape), _unbroadcast(-sg, v.shape)

    return _record(val, (u, v), back, "relaxed_spike")


def conv2d(x, w, stride: int = 1, dilation: int = 1, padding: int = 0) -> Tensor:
    x, w = as_tensor(x), as_tensor(w)
    p = K.ConvParams(w.data, stride, dilation, padding)

    def back(g):
        return K.conv2d_backward(x.data, p, g)

    return _record(K.conv2d(x.data, p), (x, w), back, "conv2d")


def batchnorm(x, gamma, beta, bn: K.BNParams, mode: str = "infer") -> Tensor:
    """BN over all axes but 1. ``bn`` supplies eps and the running statistics.

    In train mode the batch mean and variance are part of the graph.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu, var = K.bn_statistics(x.data, bn, mode)
    nd = x.ndim
    inv_std = 1.0 / np.sqrt(K.bcast_channel(np.asarray(var), nd) + bn.eps)
    x_hat = (x.data - K.bcast_channel(np.asarray(mu), nd)) * inv_std
    gm = K.bcast_channel(gamma.data, nd)
    axes = (0,) + tuple(range(2, nd))
    m = x.data.size // x.shape[1]

    def back(g):
        dgamma = (g * x_hat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        if mode == "train":
            dx = (gm * inv_std / m) * (
                m * g - K.bcast_channel(dbeta, nd) - x_hat * K.bcast_channel(dgamma, nd)
            )
        else:
            dx = g * gm * inv_std
        return dx, dgamma, dbeta

    return _record(gm * x_hat + K.bcast_channel(beta.data, nd), (x, gamma, beta), back, "batchnorm")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of ``[B, C]`` logits against integer labels."""
    z = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    b = z.shape[0]
    loss = -log_p[np.arange(b), labels].mean()

    def back(g):
        d = np.exp(log_p)
        d[np.arange(b), labels] -= 1.0
        return (g * d / b,)

    return _record(np.asarray(loss), (z,), back, "softmax_xent")


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest ``|g_fd - g_tape| / max(1, |g_fd|)`` over every parameter element.

    ``loss_fn`` must rebuild the loss from the current parameter values on
    each call. Finite differences are central with step ``h``.
    """
    if not h > 0:
        raise DomainError("finite-difference step must be positive")
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss, params)
    worst = 0.0
    for p in params:
        g_tape = grads[p]
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(loss_fn().data)
            flat[i] = orig - h
            f_minus = float(loss_fn().data)
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2 * h)
            worst = max(worst, abs(g_fd - g_tape.reshape(-1)[i]) / max(1.0, abs(g_fd)))
    return worst
