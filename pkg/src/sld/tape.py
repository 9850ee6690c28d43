"""A small reverse-mode recorder over numpy arrays.

Operations are recorded on a :class:`GradientTape` in execution order, so a
reverse sweep over the record is a valid topological order. A tape can be
swept once; the per-node closures capture whatever forward values they need.

    tape = GradientTape()
    z = tape.variable(logits)
    loss = mean(cross_entropy_rows(z, targets))
    (dz,) = backward(loss, tape)
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .numeric import PROB_FLOOR, ShapeError


class TapeError(RuntimeError):
    pass


class Node:
    __slots__ = ("tape", "value", "requires_grad", "grad", "parents", "backward_fn")

    def __init__(self, tape, value, requires_grad, parents=(), backward_fn=None):
        self.tape = tape
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Node(shape={self.shape}, requires_grad={self.requires_grad})"


class GradientTape:
    def __init__(self):
        self._nodes: list[Node] = []
        self._leaves: list[Node] = []
        self.consumed = False

    def variable(self, value) -> Node:
        node = Node(self, np.asarray(value, dtype=np.float64), True)
        self._leaves.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), False)

    @property
    def leaves(self) -> list[Node]:
        return list(self._leaves)

    def record(self, value, parents: Sequence[Node], backward_fn: Callable) -> Node:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        requires = any(p.requires_grad for p in parents)
        node = Node(self, value, requires, tuple(parents), backward_fn if requires else None)
        if requires:
            self._nodes.append(node)
        return node

    def backward(self, loss: Node) -> None:
        if self.consumed:
            raise TapeError("backward() called twice on the same tape")
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if np.ndim(loss.value) != 0:
            raise ShapeError("backward() needs a scalar loss")
        self.consumed = True
        if not loss.requires_grad:
            return
        loss.grad = np.float64(1.0)
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def backward(loss: Node, tape: GradientTape) -> list[np.ndarray]:
    """Sweep ``tape`` from ``loss``; return gradients of every leaf in creation order.

    Leaves the loss does not depend on get an exact zero gradient.
    """
    tape.backward(loss)
    return [
        np.zeros_like(leaf.value) if leaf.grad is None else np.asarray(leaf.grad, dtype=np.float64)
        for leaf in tape.leaves
    ]


def _tape_of(*nodes) -> GradientTape:
    for n in nodes:
        if isinstance(n, Node):
            return n.tape
    raise TapeError("no node argument")


def _lift(tape: GradientTape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


# --------------------------------------------------------------------------
# elementwise / linear algebra
# --------------------------------------------------------------------------


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if np.shape(a.value) != np.shape(b.value):
        raise ShapeError(f"add: {np.shape(a.value)} vs {np.shape(b.value)}")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def add_n(nodes: Sequence[Node]) -> Node:
    """Left-to-right sum; the accumulation order is part of the result."""
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return total


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add_bias(x: Node, b: Node) -> Node:
    tape = _tape_of(x, b)
    x, b = _lift(tape, x), _lift(tape, b)
    return tape.record(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)))


def relu(x: Node) -> Node:
    mask = x.value > 0
    return x.tape.record(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def reshape(x: Node, shape) -> Node:
    old = np.shape(x.value)
    return x.tape.record(np.reshape(x.value, shape), (x,), lambda g: (np.reshape(g, old),))


def mean(x: Node) -> Node:
    n = np.size(x.value)
    shp = np.shape(x.value)
    return x.tape.record(np.float64(np.sum(x.value) / n), (x,), lambda g: (np.full(shp, g / n),))


def total(x: Node) -> Node:
    shp = np.shape(x.value)
    return x.tape.record(np.float64(np.sum(x.value)), (x,), lambda g: (np.full(shp, g),))


# --------------------------------------------------------------------------
# probability ops
# --------------------------------------------------------------------------


def softmax(z: Node, T: float = 1.0) -> Node:
    s = z.value / T
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return ((g - (g * p).sum(axis=-1, keepdims=True)) * p / T,)

    return z.tape.record(p, (z,), bw)


def log_softmax(z: Node, T: float = 1.0) -> Node:
    s = z.value / T
    s = s - s.max(axis=-1, keepdims=True)
    out = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def bw(g):
        return ((g - p * g.sum(axis=-1, keepdims=True)) / T,)

    return z.tape.record(out, (z,), bw)


def permute_columns(z: Node, index: np.ndarray) -> Node:
    """``out[i, j] = z[i, index[i, j]]`` with ``index`` a per-row permutation."""
    index = np.asarray(index, dtype=np.int64)
    out = np.take_along_axis(z.value, index, axis=-1)

    def bw(g):
        gz = np.zeros_like(g)
        np.put_along_axis(gz, index, g, axis=-1)
        return (gz,)

    return z.tape.record(out, (z,), bw)


def kl_rows(p_ref, p_model) -> Node:
    """Per-row ``KL(p_ref || p_model)`` with the same floor/zero conventions as
    :func:`sld.numeric.kl_divergence`."""
    tape = _tape_of(p_ref, p_model)
    p_ref, p_model = _lift(tape, p_ref), _lift(tape, p_model)
    p, q = p_ref.value, p_model.value
    if p.shape != q.shape:
        raise ShapeError(f"kl: {p.shape} vs {q.shape}")
    pos = p > 0
    log_ratio = np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))
    value = np.where(pos, p * log_ratio, 0.0).sum(axis=-1)
    floored = q <= PROB_FLOOR

    def bw(g):
        g = np.asarray(g)[..., None]
        gp = np.where(pos, log_ratio + (p > PROB_FLOOR), 0.0) * g
        gq = np.where(floored, 0.0, -p / np.where(floored, 1.0, q)) * g
        return gp, gq

    return tape.record(value, (p_ref, p_model), bw)


def cross_entropy_rows(z: Node, targets: np.ndarray) -> Node:
    targets = np.asarray(targets, dtype=np.int64)
    s = z.value - z.value.max(axis=-1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=-1, keepdims=True))
    rows = np.arange(len(targets))
    value = -logp[rows, targets]

    def bw(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * np.asarray(g)[:, None],)

    return z.tape.record(value, (z,), bw)


# --------------------------------------------------------------------------
# convolution (small_cnn only)
# --------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    cols = np.empty((B, C, k, k, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + Ho, j : j + Wo]
    # (B*Ho*Wo, C*k*k)
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(B * Ho * Wo, C * k * k)


def _col2im(cols: np.ndarray, shape, k: int, pad: int) -> np.ndarray:
    B, C, H, W = shape
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    cols = cols.reshape(B, Ho, Wo, C, k, k).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + Ho, j : j + Wo] += cols[:, :, i, j]
    return xp[:, :, pad : pad + H, pad : pad + W]


def conv2d(x: Node, w: Node, b: Node, pad: int = 1) -> Node:
    """Stride-1 convolution. x: (B, Cin, H, W); w: (Cout, Cin, k, k); b: (Cout,)."""
    tape = _tape_of(x, w, b)
    x, w, b = _lift(tape, x), _lift(tape, w), _lift(tape, b)
    B, Cin, H, W = x.value.shape
    Cout, _, k, _ = w.value.shape
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    cols = _im2col(x.value, k, pad)
    wmat = w.value.reshape(Cout, -1)
    out = (cols @ wmat.T + b.value).reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, Cout)
        gw = (gm.T @ cols).reshape(w.value.shape)
        gb = gm.sum(axis=0)
        gx = _col2im(gm @ wmat, x.value.shape, k, pad)
        return gx, gw, gb

    return tape.record(out, (x, w, b), bw)


def avg_pool2(x: Node) -> Node:
    B, C, H, W = x.value.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {H}x{W}")
    out = x.value.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return x.tape.record(out, (x,), bw)
