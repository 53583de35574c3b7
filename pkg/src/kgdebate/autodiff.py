"""Reverse-mode autodiff over an explicitly recorded op tape.

Everything is float64. The op set is exactly what the debate models need:
embedding gathers, dense affine maps, pointwise nonlinearities, an LSTM
cell, masked softmax, categorical log-prob/entropy, sum pooling, and
binary cross-entropy. Each op checks its output for NaN/Inf and records
a backward closure on the active tape; passing tape=None runs pure
inference with no recording.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-12


class AutodiffError(RuntimeError):
    pass


class NonFiniteError(AutodiffError):
    """A forward op produced NaN or Inf."""


class ShapeError(AutodiffError):
    """Operands have inconsistent shapes."""


class Tensor:
    """A float64 array with a same-shape gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        v = np.asarray(value, dtype=np.float64)
        self.value = v
        self.grad = np.zeros_like(v)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


class Tape:
    """Ordered record of backward closures for one forward pass."""

    __slots__ = ("ops",)

    def __init__(self):
        self.ops = []

    def __len__(self):
        return len(self.ops)

    def backward(self, loss: Tensor):
        if loss.value.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for op in reversed(self.ops):
            op()


def _fresh(value) -> Tensor:
    out = Tensor(value)
    if not np.all(np.isfinite(out.value)):
        raise NonFiniteError("forward op produced a non-finite value")
    return out


def constant(value) -> Tensor:
    return _fresh(value)


# ---------------------------------------------------------------------------
# gathers


def lookup(tape, table: Tensor, index: int) -> Tensor:
    """Single embedding row."""
    out = _fresh(table.value[index])
    if tape is not None:
        def bw():
            table.grad[index] += out.grad
        tape.ops.append(bw)
    return out


def rows(tape, table: Tensor, indices) -> Tensor:
    """Gather several rows into a [k, d] matrix."""
    idx = np.asarray(indices, dtype=np.int64)
    out = _fresh(table.value[idx])
    if tape is not None:
        def bw():
            np.add.at(table.grad, idx, out.grad)
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# structural ops


def concat(tape, parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    out = _fresh(np.concatenate([p.value for p in parts]))
    if tape is not None:
        sizes = [p.value.shape[0] for p in parts]
        def bw():
            off = 0
            for p, n in zip(parts, sizes):
                p.grad += out.grad[off:off + n]
                off += n
        tape.ops.append(bw)
    return out


def hconcat(tape, a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 2-D tensors along columns."""
    out = _fresh(np.concatenate([a.value, b.value], axis=1))
    if tape is not None:
        na = a.value.shape[1]
        def bw():
            a.grad += out.grad[:, :na]
            b.grad += out.grad[:, na:]
        tape.ops.append(bw)
    return out


def add_n(tape, terms: list[Tensor]) -> Tensor:
    """Sum-pool same-shape tensors (pairwise summation via np.sum)."""
    if not terms:
        raise ShapeError("add_n needs at least one term")
    out = _fresh(np.sum(np.stack([t.value for t in terms]), axis=0))
    if tape is not None:
        def bw():
            for t in terms:
                t.grad += out.grad
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
    out = _fresh(a.value + b.value)
    if tape is not None:
        def bw():
            a.grad += out.grad
            b.grad += out.grad
        tape.ops.append(bw)
    return out


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul: {a.value.shape} vs {b.value.shape}")
    with np.errstate(over="ignore"):
        out = _fresh(a.value * b.value)
    if tape is not None:
        def bw():
            a.grad += b.value * out.grad
            b.grad += a.value * out.grad
        tape.ops.append(bw)
    return out


def scale(tape, a: Tensor, c: float) -> Tensor:
    out = _fresh(a.value * c)
    if tape is not None:
        def bw():
            a.grad += c * out.grad
        tape.ops.append(bw)
    return out


def affine(tape, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for a 1-D input vector."""
    if x.value.ndim != 1 or w.value.ndim != 2 or x.value.shape[0] != w.value.shape[0]:
        raise ShapeError(f"affine: x{x.value.shape} w{w.value.shape}")
    out = _fresh(x.value @ w.value + b.value)
    if tape is not None:
        def bw():
            x.grad += w.value @ out.grad
            w.grad += np.outer(x.value, out.grad)
            b.grad += out.grad
        tape.ops.append(bw)
    return out


def matvec(tape, m: Tensor, x: Tensor) -> Tensor:
    """m @ x with m as [k, d] and x as [d]."""
    if m.value.ndim != 2 or x.value.ndim != 1 or m.value.shape[1] != x.value.shape[0]:
        raise ShapeError(f"matvec: m{m.value.shape} x{x.value.shape}")
    out = _fresh(m.value @ x.value)
    if tape is not None:
        def bw():
            m.grad += np.outer(out.grad, x.value)
            x.grad += m.value.T @ out.grad
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def relu(tape, x: Tensor) -> Tensor:
    out = _fresh(np.maximum(x.value, 0.0))
    if tape is not None:
        def bw():
            x.grad += (x.value > 0.0) * out.grad
        tape.ops.append(bw)
    return out


def tanh(tape, x: Tensor) -> Tensor:
    out = _fresh(np.tanh(x.value))
    if tape is not None:
        def bw():
            x.grad += (1.0 - out.value ** 2) * out.grad
        tape.ops.append(bw)
    return out


def sigmoid(tape, x: Tensor) -> Tensor:
    out = _fresh(_sigmoid(x.value))
    if tape is not None:
        def bw():
            x.grad += out.value * (1.0 - out.value) * out.grad
        tape.ops.append(bw)
    return out


def _sigmoid(z):
    # two-branch form avoids overflow in exp for large |z|
    pos = z >= 0
    out = np.empty_like(np.asarray(z, dtype=np.float64))
    out[pos] = 1.0 / (1.0 + np.exp(-np.asarray(z)[pos]))
    ez = np.exp(np.asarray(z)[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid_clamped(tape, x: Tensor, eps: float = BCE_CLAMP) -> Tensor:
    """Sigmoid clipped into the open interval (eps, 1-eps)."""
    out = _fresh(np.clip(_sigmoid(x.value), eps, 1.0 - eps))
    if tape is not None:
        def bw():
            x.grad += out.value * (1.0 - out.value) * out.grad
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# LSTM cell (fused, hand-written backward; gate order i, f, g, o)


def lstm_step(tape, x: Tensor, h: Tensor, c: Tensor,
              wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM cell update: returns (h', c')."""
    d_h = h.value.shape[0]
    if wx.value.shape != (x.value.shape[0], 4 * d_h) or wh.value.shape != (d_h, 4 * d_h) \
            or b.value.shape != (4 * d_h,) or c.value.shape != (d_h,):
        raise ShapeError("lstm_step: inconsistent shapes")
    z = x.value @ wx.value + h.value @ wh.value + b.value
    i = _sigmoid(z[:d_h])
    f = _sigmoid(z[d_h:2 * d_h])
    g = np.tanh(z[2 * d_h:3 * d_h])
    o = _sigmoid(z[3 * d_h:])
    c2 = f * c.value + i * g
    t = np.tanh(c2)
    h_out = _fresh(o * t)
    c_out = _fresh(c2)
    if tape is not None:
        def bw():
            dh = h_out.grad
            dc2 = c_out.grad + (1.0 - t ** 2) * (o * dh)
            do = t * dh
            df = c.value * dc2
            di = g * dc2
            dg = i * dc2
            c.grad += f * dc2
            dz = np.concatenate([
                i * (1.0 - i) * di,
                f * (1.0 - f) * df,
                (1.0 - g ** 2) * dg,
                o * (1.0 - o) * do,
            ])
            x.grad += wx.value @ dz
            h.grad += wh.value @ dz
            wx.grad += np.outer(x.value, dz)
            wh.grad += np.outer(h.value, dz)
            b.grad += dz
        tape.ops.append(bw)
    return h_out, c_out


# ---------------------------------------------------------------------------
# categorical head


def masked_softmax(tape, logits: Tensor, valid: int) -> Tensor:
    """Stable softmax over the first `valid` entries; the rest are exactly 0."""
    m_max = logits.value.shape[0]
    if not 1 <= valid <= m_max:
        raise ShapeError(f"masked_softmax: valid={valid} out of range 1..{m_max}")
    live = logits.value[:valid]
    e = np.exp(live - np.max(live))
    p = np.zeros(m_max)
    p[:valid] = e / np.sum(e)
    out = _fresh(p)
    if tape is not None:
        def bw():
            g = out.grad[:valid]
            pv = out.value[:valid]
            logits.grad[:valid] += pv * (g - np.dot(g, pv))
        tape.ops.append(bw)
    return out


def log_entry(tape, probs: Tensor, index: int) -> Tensor:
    """ln probs[index] as a scalar (the sampled action's log-probability)."""
    p = probs.value[index]
    out = _fresh(np.log(p))
    if tape is not None:
        def bw():
            probs.grad[index] += out.grad / p
        tape.ops.append(bw)
    return out


def entropy(tape, probs: Tensor) -> Tensor:
    """-sum p ln p with 0 ln 0 := 0 (masked entries contribute nothing)."""
    p = probs.value
    live = p > 0.0
    out = _fresh(-np.sum(p[live] * np.log(p[live])))
    if tape is not None:
        def bw():
            d = np.zeros_like(p)
            d[live] = -(np.log(p[live]) + 1.0) * out.grad
            probs.grad += d
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# loss


def bce_loss(tape, score: Tensor, label: float) -> Tensor:
    """-[y ln s + (1-y) ln(1-s)] for a scalar score in (0,1)."""
    if score.value.shape != ():
        raise ShapeError("bce_loss expects a scalar score")
    s = float(score.value)
    if s <= 0.0 or s >= 1.0:
        logger.warning("bce_loss score %.3g at boundary, clamping", s)
        s = min(max(s, BCE_CLAMP), 1.0 - BCE_CLAMP)
    y = float(label)
    out = _fresh(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))
    if tape is not None:
        def bw():
            score.grad += (-y / s + (1.0 - y) / (1.0 - s)) * out.grad
        tape.ops.append(bw)
    return out


# ---------------------------------------------------------------------------
# sampling (not an autodiff op; kept here so all stochastic numerics share it)


def sample_categorical(rng, probs: np.ndarray) -> int:
    """Inverse-CDF draw; consumes exactly one uniform from rng."""
    u = rng.random()
    cdf = np.cumsum(probs)
    return int(np.searchsorted(cdf, u * cdf[-1], side="right").clip(0, len(probs) - 1))
