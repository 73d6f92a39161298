"""Reverse-mode automatic differentiation on float64 numpy arrays.

Define-by-run: ops executed inside a `with Tape() as tape:` block append
nodes to the tape when their output needs a gradient. `tape.backward(loss)`
walks the nodes in reverse creation order with a fixed accumulation order,
so gradients are bit-reproducible for a fixed graph.

Tensors wrap numpy arrays and are never mutated in place. Ops that take two
tensors follow numpy broadcasting; gradients are summed back down to each
input's shape.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Parameter", "Tape", "NonFiniteError",
    "add", "sub", "mul", "neg", "scale",
    "sigmoid", "tanh", "exp", "log", "relu", "softplus", "log1mexp",
    "clamp", "matmul", "swap_last2", "tensor_sum", "mean", "logsumexp",
    "reshape", "narrow", "shift_right", "frame", "causal_dilated_conv1d",
]

_TAPES: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    """Raised when backward() is called on a non-finite loss."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """A named leaf tensor that always wants a gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "out", "vjp", "index")

    def __init__(self, op, out, vjp, index):
        self.op = op
        self.out = out
        self.vjp = vjp
        self.index = index


class Tape:
    """Records ops while active; replays them in reverse for gradients."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> dict:
        """Accumulate dloss/dt into t.grad for every reachable leaf tensor.

        Returns {name: gradient array} for every Parameter the loss depends
        on. loss must be a finite scalar produced on this tape; raises
        NonFiniteError naming the first offending node if it is nan or inf.
        """
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            for node in self.nodes:
                if not np.all(np.isfinite(node.out.data)):
                    raise NonFiniteError(
                        f"loss is {float(loss.data)}; first non-finite output at "
                        f"node {node.index} ({node.op})")
            raise NonFiniteError(f"loss is {float(loss.data)}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        leaves: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            leaves.pop(id(node.out), None)
            if g is None:
                continue
            for t, gt in node.vjp(g):
                if not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = gt if acc is None else acc + gt
                leaves[id(t)] = t
        out = {}
        for tid, t in leaves.items():
            g = grads[tid]
            if g.shape != t.data.shape:
                g = np.broadcast_to(g, t.data.shape).copy()
            t.grad = g if t.grad is None else t.grad + g
            if isinstance(t, Parameter):
                out[t.name] = t.grad
        return out


def _record(op: str, out: Tensor, vjp) -> Tensor:
    if _TAPES and out.requires_grad:
        tape = _TAPES[-1]
        tape.nodes.append(_Node(op, out, vjp, len(tape.nodes)))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _rg(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, _rg(a, b))

    def vjp(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape))]

    return _record("add", out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data - b.data, _rg(a, b))

    def vjp(g):
        return [(a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape))]

    return _record("sub", out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, _rg(a, b))
    ad, bd = a.data, b.data

    def vjp(g):
        return [(a, _unbroadcast(g * bd, ad.shape)), (b, _unbroadcast(g * ad, bd.shape))]

    return _record("mul", out, vjp)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, a.requires_grad)
    return _record("neg", out, lambda g: [(a, -g)])


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c, a.requires_grad)
    return _record("scale", out, lambda g: [(a, g * c)])


# ---------------------------------------------------------------------------
# activations

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # tanh form: stable in both tails, one libm pass
    out = np.tanh(x * 0.5)
    out += 1.0
    out *= 0.5
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    out = Tensor(s, a.requires_grad)
    return _record("sigmoid", out, lambda g: [(a, g * (s * (1.0 - s)))])


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, a.requires_grad)
    return _record("tanh", out, lambda g: [(a, g * (1.0 - t * t))])


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e, a.requires_grad)
    return _record("exp", out, lambda g: [(a, g * e)])


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), a.requires_grad)
    ad = a.data
    return _record("log", out, lambda g: [(a, g / ad)])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), a.requires_grad)
    return _record("relu", out, lambda g: [(a, g * mask)])


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x = a.data
    out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))), a.requires_grad)
    return _record("softplus", out, lambda g: [(a, g * _sigmoid_np(x))])


def log1mexp(a: Tensor) -> Tensor:
    """log(1 - e^{-a}) for a > 0. Derivative is 1/expm1(a)."""
    x = a.data
    if np.any(x <= 0):
        raise ValueError("log1mexp requires strictly positive input")
    out = Tensor(np.log(-np.expm1(-x)), a.requires_grad)
    return _record("log1mexp", out, lambda g: [(a, g / np.expm1(x))])


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through only inside the range."""
    if not lo < hi:
        raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    x = a.data
    mask = (x >= lo) & (x <= hi)
    out = Tensor(np.clip(x, lo, hi), a.requires_grad)
    return _record("clamp", out, lambda g: [(a, g * mask)])


# ---------------------------------------------------------------------------
# linear algebra and reductions

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Both 2-D, or both 3-D with equal batch dims."""
    ad, bd = a.data, b.data
    if ad.ndim != bd.ndim or ad.ndim not in (2, 3):
        raise ValueError(f"matmul wants matching 2-D or 3-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2] or (ad.ndim == 3 and ad.shape[0] != bd.shape[0]):
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    out = Tensor(np.matmul(ad, bd), _rg(a, b))

    def vjp(g):
        outs = []
        if a.requires_grad:
            outs.append((a, np.matmul(g, bd.swapaxes(-1, -2))))
        if b.requires_grad:
            outs.append((b, np.matmul(ad.swapaxes(-1, -2), g)))
        return outs

    return _record("matmul", out, vjp)


def swap_last2(a: Tensor) -> Tensor:
    out = Tensor(a.data.swapaxes(-1, -2).copy(), a.requires_grad)
    return _record("swap_last2", out, lambda g: [(a, g.swapaxes(-1, -2))])


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return [(a, np.broadcast_to(g, shape).copy())]
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(shape) for ax in axes)
            gshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
            g = g.reshape(gshape)
        return [(a, np.broadcast_to(g, shape).copy())]

    return _record("sum", out, vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) along `axis`, shift-stabilised."""
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    softmax = e / s
    val = m + np.log(s)
    if not keepdims:
        val = np.squeeze(val, axis=axis)
    out = Tensor(val, a.requires_grad)

    def vjp(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        return [(a, ge * softmax)]

    return _record("logsumexp", out, vjp)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = Tensor(a.data.reshape(shape), a.requires_grad)
    return _record("reshape", out, lambda g: [(a, g.reshape(old))])


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    n = a.data.shape[axis]
    if start < 0 or length <= 0 or start + length > n:
        raise ValueError(f"narrow [{start}:{start + length}] out of range for axis size {n}")
    idx = tuple(slice(None) if i != axis else slice(start, start + length)
                for i in range(a.data.ndim))
    out = Tensor(a.data[idx].copy(), a.requires_grad)
    shape = a.data.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return [(a, gx)]

    return _record("narrow", out, vjp)


def shift_right(a: Tensor) -> Tensor:
    """Shift the last axis one step right, zero-filling position 0."""
    x = a.data
    out_data = np.zeros_like(x)
    out_data[..., 1:] = x[..., :-1]
    out = Tensor(out_data, a.requires_grad)

    def vjp(g):
        gx = np.zeros_like(g)
        gx[..., :-1] = g[..., 1:]
        return [(a, gx)]

    return _record("shift_right", out, vjp)


def frame(a: Tensor, frame_len: int, hop: int) -> Tensor:
    """Slice a 1-D signal into overlapping frames, shape [n_frames, frame_len]."""
    if a.data.ndim != 1:
        raise ValueError(f"frame expects a 1-D signal, got shape {a.data.shape}")
    t = a.data.shape[0]
    if frame_len <= 0 or hop <= 0 or t < frame_len:
        raise ValueError(f"cannot frame length-{t} signal with frame_len={frame_len}, hop={hop}")
    n_frames = 1 + (t - frame_len) // hop
    idx = hop * np.arange(n_frames)[:, None] + np.arange(frame_len)[None, :]
    out = Tensor(a.data[idx], a.requires_grad)

    def vjp(g):
        gx = np.zeros(t)
        np.add.at(gx, idx, g)
        return [(a, gx)]

    return _record("frame", out, vjp)


def causal_dilated_conv1d(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    """Causal dilated 1-D convolution.

    Parameters
    ----------
    x : Tensor [B, C_in, T]
    w : Tensor [C_out, C_in, F]
    dilation : int >= 1

    The input is left-padded with (F-1)*dilation zeros, so output position t
    sees x[t - (F-1)*dilation], ..., x[t]: the last filter tap lands on the
    current timestep and nothing later.
    """
    if not isinstance(dilation, int) or dilation < 1:
        raise ValueError(f"dilation must be a positive int, got {dilation!r}")
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError(f"conv wants x [B,C,T] and w [Cout,Cin,F], got {x.data.shape}, {w.data.shape}")
    b_, c_in, t = x.data.shape
    c_out, c_in_w, f = w.data.shape
    if c_in != c_in_w:
        raise ValueError(f"conv channel mismatch: x has {c_in} channels, w expects {c_in_w}")
    pad = (f - 1) * dilation
    if pad:
        xp = np.concatenate([np.zeros((b_, c_in, pad)), x.data], axis=2)
    else:
        xp = x.data
    # gather all taps once so a single GEMM covers every tap and batch row
    xcat = np.empty((f, c_in, b_, t))
    for k in range(f):
        xcat[k] = xp[:, :, k * dilation:k * dilation + t].transpose(1, 0, 2)
    xcat = xcat.reshape(f * c_in, b_ * t)
    w2 = np.ascontiguousarray(w.data.transpose(0, 2, 1)).reshape(c_out, f * c_in)
    out2 = w2 @ xcat
    out = Tensor(np.ascontiguousarray(
        out2.reshape(c_out, b_, t).transpose(1, 0, 2)), _rg(x, w))

    def vjp(g):
        outs = []
        g2 = g.transpose(1, 0, 2).reshape(c_out, b_ * t)
        if x.requires_grad:
            gx = (w2.T @ g2).reshape(f, c_in, b_, t)
            gxp = np.zeros((b_, c_in, t + pad))
            for k in range(f):
                gxp[:, :, k * dilation:k * dilation + t] += gx[k].transpose(1, 0, 2)
            outs.append((x, gxp[:, :, pad:] if pad else gxp))
        if w.requires_grad:
            gw = (g2 @ xcat.T).reshape(c_out, f, c_in)
            outs.append((w, np.ascontiguousarray(gw.transpose(0, 2, 1))))
        return outs

    return _record("conv", out, vjp)
