"""Reverse-mode automatic differentiation over numpy arrays.

Each operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to one gradient per parent.
``Tensor.backward`` walks the graph in reverse topological order.
Heavier layers (convolution, pooling, LSTM, cross-entropy) are fused ops
with hand-written backward passes.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from stressanon.errors import ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = ""

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph plumbing -----------------------------------------------------

    @staticmethod
    def from_op(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- elementwise ----------------------------------------------------------

    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor.from_op(self.data + other.data, (self, other),
                              lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other
        return Tensor.from_op(a.data * b.data, (a, b),
                              lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                              "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return self * other.pow(-1.0)
        return self * (1.0 / other)

    def pow(self, exponent: float) -> Tensor:
        x = self.data
        return Tensor.from_op(x ** exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def exp(self) -> Tensor:
        y = np.exp(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * y,), "exp")

    def log(self) -> Tensor:
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def relu(self) -> Tensor:
        mask = self.data > 0
        return Tensor.from_op(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def tanh(self) -> Tensor:
        y = np.tanh(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * (1.0 - y * y),), "tanh")

    def sigmoid(self) -> Tensor:
        y = _sigmoid(self.data)
        return Tensor.from_op(y, (self,), lambda g: (g * y * (1.0 - y),), "sigmoid")

    # -- reductions and shape -------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose")

    def __getitem__(self, index) -> Tensor:
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward, "getitem")

    def flip(self, axis: int) -> Tensor:
        return Tensor.from_op(np.flip(self.data, axis).copy(), (self,),
                              lambda g: (np.flip(g, axis).copy(),), "flip")

    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def backward(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor.from_op(a.data @ b.data, (a, b), backward, "matmul")

    def softmax(self, axis: int = -1) -> Tensor:
        shifted = self.data - np.max(self.data, axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

        return Tensor.from_op(y, (self,), backward, "softmax")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- fused layer ops ------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: tuple[int, int] = (1, 1), padding: tuple[int, int] = (0, 0)) -> Tensor:
    """2-D cross-correlation. x: (B, C, H, W), weight: (O, C, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d kernel {weight.shape[2:]} larger than padded input {xp.shape[2:]}")
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = weight.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor, pool: tuple[int, int]) -> Tensor:
    """Non-overlapping max pooling over the last two axes; trailing rows/cols are dropped."""
    ph, pw = pool
    if (ph, pw) == (1, 1):
        return x
    B, C, H, W = x.shape
    Ho, Wo = H // ph, W // pw
    if Ho == 0 or Wo == 0:
        raise ShapeError(f"pool {pool} larger than input {x.shape[2:]}")
    blocks = x.data[:, :, :Ho * ph, :Wo * pw].reshape(B, C, Ho, ph, Wo, pw).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(B, C, Ho, Wo, ph * pw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gblocks = gflat.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * ph, Wo * pw)
        gx = np.zeros(x.shape)
        gx[:, :, :Ho * ph, :Wo * pw] = gblocks
        return (gx,)

    return Tensor.from_op(out, (x,), backward, "max_pool2d")


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor) -> Tensor:
    """Unidirectional LSTM over (B, T, d_in) with zero initial state.

    Weights are (d_in, 4h) and (h, 4h), gate order input, forget, cell, output;
    separate input-side and recurrent-side biases. Returns (B, T, h).
    """
    B, T, D = x.shape
    hsz = w_hh.shape[0]
    if w_ih.shape != (D, 4 * hsz) or w_hh.shape != (hsz, 4 * hsz):
        raise ShapeError(f"lstm weights {w_ih.shape}, {w_hh.shape} do not fit input {x.shape} and hidden {hsz}")
    xz = x.data @ w_ih.data + b_ih.data + b_hh.data
    hs = np.zeros((T + 1, B, hsz))
    cs = np.zeros((T + 1, B, hsz))
    gates = np.zeros((T, B, 4 * hsz))
    for t in range(T):
        z = xz[:, t] + hs[t] @ w_hh.data
        i = _sigmoid(z[:, :hsz])
        f = _sigmoid(z[:, hsz:2 * hsz])
        gg = np.tanh(z[:, 2 * hsz:3 * hsz])
        o = _sigmoid(z[:, 3 * hsz:])
        cs[t + 1] = f * cs[t] + i * gg
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, gg, o], axis=1)
    out = hs[1:].transpose(1, 0, 2).copy()

    def backward(g):
        dz_all = np.zeros((T, B, 4 * hsz))
        dh_next = np.zeros((B, hsz))
        dc_next = np.zeros((B, hsz))
        for t in reversed(range(T)):
            i, f, gg, o = np.split(gates[t], 4, axis=1)
            tc = np.tanh(cs[t + 1])
            dh = g[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di, dg, df = dc * gg, dc * i, dc * cs[t]
            dc_next = dc * f
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            dz_all[t] = dz
            dh_next = dz @ w_hh.data.T
        dz_bt = dz_all.transpose(1, 0, 2)
        gx = dz_bt @ w_ih.data.T
        gw_ih = x.data.reshape(B * T, D).T @ dz_bt.reshape(B * T, 4 * hsz)
        h_prev = hs[:-1].transpose(1, 0, 2).reshape(B * T, hsz)
        gw_hh = h_prev.T @ dz_bt.reshape(B * T, 4 * hsz)
        gb = dz_all.sum(axis=(0, 1))
        return gx, gw_ih, gw_hh, gb, gb.copy()

    return Tensor.from_op(out, (x, w_ih, w_hh, b_ih, b_hh), backward, "lstm")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``); (B, K) -> scalar."""
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"logits {z.shape} and labels {labels.shape} are incompatible")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = z.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return Tensor.from_op(np.asarray(loss), (logits,), backward, "softmax_cross_entropy")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")
