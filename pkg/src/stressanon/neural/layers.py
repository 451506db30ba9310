"""Parameterised layers built on the autodiff ops."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from stressanon.errors import ConfigError, ShapeError
from stressanon.neural.tensor import Tensor, concat, conv2d, dropout, lstm, max_pool2d


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Container that knows its trainable tensors by dotted name."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator[Module]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = _uniform(rng, (in_features, out_features), in_features)
        self.bias = _uniform(rng, (out_features,), in_features)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear expects last dim {self.weight.shape[0]}, got input {x.shape}")
        return x @ self.weight + self.bias


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: tuple[int, int],
                 rng: np.random.Generator, stride: tuple[int, int] = (1, 1), padding: tuple[int, int] | None = None):
        kh, kw = kernel
        fan_in = in_channels * kh * kw
        self.weight = _uniform(rng, (out_channels, in_channels, kh, kw), fan_in)
        self.bias = _uniform(rng, (out_channels,), fan_in)
        self.stride = tuple(stride)
        self.padding = tuple(padding) if padding is not None else (kh // 2, kw // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.weight.shape[2:]
        return ((h + 2 * self.padding[0] - kh) // self.stride[0] + 1,
                (w + 2 * self.padding[1] - kw) // self.stride[1] + 1)


class MaxPool2d(Module):
    def __init__(self, pool: tuple[int, int]):
        self.pool = tuple(pool)

    def __call__(self, x: Tensor) -> Tensor:
        return max_pool2d(x, self.pool)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.rng, self.training)


class LSTMDirection(Module):
    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator):
        self.w_ih = _uniform(rng, (input_size, 4 * hidden), hidden)
        self.w_hh = _uniform(rng, (hidden, 4 * hidden), hidden)
        self.b_ih = _uniform(rng, (4 * hidden,), hidden)
        self.b_hh = _uniform(rng, (4 * hidden,), hidden)

    def __call__(self, x: Tensor) -> Tensor:
        return lstm(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class BiLSTM(Module):
    """Bidirectional LSTM; output is the concatenation (forward, backward), 2h wide."""

    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.forward_dir = LSTMDirection(input_size, hidden, rng)
        self.backward_dir = LSTMDirection(input_size, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        fwd = self.forward_dir(x)
        bwd = self.backward_dir(x.flip(1)).flip(1)
        return concat([fwd, bwd], axis=-1)


class MultiHeadAttention(Module):
    """Self-attention with query/key/value/output projections (d x d, each with bias)."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        if heads < 1 or d_model % heads:
            raise ConfigError(f"d_model {d_model} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        """``x``: (B, T, d). ``key_mask``: optional (B, T) booleans, False = ignore that step."""
        B, T, d = x.shape
        dh = d // self.heads

        def split(t: Tensor) -> Tensor:
            return t.reshape(B, T, self.heads, dh).transpose(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        if key_mask is not None:
            penalty = np.where(np.asarray(key_mask, dtype=bool), 0.0, -np.inf)[:, None, None, :]
            scores = scores + penalty
        weights = scores.softmax(axis=-1)
        self.last_weights = weights.data
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        return self.out(ctx)
