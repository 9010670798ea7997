"""Small building blocks on top of the autodiff engine.

Activations are laid out channels-first: (batch, channels, frames).
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import DiffArray

NEG_INF = -1e9


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, DiffArray]:
        out: dict[str, DiffArray] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, DiffArray):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[DiffArray]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, dilation: int = 1):
        fan_in = c_in * kernel
        self.weight = ad.parameter(_uniform(rng, (c_out, c_in, kernel), fan_in))
        self.bias = ad.parameter(_uniform(rng, (c_out,), fan_in))
        self.dilation = dilation

    def __call__(self, x) -> DiffArray:
        return ad.conv1d(x, self.weight, self.bias, dilation=self.dilation)


class LayerNorm(Module):
    """Normalization over the channel axis with a learned per-channel affine."""

    def __init__(self, channels: int):
        self.gain = ad.parameter(np.ones((channels, 1)))
        self.shift = ad.parameter(np.zeros((channels, 1)))

    def __call__(self, x) -> DiffArray:
        return ad.layer_norm(x, axis=-2) * self.gain + self.shift


class TemporalAttention(Module):
    """Multi-head self-attention across frames; padded frames are never attended to."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        if channels % heads:
            raise ValueError(f"channels={channels} not divisible by heads={heads}")
        self.heads = heads
        self.query = Conv1d(channels, channels, 1, rng)
        self.key = Conv1d(channels, channels, 1, rng)
        self.value = Conv1d(channels, channels, 1, rng)
        self.out = Conv1d(channels, channels, 1, rng)

    def __call__(self, x: DiffArray, key_bias: np.ndarray | None = None) -> DiffArray:
        b, c, t = x.shape
        h, dh = self.heads, c // self.heads
        q = ad.reshape(self.query(x), (b, h, dh, t))
        k = ad.reshape(self.key(x), (b, h, dh, t))
        v = ad.reshape(self.value(x), (b, h, dh, t))
        scores = ad.matmul(ad.swapaxes(q, -1, -2), k) * (1.0 / math.sqrt(dh))
        if key_bias is not None:
            scores = scores + key_bias
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(v, ad.swapaxes(attn, -1, -2))
        return self.out(ad.reshape(mixed, (b, c, t)))


class ChannelAttention(Module):
    """Self-attention across channels (channel-aware branch)."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.out = Conv1d(channels, channels, 1, rng)

    def __call__(self, x: DiffArray, mask: np.ndarray | None = None) -> DiffArray:
        t = x.shape[-1]
        if mask is not None:
            x = x * mask
        scores = ad.matmul(x, ad.swapaxes(x, -1, -2)) * (1.0 / math.sqrt(t))
        attn = ad.softmax(scores, axis=-1)
        return self.out(ad.matmul(attn, x))


class PointwiseMLP(Module):
    def __init__(self, channels: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Conv1d(channels, hidden, 1, rng)
        self.fc2 = Conv1d(hidden, channels, 1, rng)

    def __call__(self, x) -> DiffArray:
        return self.fc2(ad.relu(self.fc1(x)))


def key_padding_bias(mask: np.ndarray) -> np.ndarray:
    """(B, 1, T) frame mask -> (B, 1, 1, T) additive attention bias."""
    return np.where(mask[:, :, None, :] > 0, 0.0, NEG_INF)
