"""Neural building blocks on top of the autodiff substrate."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError


class Module:
    """Base class with recursive parameter collection."""

    def parameters(self):
        out = []
        for value in vars(self).values():
            if isinstance(value, Parameter):
                out.append(value)
            elif isinstance(value, Module):
                out.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out


class Linear(Module):
    """Affine map; weights initialized uniform in +-1/sqrt(fan_in)."""

    def __init__(self, fan_in, fan_out, rng, name):
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), f"{name}.weight")
        self.bias = Parameter(rng.uniform(-bound, bound, size=(fan_out,)), f"{name}.bias")

    def __call__(self, x):
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim, name):
        self.gain = Parameter(np.ones(dim), f"{name}.gain")
        self.bias = Parameter(np.zeros(dim), f"{name}.bias")

    def __call__(self, x):
        return ad.layer_norm(x, self.gain, self.bias)


class Dropout(Module):
    def __init__(self, rate, rng):
        self.rate = rate
        self.rng = rng

    def __call__(self, x, training):
        return ad.dropout(x, self.rate, self.rng, training)


def multi_head_attention(q, k, v, heads, mask=None):
    """Scaled dot-product attention over pre-projected q/k/v, multi-headed.

    ``mask`` is an additive float array broadcastable to (Lq, Lk); masked
    positions carry a large negative value.
    """
    b, lq, d = q.shape
    lk = k.shape[1]
    if d % heads != 0:
        raise ConfigError(f"model dimension {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x, length):
        return ad.transpose(ad.reshape(x, (b, length, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q, lq), split(k, lk), split(v, lk)
    scores = ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + Tensor(mask)
    attn = ad.softmax(scores, axis=-1)
    out = ad.matmul(attn, vh)
    return ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, lq, d))


class MultiHeadAttention(Module):
    """Full multi-head attention with learned q/k/v/out projections."""

    def __init__(self, d_model, heads, rng, name):
        if d_model % heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by heads {heads}")
        self.heads = heads
        self.wq = Linear(d_model, d_model, rng, f"{name}.wq")
        self.wk = Linear(d_model, d_model, rng, f"{name}.wk")
        self.wv = Linear(d_model, d_model, rng, f"{name}.wv")
        self.wo = Linear(d_model, d_model, rng, f"{name}.wo")

    def __call__(self, q, k, v, mask=None):
        out = multi_head_attention(self.wq(q), self.wk(k), self.wv(v), self.heads, mask=mask)
        return self.wo(out)


def causal_mask(length, dtype=np.float32):
    """Additive mask forbidding attention to future positions."""
    m = np.triu(np.full((length, length), -1e9, dtype=dtype), k=1)
    return m


def sinusoidal_positions(length, d_model):
    """Fixed sinusoidal position table, shape (length, d_model)."""
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table
