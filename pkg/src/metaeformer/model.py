"""Encoder-decoder forecaster with static-context embedding, per-layer echo
of pool patterns, and echo-filled decoder inputs."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .echo import EchoInspector, EchoProjections, echo_layer, echo_padding
from .errors import ConfigError, FormatError, StateError
from .nn import Dropout, Linear, LayerNorm, Module, MultiHeadAttention, causal_mask, sinusoidal_positions
from .pool import MetaPatternPool, PoolConfig, standardize

ABLATIONS = ("none", "de_mpp", "de_el", "de_ep", "de_si")


@dataclass
class ModelConfig:
    lookback: int = 48             # L
    horizon: int = 24              # L_y
    token_len: int = 12            # start token length
    d_in: int = 1
    d_model: int = 64
    heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 1
    top_k: int = 16
    slice_len: int = 16
    static_dim: int = 0
    mark_dim: int = 2
    dropout: float = 0.05
    period: int = 24
    ablation: str = "none"
    echo_every_layer: bool = True

    def __post_init__(self):
        if self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.lookback % self.slice_len != 0:
            raise ConfigError(f"L mod s != 0: L={self.lookback}, s={self.slice_len}")
        if self.token_len >= self.lookback:
            raise ConfigError(f"token_len {self.token_len} must be < lookback {self.lookback}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")


@dataclass
class ForecastOutput:
    prediction: np.ndarray                       # (B, horizon, d_in)
    echo_records: Optional[list] = None


class SIEmbedding(Module):
    """Token + temporal + position embedding with learned static fusion.

    With no static context (or under the stacking ablation) the fusion path
    is disabled and the sum of the three embeddings is returned directly.
    """

    def __init__(self, cfg, max_len, rng, name):
        self.cfg = cfg
        d_tok = cfg.d_in + (cfg.static_dim if cfg.ablation == "de_si" else 0)
        self.token = Linear(d_tok, cfg.d_model, rng, f"{name}.token")
        self.temporal = Linear(cfg.mark_dim, cfg.d_model, rng, f"{name}.temporal")
        self.positions = sinusoidal_positions(max_len, cfg.d_model)
        self.fusion_enabled = cfg.static_dim > 0 and cfg.ablation != "de_si"
        if self.fusion_enabled:
            self.static_lin = Linear(cfg.static_dim, cfg.d_model, rng, f"{name}.static_lin")
            self.fuse_lin = Linear(cfg.d_model, 1, rng, f"{name}.fuse_lin")
            self.norm = LayerNorm(cfg.d_model, f"{name}.norm")
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, x, marks, s_ctx, training):
        x = x if isinstance(x, Tensor) else Tensor(x)
        marks = marks if isinstance(marks, Tensor) else Tensor(marks)
        b, length, _ = x.shape
        if self.cfg.ablation == "de_si" and self.cfg.static_dim > 0:
            ctx = np.broadcast_to(np.asarray(s_ctx)[:, None, :], (b, length, self.cfg.static_dim))
            x = ad.concat([x, Tensor(ctx.copy())], axis=-1)
        e_x = self.token(x) + self.temporal(marks) + Tensor(self.positions[:length])
        if not self.fusion_enabled or s_ctx is None:
            return e_x
        e_si = self.static_lin(Tensor(np.asarray(s_ctx)))                 # (B, d_model)
        weights = ad.softmax(self.fuse_lin(e_x), axis=1)                  # (B, L, 1)
        e_f = weights * ad.reshape(e_si, (b, 1, self.cfg.d_model))        # outer combine
        return self.norm(e_x + self.drop(e_f, training))


class FeedForward(Module):
    def __init__(self, d_model, rng, name):
        self.lin1 = Linear(d_model, 4 * d_model, rng, f"{name}.lin1")
        self.lin2 = Linear(4 * d_model, d_model, rng, f"{name}.lin2")

    def __call__(self, x):
        return self.lin2(ad.relu(self.lin1(x)))


class EncoderLayer(Module):
    def __init__(self, cfg, rng, name, with_echo):
        self.cfg = cfg
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, f"{name}.attn")
        self.norm1 = LayerNorm(cfg.d_model, f"{name}.norm1")
        self.ff = FeedForward(cfg.d_model, rng, f"{name}.ff")
        self.norm2 = LayerNorm(cfg.d_model, f"{name}.norm2")
        self.drop = Dropout(cfg.dropout, rng)
        self.with_echo = with_echo
        if with_echo:
            if cfg.ablation == "de_el":
                # pool mean enters through a plain linear instead of the echo
                self.pool_fuse = Linear(cfg.slice_len, cfg.d_model // 2, rng, f"{name}.pool_fuse")
            else:
                self.echo_proj = EchoProjections(cfg.d_model, cfg.top_k, rng, f"{name}.echo")

    def __call__(self, x, mpp, training, inspector=None):
        a = self.norm1(x + self.drop(self.attn(x, x, x), training))
        a = self.norm2(a + self.drop(self.ff(a), training))
        if not self.with_echo:
            return a
        cfg = self.cfg
        half = cfg.d_model // 2
        if cfg.ablation == "de_el":
            if mpp is None or mpp.occupancy == 0:
                raise StateError("pool required for the linear fusion variant")
            mean_pattern = Tensor(mpp.filled.mean(axis=0))
            fused = self.pool_fuse(ad.reshape(mean_pattern, (1, cfg.slice_len)))
            b, length, _ = a.shape
            tile = ad.reshape(fused, (1, 1, half))
            block = ad.concat([tile] * length, axis=1)
            block = ad.concat([block] * b, axis=0)
            return ad.concat([a[:, :, :half], block], axis=-1)
        return echo_layer(a, mpp, self.echo_proj, cfg.top_k, cfg.slice_len, inspector)


class DecoderLayer(Module):
    def __init__(self, cfg, rng, name):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, f"{name}.self_attn")
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, f"{name}.cross_attn")
        self.norm1 = LayerNorm(cfg.d_model, f"{name}.norm1")
        self.norm2 = LayerNorm(cfg.d_model, f"{name}.norm2")
        self.norm3 = LayerNorm(cfg.d_model, f"{name}.norm3")
        self.ff = FeedForward(cfg.d_model, rng, f"{name}.ff")
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, x, memory, mask, training):
        h = self.norm1(x + self.drop(self.self_attn(x, x, x, mask), training))
        h = self.norm2(h + self.drop(self.cross_attn(h, memory, memory), training))
        return self.norm3(h + self.drop(self.ff(h), training))


class MetaEformer(Module):
    """Full forecaster; owns every learnable parameter and the RNG stream."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        rng = self.rng
        c = config
        max_len = max(c.lookback, c.token_len + c.horizon)
        self.enc_embed = SIEmbedding(c, max_len, rng, "enc_embed")
        self.dec_embed = SIEmbedding(c, max_len, rng, "dec_embed")
        self.encoder = [
            EncoderLayer(c, rng, f"encoder.{i}",
                         with_echo=c.echo_every_layer or i == c.encoder_layers - 1)
            for i in range(c.encoder_layers)
        ]
        self.decoder = [DecoderLayer(c, rng, f"decoder.{i}") for i in range(c.decoder_layers)]
        self.head = Linear(c.d_model, c.d_in, rng, "head")
        if c.ablation != "de_ep":
            self.pad_reduce = Linear(c.d_in, c.top_k, rng, "pad_reduce")
        self._mask = causal_mask(c.token_len + c.horizon)

    def named_parameters(self):
        params = {}
        for p in self.parameters():
            if p.name in params:
                raise ConfigError(f"duplicate parameter name {p.name}")
            params[p.name] = p
        return params

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x, marks_x, marks_de, s_ctx, mpp, training=False, inspector=None):
        """Run embedding, encoder stack, echo-padded decoder, and the head.

        ``x`` is the normalized lookback (B, L, d_in); the return value is the
        (B, horizon, d_in) prediction tensor on the same scale.
        """
        c = self.config
        x_t = x if isinstance(x, Tensor) else Tensor(x)
        if mpp is None and c.ablation != "de_mpp":
            raise StateError("a constructed pool is required outside the de_mpp ablation")
        e = self.enc_embed(x_t, marks_x, s_ctx, training)
        for layer in self.encoder:
            e = layer(e, mpp, training, inspector)
        o_en = e

        token = x_t[:, c.lookback - c.token_len:, :]
        if c.ablation == "de_ep":
            pad = Tensor(np.zeros((x_t.shape[0], c.horizon, c.d_in)))
        else:
            pad = echo_padding(x_t, mpp, self.pad_reduce, c.top_k, c.horizon,
                               c.slice_len, c.period)
        x_de = ad.concat([token, pad], axis=1)
        h = self.dec_embed(x_de, marks_de, s_ctx, training)
        mask = self._mask.astype(h.data.dtype)
        for layer in self.decoder:
            h = layer(h, o_en, mask, training)
        out = self.head(h)
        return out[:, -c.horizon:, :]

    def forecast(self, x, marks_x, marks_de, s_ctx, mpp, scaler=None, inspect=False):
        """Inference entry point; optionally denormalizes and records echoes."""
        inspector = EchoInspector() if inspect else None
        with ad.no_grad():
            pred = self.forward(x, marks_x, marks_de, s_ctx, mpp,
                                training=False, inspector=inspector).data.copy()
        if scaler is not None:
            pred = scaler.denormalize(pred)
        return ForecastOutput(prediction=pred,
                              echo_records=inspector.records if inspector else None)


def random_pool(pool_config, rng):
    """Stochastic stand-in pool for the de_mpp ablation: standardized noise
    rows, full occupancy, never updated."""
    rows = standardize(rng.standard_normal((pool_config.capacity, pool_config.slice_len)))
    return MetaPatternPool(patterns=rows, occupancy=pool_config.capacity,
                           threshold_tau=0.0, config=pool_config)


# -- checkpointing ------------------------------------------------------------

_MAGIC = b"MEF1"
_VERSION = 1


def save_checkpoint(model, path, pool_path=None, scaler=None, extra=None):
    """Write config, metadata, and all named parameters as MEF1 binary."""
    meta = {
        "config": asdict(model.config),
        "seed": model.seed,
        "pool_path": pool_path,
        "scaler": scaler.to_dict() if scaler is not None else None,
    }
    if extra:
        meta.update(extra)
    blob = json.dumps(meta).encode()
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", p.data.ndim))
            for dim in p.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(p.data.astype("<f4").tobytes())


def load_checkpoint(path):
    """Rebuild a model (and its metadata dict) from an MEF1 file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    if off + meta_len + 4 > len(blob):
        raise FormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(bytes(view[off:off + meta_len]))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt metadata: {exc}") from None
    off += meta_len
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    stored = {}
    try:
        for _ in range(n_params):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = bytes(view[off:off + name_len]).decode()
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            stored[name] = arr
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated parameter block: {exc}") from None
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    model = MetaEformer(ModelConfig(**meta["config"]), seed=meta.get("seed", 0))
    params = model.named_parameters()
    if set(params) != set(stored):
        raise FormatError(f"{path}: parameter names do not match the config")
    for name, arr in stored.items():
        if params[name].data.shape != arr.shape:
            raise FormatError(f"{path}: shape mismatch for {name}")
        params[name].data = arr.astype(params[name].data.dtype)
    return model, meta
