"""Purification and maintenance of the meta-pattern pool.

Seasonal waveforms are sliced, standardized, compared with a dot-product
similarity, and fused above a data-dependent threshold into a fixed-capacity
pool of patterns. The pool is constructed once from the first training batch
and evolved afterwards by convex row updates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .decomposition import decompose_batch
from .errors import ConfigError, FormatError, InputError, StateError

_STD_FLOOR = 1e-8
_MAGIC = b"MPP1"


@dataclass
class PoolConfig:
    capacity: int = 128            # P
    slice_len: int = 16            # s
    alpha: float = 0.5
    gamma: float = 0.1
    update_interval: int = 50
    period: int = 24               # decomposition period feeding the slicer

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        if self.slice_len < 2:
            raise ConfigError(f"slice_len must be >= 2, got {self.slice_len}")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass
class MetaPatternPool:
    patterns: np.ndarray           # (P, s)
    occupancy: int
    threshold_tau: float
    config: PoolConfig

    @property
    def filled(self):
        return self.patterns[: self.occupancy]


def standardize(w):
    """(w - mean) / population std; all zeros when the slice is constant."""
    w = np.asarray(w, dtype=np.float64)
    mu = w.mean(axis=-1, keepdims=True)
    sd = w.std(axis=-1, keepdims=True)
    out = np.where(sd < _STD_FLOOR, 0.0, (w - mu) / np.where(sd < _STD_FLOOR, 1.0, sd))
    return out


def slice_waveforms(seasonal_batch, s):
    """Slice a (B, L, 1) seasonal batch into a standardized (B*L/s, s) matrix."""
    x = np.asarray(seasonal_batch)
    if x.ndim == 3:
        x = x[:, :, 0]
    B, L = x.shape
    if L % s != 0:
        raise ConfigError(f"lookback L={L} not divisible by slice length s={s}")
    rows = x.reshape(B * (L // s), s)
    return standardize(rows)


def sim(w1, w2):
    """Alignment similarity: plain dot product of two equal-length waveforms."""
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape != w2.shape:
        raise InputError(f"waveform lengths differ: {w1.shape} vs {w2.shape}")
    return float(np.dot(w1, w2))


def similarity_matrix(W):
    """Strictly upper-triangular pairwise similarity matrix of the rows of W."""
    W = np.asarray(W, dtype=np.float64)
    R = W.shape[0]
    if R < 2:
        raise InputError(f"need at least 2 waveforms, got {R}")
    full = W @ W.T
    return np.triu(full, k=1)


def purification_threshold(SM, capacity, alpha):
    """Mean-plus-scaled-deviation threshold over the strict upper triangle."""
    SM = np.asarray(SM, dtype=np.float64)
    R = SM.shape[0]
    iu = np.triu_indices(R, k=1)
    if iu[0].size == 0:
        raise InputError("similarity matrix has an empty upper triangle")
    vals = SM[iu]
    return float(vals.mean() + (alpha * capacity / R) * vals.std())


def construct_pool(first_batch, config):
    """Build the pool from the first training batch.

    Each waveform row either fuses its above-threshold similar set into a
    similarity-weighted pattern or enters the pool verbatim. Once the pool is
    full, remaining rows merge into their most similar existing pattern with
    the same convex rule used by :func:`update_pool`.
    """
    s = config.slice_len
    _, seasonal = decompose_batch(np.asarray(first_batch, dtype=np.float64), config.period)
    W = slice_waveforms(seasonal, s)
    R = W.shape[0]
    if R < 2:
        raise InputError(f"first batch yields only {R} waveform(s)")
    SM = similarity_matrix(W)
    tau = purification_threshold(SM, config.capacity, config.alpha)

    pool = MetaPatternPool(
        patterns=np.zeros((config.capacity, s), dtype=np.float64),
        occupancy=0,
        threshold_tau=tau,
        config=config,
    )
    for i in range(R):
        row_sims = SM[i]
        nu = row_sims.max() if R else 0.0
        if nu > tau:
            similar = np.flatnonzero(row_sims > tau)
            weights = row_sims[similar]
            total = weights.sum()
            if total > 0:
                pattern = (W[similar].T @ (weights / total))
            else:
                pattern = W[i]  # degenerate weights: keep the raw waveform
        else:
            pattern = W[i]
        _admit(pool, pattern)
    return pool


def _admit(pool, waveform):
    """Append to a free row, or convex-merge into the most similar row."""
    if pool.occupancy < pool.config.capacity:
        pool.patterns[pool.occupancy] = waveform
        pool.occupancy += 1
    else:
        _merge_best(pool, waveform)


def _merge_best(pool, waveform):
    g = pool.config.gamma
    best = int(np.argmax(pool.filled @ waveform))
    pool.patterns[best] = (1.0 - g) * pool.patterns[best] + g * waveform


def update_pool(pool, batch):
    """Fold a new batch into a constructed pool (in place; returns the pool).

    Waveforms whose best pool similarity exceeds the stored threshold update
    their best-matching row by a convex step of size gamma; the rest fill
    empty rows while capacity lasts, then convex-merge like matches do.
    """
    if pool is None or pool.occupancy == 0:
        raise StateError("pool must be constructed before update")
    cfg = pool.config
    g = cfg.gamma
    _, seasonal = decompose_batch(np.asarray(batch, dtype=np.float64), cfg.period)
    W = slice_waveforms(seasonal, cfg.slice_len)
    for w in W:
        sims = pool.filled @ w
        best = int(np.argmax(sims))
        if sims[best] > pool.threshold_tau:
            pool.patterns[best] = (1.0 - g) * pool.patterns[best] + g * w
        elif pool.occupancy < cfg.capacity:
            pool.patterns[pool.occupancy] = w
            pool.occupancy += 1
        else:
            pool.patterns[best] = (1.0 - g) * pool.patterns[best] + g * w
    return pool


# -- persistence -------------------------------------------------------------


def save_pool(pool, path):
    """Write the pool in the MPP1 binary layout (little-endian, f32 rows)."""
    cfg = pool.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", cfg.capacity, cfg.slice_len, pool.occupancy))
        fh.write(struct.pack("<fff", pool.threshold_tau, cfg.gamma, cfg.alpha))
        fh.write(pool.patterns.astype("<f4").tobytes())


def load_pool(path):
    """Read a pool written by :func:`save_pool`; fails closed on any damage."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic")
    header = 4 + 12 + 12
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header")
    capacity, s, occupancy = struct.unpack_from("<III", blob, 4)
    tau, gamma, alpha = struct.unpack_from("<fff", blob, 16)
    body = blob[header:]
    expected = capacity * s * 4
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} pattern bytes, got {len(body)}")
    if occupancy > capacity:
        raise FormatError(f"{path}: occupancy {occupancy} exceeds capacity {capacity}")
    patterns = np.frombuffer(body, dtype="<f4").reshape(capacity, s).astype(np.float64)
    cfg = PoolConfig(capacity=capacity, slice_len=s, alpha=alpha, gamma=gamma)
    return MetaPatternPool(patterns=patterns, occupancy=occupancy,
                           threshold_tau=tau, config=cfg)
