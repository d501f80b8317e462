"""Echo mechanism: deconstruct features into waveforms, retrieve the most
similar pool patterns, and reconstruct them as new features (Echo Layer) or
as decoder-input filler (Echo Padding)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decomposition import decompose_batch
from .errors import ConfigError, StateError
from .nn import Linear, Module
from .pool import standardize


@dataclass
class EchoSelection:
    indices: np.ndarray     # (B, K) pool row indices, similarity-descending
    values: np.ndarray      # (B, K) similarity scores
    selected: np.ndarray    # (B, K, s) chosen patterns
    padded: bool            # True when occupancy < K forced repetition


class EchoProjections(Module):
    """Learnable projections of one Echo Layer instance."""

    def __init__(self, d_model, k, rng, name):
        if d_model % 2 != 0:
            raise ConfigError(f"d_model must be even, got {d_model}")
        half = d_model // 2
        self.query_reduce = Linear(half, 1, rng, f"{name}.query_reduce")
        self.dr = Linear(half, k, rng, f"{name}.dr")
        self.di = Linear(k, half, rng, f"{name}.di")


def deconstruct(a_en, s):
    """Slice the second-half features of (B, L, d_model) into L/s time blocks."""
    b, length, d = a_en.shape
    if d % 2 != 0:
        raise ConfigError(f"d_model must be even, got {d}")
    if length % s != 0:
        raise ConfigError(f"sequence length {length} not divisible by slice length {s}")
    half = d // 2
    return [a_en[:, i * s:(i + 1) * s, half:] for i in range(length // s)]


def select_top_k(queries, mpp, k):
    """Pick the K most similar filled pool rows for each batched query waveform.

    ``queries`` is a (B, s) array, standardized before comparison. Ties break
    toward the lower pool index; if fewer rows are filled than K, the best row
    repeats to pad the selection.
    """
    if mpp is None or mpp.occupancy == 0:
        raise StateError("meta-pattern pool is empty; construct it first")
    q = standardize(np.asarray(queries, dtype=np.float64))
    rows = mpp.filled
    scores = q @ rows.T                                   # (B, occupancy)
    b = q.shape[0]
    padded = mpp.occupancy < k
    indices = np.empty((b, k), dtype=np.int64)
    values = np.empty((b, k), dtype=np.float64)
    for i in range(b):
        order = np.argsort(-scores[i], kind="stable")     # stable: lower index wins ties
        take = order[:k]
        if padded:
            take = np.concatenate([take, np.full(k - take.size, order[0], dtype=np.int64)])
        indices[i] = take
        values[i] = scores[i][take]
    return EchoSelection(indices=indices, values=values,
                         selected=rows[indices], padded=padded)


def echo_layer(a_en, mpp, proj, k, s, inspector=None):
    """Reconstruct the second-half features of ``a_en`` from pool patterns.

    Per time block: adaptive softmax weights (over K) from the block features
    scale the selected patterns elementwise, a dimension-increase linear lifts
    the K channels back to d_model/2, and the untouched first-half features
    pass straight through.
    """
    b, length, d = a_en.shape
    half = d // 2
    blocks = deconstruct(a_en, s)
    outs = []
    for i, block in enumerate(blocks):
        query = ad.reshape(proj.query_reduce(block), (b, s))
        selection = select_top_k(query.data, mpp, k)
        if inspector is not None:
            inspector.record(i, selection)
        weights = ad.softmax(proj.dr(block), axis=-1)              # (B, s, K)
        chosen = Tensor(np.swapaxes(selection.selected, 1, 2))     # (B, s, K)
        outs.append(proj.di(weights * chosen))                     # (B, s, half)
    merged = ad.concat(outs, axis=1)                               # (B, L, half)
    return ad.concat([a_en[:, :, :half], merged], axis=-1)


def echo_padding(x, mpp, pad_reduce, k, horizon, s, period=24):
    """Fill decoder inputs of length ``horizon`` from echoed pool patterns.

    The last ceil(horizon/s) seasonal slices of the lookback window each echo
    their Top-K patterns; softmax weights from the raw seasonal slices blend
    the K channels per step, and the aggregate replicates across features.
    """
    if mpp is None or mpp.occupancy == 0:
        raise StateError("meta-pattern pool is empty; construct it first")
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    b, length, d = data.shape
    n_slices = -(-horizon // s)                            # ceil
    if n_slices * s > length:
        raise ConfigError(f"horizon {horizon} needs {n_slices} slices of {s} > lookback {length}")
    _, seasonal = decompose_batch(data.astype(np.float64), period)
    tail = seasonal[:, length - n_slices * s:, :]          # (B, n*s, d)
    steps = []
    for i in range(n_slices):
        sl = tail[:, i * s:(i + 1) * s, :]                 # (B, s, d)
        selection = select_top_k(sl[:, :, 0], mpp, k)
        weights = ad.softmax(pad_reduce(Tensor(sl)), axis=-1)      # (B, s, K)
        chosen = Tensor(np.swapaxes(selection.selected, 1, 2))     # (B, s, K)
        steps.append(ad.tsum(weights * chosen, axis=-1))           # (B, s)
    flat = ad.concat(steps, axis=1)                        # (B, n*s)
    flat = flat[:, :horizon]
    tiled = ad.reshape(flat, (b, horizon, 1))
    return ad.concat([tiled] * d, axis=-1) if d > 1 else tiled


class EchoInspector:
    """Collects per-block Top-K selection records for later export."""

    def __init__(self):
        self.records = []

    def record(self, block_index, selection):
        b, k = selection.indices.shape
        for bi in range(b):
            for rank in range(k):
                self.records.append((bi, block_index, rank,
                                     int(selection.indices[bi, rank]),
                                     float(selection.values[bi, rank])))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["batch_index", "block_index", "rank", "pool_row", "similarity"])
            writer.writerows(self.records)
