"""Training loop: ADAM updates, scheduled pool maintenance, evaluation,
history export, and the ablation driver."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InputError
from .model import ABLATIONS, MetaEformer, random_pool
from .pool import construct_pool, update_pool


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    update_interval: int = 50
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class Metrics:
    mse: float
    mae: float


@dataclass
class History:
    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    pool_occupancy: List[int] = field(default_factory=list)
    pool_update_count: List[int] = field(default_factory=list)
    update_deltas: List[tuple] = field(default_factory=list)  # (update_idx, row, l2)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "pool_occupancy", "pool_update_count"])
            for row in zip(self.epochs, self.train_loss, self.val_loss,
                           self.pool_occupancy, self.pool_update_count):
                w.writerow([row[0], f"{row[1]:.10f}", f"{row[2]:.10f}", row[3], row[4]])

    def write_update_deltas(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["update_index", "row", "delta_l2"])
            for rec in self.update_deltas:
                w.writerow([rec[0], rec[1], f"{rec[2]:.10f}"])


class AdamOptimizer:
    """Standard ADAM with bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            g = g.astype(np.float64)
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def _stack_batch(windows):
    x = np.stack([w.x for w in windows])
    y = np.stack([w.y for w in windows])
    mx = np.stack([w.marks_x for w in windows])
    my = np.stack([w.marks_y for w in windows])
    s = None
    if windows[0].static is not None:
        s = np.stack([w.static for w in windows])
    return x, y, mx, my, s


def _batches(windows, batch_size, rng=None):
    order = np.arange(len(windows))
    if rng is not None:
        rng.shuffle(order)
    for lo in range(0, len(order), batch_size):
        chunk = [windows[i] for i in order[lo:lo + batch_size]]
        yield _stack_batch(chunk)


def mse_loss(pred, target):
    diff = pred - Tensor(target)
    return ad.tmean(diff * diff)


def evaluate(model, mpp, windows, batch_size=64, original_scale=False, scaler=None):
    """MSE/MAE over all windows; the pool is never touched here."""
    if not windows:
        raise InputError("empty evaluation dataset")
    se = aer = 0.0
    count = 0
    with ad.no_grad():
        for x, y, mx, my, s in _batches(windows, batch_size):
            pred = model.forward(x, mx, my, s, mpp, training=False).data
            if original_scale:
                if scaler is None:
                    raise InputError("original-scale metrics need a fitted scaler")
                pred = scaler.denormalize(pred)
                y = scaler.denormalize(y)
            se += float(((pred - y) ** 2).sum())
            aer += float(np.abs(pred - y).sum())
            count += y.size
    return Metrics(mse=se / count, mae=aer / count)


def train(model, mpp, train_windows, val_windows, config, pool_config=None):
    """Train the model; the pool is built on the first batch and updated on a
    fixed batch interval. Returns (best_model, pool, history).

    ``pool_config`` is required when ``mpp`` is None and the pool must be
    constructed. Under the de_mpp ablation, ``mpp`` must already be a random
    pool and is left untouched.
    """
    if not train_windows:
        raise InputError("empty training dataset")
    if mpp is None and pool_config is None and model.config.ablation != "de_mpp":
        raise InputError("pool_config required to construct the pool")
    rng = np.random.default_rng(config.seed)
    opt = AdamOptimizer(model.parameters(), config.learning_rate,
                        config.beta1, config.beta2, config.eps)
    history = History()
    best_val = np.inf
    best_state = None
    bad_epochs = 0
    batch_counter = 0
    update_count = 0
    de_mpp = model.config.ablation == "de_mpp"

    for epoch in range(config.epochs):
        losses = []
        for x, y, mx, my, s in _batches(train_windows, config.batch_size, rng):
            if not de_mpp:
                pool_input = x[:, :, :1]
                if mpp is None:
                    mpp = construct_pool(pool_input, pool_config)
                elif batch_counter > 0 and batch_counter % config.update_interval == 0:
                    before = mpp.patterns.copy()
                    update_pool(mpp, pool_input)
                    update_count += 1
                    deltas = np.linalg.norm(mpp.patterns - before, axis=1)
                    for row in np.flatnonzero(deltas > 0):
                        history.update_deltas.append((update_count, int(row), float(deltas[row])))
            batch_counter += 1
            opt.zero_grad()
            pred = model.forward(x, mx, my, s, mpp, training=True)
            loss = mse_loss(pred, y)
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        val = evaluate(model, mpp, val_windows) if val_windows else None
        val_loss = val.mse if val else float(np.mean(losses))
        history.epochs.append(epoch)
        history.train_loss.append(float(np.mean(losses)))
        history.val_loss.append(val_loss)
        history.pool_occupancy.append(mpp.occupancy if mpp else 0)
        history.pool_update_count.append(update_count)
        if val_loss < best_val:
            best_val = val_loss
            best_state = {n: p.data.copy() for n, p in model.named_parameters().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    if best_state is not None:
        params = model.named_parameters()
        for name, data in best_state.items():
            params[name].data = data
    return model, mpp, history


def run_ablation(make_windows_fn, model_config, pool_config, train_config,
                 seeds=(0,), variants=ABLATIONS, out_csv=None):
    """Train every ablation variant under identical seeds and data ordering.

    ``make_windows_fn(seed)`` must return (train_windows, val_windows,
    test_windows). Returns {variant: [Metrics per seed]}; optionally writes
    the per-variant median table as CSV.
    """
    results = {v: [] for v in variants}
    for seed in seeds:
        tr, va, te = make_windows_fn(seed)
        for variant in variants:
            cfg = replace(model_config, ablation=variant)
            model = MetaEformer(cfg, seed=seed)
            mpp = random_pool(pool_config, np.random.default_rng(seed)) \
                if variant == "de_mpp" else None
            tc = replace(train_config, seed=seed)
            model, mpp, _ = train(model, mpp, tr, va, tc, pool_config=pool_config)
            results[variant].append(evaluate(model, mpp, te))
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "mse", "mae"])
            for variant in variants:
                mses = sorted(m.mse for m in results[variant])
                maes = sorted(m.mae for m in results[variant])
                w.writerow([variant, f"{np.median(mses):.6f}", f"{np.median(maes):.6f}"])
    return results
