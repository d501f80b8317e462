"""Command-line front end.

One JSON config file drives reproducible runs; individual flags override the
config. Exit codes: 0 success, 1 validation error, 2 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields

import numpy as np

from .data import (Scaler, ScenarioSpec, adf_test, generate_scenario, load_csv,
                   make_windows, preset_scenario, split_series, time_marks)
from .errors import ConfigError, FormatError, InputError, StateError
from .model import MetaEformer, ModelConfig, load_checkpoint, random_pool, save_checkpoint
from .pool import PoolConfig, load_pool, save_pool
from .training import TrainConfig, evaluate, run_ablation, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _dataclass_from(cls, doc, section):
    allowed = {f.name for f in fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    return cls(**doc)


def load_run_config(path, seed_override=None):
    """Parse and cross-validate the JSON run config."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not valid JSON: {exc}") from None
    model_cfg = _dataclass_from(ModelConfig, doc.get("model", {}), "model")
    pool_doc = dict(doc.get("pool", {}))
    pool_doc.setdefault("slice_len", model_cfg.slice_len)
    pool_doc.setdefault("period", model_cfg.period)
    pool_cfg = _dataclass_from(PoolConfig, pool_doc, "pool")
    train_cfg = _dataclass_from(TrainConfig, doc.get("train", {}), "train")
    if seed_override is not None:
        train_cfg.seed = seed_override
    if pool_cfg.slice_len != model_cfg.slice_len:
        raise ConfigError(f"pool.slice_len {pool_cfg.slice_len} != model.slice_len {model_cfg.slice_len}")
    if model_cfg.top_k > pool_cfg.capacity:
        raise ConfigError(f"model.top_k {model_cfg.top_k} exceeds pool.capacity {pool_cfg.capacity}")
    return model_cfg, pool_cfg, train_cfg, doc.get("data", {})


def _load_dataset(data_doc, seed):
    if "csv" in data_doc:
        return load_csv(data_doc["csv"],
                        timestamp_col=data_doc.get("timestamp_col", "timestamp"),
                        forward_fill=data_doc.get("forward_fill", False))
    preset = data_doc.get("preset", "switch")
    return generate_scenario(
        preset_scenario(preset,
                        length=data_doc.get("length", 1200),
                        noise_std=data_doc.get("noise_std", 0.05)),
        seed=seed)


def _normalized_splits(series, model_cfg, data_doc):
    ratios = tuple(data_doc.get("split", (0.7, 0.1, 0.2)))
    tr, va, te = split_series(series, ratios)
    scaler = Scaler.fit(tr.values)
    out = []
    for part in (tr, va, te):
        part.values = scaler.normalize(part.values)
        try:
            out.append(make_windows(part, model_cfg.lookback, model_cfg.horizon,
                                    model_cfg.token_len,
                                    stride=data_doc.get("stride", 1)))
        except InputError:
            out.append([])
    return out[0], out[1], out[2], scaler


def cmd_train(args):
    model_cfg, pool_cfg, train_cfg, data_doc = load_run_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    series = _load_dataset(data_doc, train_cfg.seed)
    tr, va, te, scaler = _normalized_splits(series, model_cfg, data_doc)
    model = MetaEformer(model_cfg, seed=train_cfg.seed)
    mpp = random_pool(pool_cfg, np.random.default_rng(train_cfg.seed)) \
        if model_cfg.ablation == "de_mpp" else None
    model, mpp, history = train(model, mpp, tr, va, train_cfg, pool_config=pool_cfg)
    pool_path = os.path.join(args.out, "pool.mpp")
    save_pool(mpp, pool_path)
    save_checkpoint(model, os.path.join(args.out, "checkpoint.mef"),
                    pool_path=pool_path, scaler=scaler)
    history.write_csv(os.path.join(args.out, "history.csv"))
    history.write_update_deltas(os.path.join(args.out, "pool_updates.csv"))
    final = evaluate(model, mpp, va or tr)
    if not args.quiet:
        print(f"validation mse={final.mse:.6f} mae={final.mae:.6f}")
    return EXIT_OK


def _load_model_and_pool(args):
    model, meta = load_checkpoint(args.checkpoint)
    pool_path = getattr(args, "pool", None) or meta.get("pool_path")
    if pool_path is None:
        raise FormatError("checkpoint records no pool path; pass --pool")
    mpp = load_pool(pool_path)
    scaler = Scaler.from_dict(meta["scaler"]) if meta.get("scaler") else None
    return model, mpp, scaler


def cmd_forecast(args):
    model, mpp, scaler = _load_model_and_pool(args)
    cfg = model.config
    series = load_csv(args.input)
    if series.values.shape[0] < cfg.lookback:
        raise InputError(f"input has {series.values.shape[0]} rows, need >= {cfg.lookback}")
    x = series.values[-cfg.lookback:]
    if scaler is not None:
        x = scaler.normalize(x)
    ts = series.timestamps[-cfg.lookback:]
    k = series.interval
    future = series.timestamps[-1] + k * np.arange(1, cfg.horizon + 1)
    marks_x = time_marks(ts)[None]
    marks_de = time_marks(np.concatenate([ts[-cfg.token_len:], future]))[None]
    s_ctx = series.static_context[None] if series.static_context is not None else None
    out = model.forecast(x[None], marks_x, marks_de, s_ctx, mpp, scaler=scaler,
                         inspect=bool(args.echo_csv))
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + [f"value_{i}" for i in range(cfg.d_in)])
        for t, row in zip(future, out.prediction[0]):
            w.writerow([np.datetime_as_string(t, unit="s")] + [f"{v:.6f}" for v in row])
    if args.echo_csv:
        with open(args.echo_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch_index", "block_index", "rank", "pool_row", "similarity"])
            w.writerows(out.echo_records)
    if not args.quiet:
        print(f"wrote {cfg.horizon} prediction rows to {args.output}")
    return EXIT_OK


def cmd_evaluate(args):
    model, mpp, scaler = _load_model_and_pool(args)
    cfg = model.config
    series = load_csv(args.input)
    if scaler is not None:
        series.values = scaler.normalize(series.values)
    windows = make_windows(series, cfg.lookback, cfg.horizon, cfg.token_len)
    metrics = evaluate(model, mpp, windows)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mse", "mae"])
        w.writerow([f"{metrics.mse:.6f}", f"{metrics.mae:.6f}"])
    if not args.quiet:
        print(f"mse={metrics.mse:.6f} mae={metrics.mae:.6f}")
    return EXIT_OK


def cmd_ablate(args):
    model_cfg, pool_cfg, train_cfg, data_doc = load_run_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    seeds = data_doc.get("ablation_seeds", [train_cfg.seed])

    def make(seed):
        series = _load_dataset(data_doc, seed)
        tr, va, te, _ = _normalized_splits(series, model_cfg, data_doc)
        return tr, va, te

    out_csv = os.path.join(args.out, "ablation.csv")
    run_ablation(make, model_cfg, pool_cfg, train_cfg, seeds=seeds, out_csv=out_csv)
    if not args.quiet:
        print(f"wrote {out_csv}")
    return EXIT_OK


def cmd_gen(args):
    if args.spec:
        spec = ScenarioSpec.from_json(args.spec)
    else:
        spec = preset_scenario(args.preset, length=args.length, noise_std=args.noise_std)
    series = generate_scenario(spec, seed=args.seed or 0)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "value"])
        for t, v in zip(series.timestamps, series.values[:, 0]):
            w.writerow([np.datetime_as_string(t, unit="s"), f"{v:.6f}"])
    if not args.quiet:
        print(f"wrote {series.values.shape[0]} rows to {args.output}")
    return EXIT_OK


def cmd_adf(args):
    series = load_csv(args.input)
    for j in range(series.values.shape[1]):
        res = adf_test(series.values[:, j])
        verdict = "stationary" if res.is_stationary else "non-stationary"
        print(f"column {j}: statistic={res.statistic:.4f} "
              f"crit_1pct={res.critical_value_1pct:.4f} {verdict}")
    return EXIT_OK


def cmd_inspect_pool(args):
    mpp = load_pool(args.pool)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [f"v{i}" for i in range(mpp.config.slice_len)])
        for r in range(mpp.occupancy):
            w.writerow([r] + [f"{v:.6f}" for v in mpp.patterns[r]])
    if not args.quiet:
        print(f"occupancy={mpp.occupancy} tau={mpp.threshold_tau:.4f} "
              f"capacity={mpp.config.capacity}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="metaeformer")
    parser.add_argument("--quiet", action="store_true", help="suppress status output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="predict the next horizon from a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pool")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--echo-csv", help="also export echo selection records")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a model on a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pool")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score every ablation variant")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen", help="generate a synthetic scenario CSV")
    p.add_argument("--preset", default="switch", choices=["switch", "new_app"])
    p.add_argument("--spec", help="JSON scenario spec (overrides --preset)")
    p.add_argument("--length", type=int, default=1200)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("adf", help="unit-root test per value column")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_adf)

    p = sub.add_parser("inspect-pool", help="dump pool rows as CSV")
    p.add_argument("--pool", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_inspect_pool)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
