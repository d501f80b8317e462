"""End-to-end forecasting demo on a synthetic daily-load series.

Trains a small model, prints the loss curve, forecasts one horizon, and lists
which pool patterns the echo retrieval consulted for the prediction.

Run:  python3 demos/echo_forecasting.py   (about a minute on CPU)
"""

import numpy as np

from metaeformer.data import (LoadSeries, Scaler, make_windows, split_series,
                              time_marks)
from metaeformer.model import MetaEformer, ModelConfig
from metaeformer.pool import PoolConfig
from metaeformer.training import TrainConfig, evaluate, train


def main():
    rng = np.random.default_rng(0)
    n = 960
    t = np.arange(n, dtype=float)
    load = 2.0 + np.sin(2 * np.pi * t / 24) + 0.3 * np.sin(2 * np.pi * t / 12)
    load += rng.normal(0, 0.05, size=n)
    ts = np.datetime64("2024-01-01T00:00:00", "s") + np.timedelta64(3600, "s") * np.arange(n)
    series = LoadSeries(timestamps=ts, values=load[:, None])

    tr, va, te = split_series(series)
    scaler = Scaler.fit(tr.values)
    for part in (tr, va, te):
        part.values = scaler.normalize(part.values)
    lookback, horizon, token = 48, 24, 12
    trw = make_windows(tr, lookback, horizon, token)
    vaw = make_windows(va, lookback, horizon, token)
    tew = make_windows(te, lookback, horizon, token)
    print(f"windows: {len(trw)} train / {len(vaw)} val / {len(tew)} test")

    cfg = ModelConfig(lookback=lookback, horizon=horizon, token_len=token,
                      d_model=32, heads=4, encoder_layers=1, decoder_layers=1,
                      top_k=8, slice_len=16, dropout=0.0, period=24)
    model = MetaEformer(cfg, seed=0)
    tc = TrainConfig(learning_rate=2e-3, batch_size=32, epochs=10, seed=0,
                     update_interval=20)
    model, pool, history = train(model, None, trw, vaw, tc,
                                 pool_config=PoolConfig(capacity=64, slice_len=16,
                                                        period=24))
    for e, (trl, val) in enumerate(zip(history.train_loss, history.val_loss)):
        print(f"epoch {e:2d}  train {trl:.4f}  val {val:.4f}  "
              f"pool occupancy {history.pool_occupancy[e]}")

    metrics = evaluate(model, pool, tew)
    print(f"\ntest mse {metrics.mse:.4f}  mae {metrics.mae:.4f} (normalized)")

    # Forecast the final window and inspect the echo retrieval.
    w = tew[-1]
    out = model.forecast(w.x[None], w.marks_x[None], w.marks_y[None], None,
                         pool, scaler=scaler, inspect=True)
    truth = scaler.denormalize(w.y)
    print("\n  step   truth  predicted")
    for i in range(0, horizon, 4):
        print(f"  {i:4d}  {truth[i, 0]:6.2f}  {out.prediction[0, i, 0]:9.2f}")
    rows = sorted({r[3] for r in out.echo_records})
    print(f"\necho retrieval consulted pool rows {rows}")


if __name__ == "__main__":
    main()
