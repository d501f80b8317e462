"""Acceptance suite: one test per release criterion.

Each test prints a single "criterion N (...): PASS/FAIL" line (visible with
``pytest -s``) and asserts the property at the stated tolerance.
"""

import time

import numpy as np
import pytest

from _oracles import construct_reference, top_k_reference
from metaeformer import autodiff as ad
from metaeformer.autodiff import Tensor
from metaeformer.data import (LoadSeries, Scaler, adf_test, generate_scenario,
                              make_windows, preset_scenario, split_series)
from metaeformer.decomposition import decompose, decompose_batch
from metaeformer.echo import EchoProjections, echo_layer, select_top_k
from metaeformer.model import (MetaEformer, ModelConfig, load_checkpoint, random_pool,
                               save_checkpoint)
from metaeformer.pool import (MetaPatternPool, PoolConfig, construct_pool, load_pool,
                              save_pool, sim, slice_waveforms, standardize,
                              update_pool)
from metaeformer.training import (AdamOptimizer, TrainConfig, evaluate, mse_loss,
                                  train)


class report:
    """Prints the per-criterion verdict line as the test body finishes."""

    def __init__(self, num, name):
        self.num, self.name = num, name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        print(f"criterion {self.num} ({self.name}): {verdict}")
        return False


def hourly(n):
    return np.datetime64("2024-01-01T00:00:00", "s") + np.timedelta64(3600, "s") * np.arange(n)


def sine_trend_series(n, period=8.0, trend=0.02, noise=0.0, seed=0):
    t = np.arange(n, dtype=float)
    x = np.sin(2 * np.pi * t / period) + trend * t
    if noise:
        x = x + np.random.default_rng(seed).normal(0.0, noise, size=n)
    return LoadSeries(timestamps=hourly(n), values=x[:, None])


def normalized_windows(series, lookback, horizon, token_len):
    scaler = Scaler.fit(series.values)
    series.values = scaler.normalize(series.values)
    return make_windows(series, lookback, horizon, token_len), scaler


def test_criterion_01_decomposition_identity():
    with report(1, "decomposition identity"):
        rng = np.random.default_rng(0)
        start = time.perf_counter()
        for _ in range(100):
            n = int(rng.integers(10, 200))
            d = int(rng.integers(1, 4))
            period = int(rng.integers(2, 25))
            x = rng.normal(scale=rng.uniform(0.1, 10.0), size=(n, d))
            res = decompose(x, period=period)
            assert np.abs(res.trend + res.seasonal - x).max() <= 1e-6
        assert time.perf_counter() - start < 1.0


def test_criterion_02_similarity_algebra():
    with report(2, "similarity algebra"):
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        for s in (4, 8, 16):
            w = standardize(rng.normal(size=(1000, s)))
            v = standardize(rng.normal(size=(1000, s)))
            self_sim = np.einsum("ij,ij->i", w, w)
            np.testing.assert_allclose(self_sim, s, atol=1e-4)
            np.testing.assert_allclose(np.einsum("ij,ij->i", w, -w), -s, atol=1e-4)
            cross = np.einsum("ij,ij->i", w, v)
            assert np.abs(cross).max() <= s + 1e-4
            assert abs(sim(w[0], w[0]) - s) <= 1e-4
        assert time.perf_counter() - start < 1.0


def test_criterion_03_pool_construction_oracle():
    with report(3, "pool construction matches literal transcription"):
        rng = np.random.default_rng(2)
        start = time.perf_counter()
        for _ in range(50):
            s = int(rng.choice([4, 8]))
            blocks = max(1, 32 // s - int(rng.integers(0, 3)))
            length = blocks * s
            b = int(rng.integers(1, 9)) if blocks > 1 else int(rng.integers(2, 9))
            capacity = int(rng.integers(2, 12))
            x = rng.normal(size=(b, length, 1))
            cfg = PoolConfig(capacity=capacity, slice_len=s, period=2)
            pool = construct_pool(x, cfg)
            ref_rows, ref_occ, ref_tau = construct_reference(
                x, capacity, s, cfg.alpha, cfg.gamma, cfg.period)
            assert pool.occupancy == ref_occ
            assert abs(pool.threshold_tau - ref_tau) <= 1e-5
            np.testing.assert_allclose(pool.patterns[:ref_occ], ref_rows[:ref_occ],
                                       atol=1e-5)
        assert time.perf_counter() - start < 10.0


def test_criterion_04_pool_update_invariants():
    with report(4, "pool update invariants"):
        rng = np.random.default_rng(3)
        start = time.perf_counter()
        s = 4
        for _ in range(50):
            capacity = int(rng.integers(2, 8))
            cfg = PoolConfig(capacity=capacity, slice_len=s, period=2)
            pool = construct_pool(rng.normal(size=(2, 2 * s, 1)), cfg)
            for _ in range(int(rng.integers(1, 10))):
                before = pool.patterns.copy()
                occ_before = pool.occupancy
                batch = rng.normal(size=(1, s, 1))
                update_pool(pool, batch)
                assert occ_before <= pool.occupancy <= capacity
                w = slice_waveforms(decompose_batch(batch, cfg.period)[1], s)[0]
                changed = np.flatnonzero(np.any(pool.patterns != before, axis=1))
                for row in changed:
                    if row >= occ_before:
                        continue  # freshly appended row
                    lo = np.minimum(before[row], w) - 1e-12
                    hi = np.maximum(before[row], w) + 1e-12
                    assert ((pool.patterns[row] >= lo) & (pool.patterns[row] <= hi)).all()
            # fixed point: once a row has converged onto the incoming waveform,
            # further presentations of that waveform leave it unchanged
            pool.threshold_tau = -1e9
            batch = rng.normal(size=(1, s, 1))
            w = slice_waveforms(decompose_batch(batch, cfg.period)[1], s)[0]
            for _ in range(300):
                update_pool(pool, batch)
            row = int(np.argmax(pool.filled @ w))
            settled = pool.patterns[row].copy()
            update_pool(pool, batch)
            np.testing.assert_allclose(pool.patterns[row], settled, atol=1e-6)
        assert time.perf_counter() - start < 10.0


def test_criterion_05_echo_contracts():
    with report(5, "echo passthrough, top-k, softmax weights"):
        rng = np.random.default_rng(4)
        start = time.perf_counter()
        for _ in range(50):
            s = int(rng.choice([4, 8]))
            blocks = int(rng.integers(1, 4))
            d_model = int(rng.choice([4, 8, 16]))
            capacity = int(rng.integers(2, 20))
            k = int(rng.integers(1, capacity + 1))
            b = int(rng.integers(1, 5))
            pool = MetaPatternPool(
                patterns=standardize(rng.normal(size=(capacity, s))),
                occupancy=capacity, threshold_tau=0.0,
                config=PoolConfig(capacity=capacity, slice_len=s, period=2))
            proj = EchoProjections(d_model, k, np.random.default_rng(0), "echo")
            x = rng.normal(size=(b, blocks * s, d_model)).astype(np.float32)
            out = echo_layer(Tensor(x), pool, proj, k, s)
            half = d_model // 2
            np.testing.assert_array_equal(out.data[:, :, :half], x[:, :, :half])
            # top-k equals brute-force full sort
            q = rng.normal(size=(b, s))
            sel = select_top_k(q, pool, k)
            for bi in range(b):
                ref_idx, _ = top_k_reference(q[bi], pool.filled, k)
                assert sel.indices[bi].tolist() == ref_idx
            # softmax weights sum to one at every step
            weights = ad.softmax(proj.dr(Tensor(x[:, :, half:])), axis=-1)
            np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
        assert time.perf_counter() - start < 10.0


def test_criterion_06_end_to_end_gradient_check():
    with report(6, "end-to-end gradient check"):
        start = time.perf_counter()
        with ad.default_dtype(np.float64):
            cfg = ModelConfig(lookback=8, horizon=4, token_len=2, d_in=1,
                              d_model=8, heads=2, encoder_layers=1,
                              decoder_layers=1, top_k=2, slice_len=4,
                              static_dim=2, mark_dim=2, dropout=0.0, period=4)
            model = MetaEformer(cfg, seed=0)
            rng = np.random.default_rng(0)
            pc = PoolConfig(capacity=8, slice_len=4, period=4)
            mpp = construct_pool(rng.normal(size=(4, 8, 1)), pc)
            x = rng.normal(size=(2, 8, 1))
            mx = rng.normal(size=(2, 8, 2))
            my = rng.normal(size=(2, 6, 2))
            s_ctx = rng.normal(size=(2, 2))
            y = rng.normal(size=(2, 4, 1))

            def loss_value():
                with ad.no_grad():
                    p = model.forward(x, mx, my, s_ctx, mpp, training=False)
                return float(np.mean((p.data - y) ** 2))

            model.zero_grads()
            pred = model.forward(x, mx, my, s_ctx, mpp, training=False)
            diff = pred - Tensor(y)
            ad.tmean(diff * diff).backward()

            groups = {"embedding": "enc_embed", "static fusion": "static_lin",
                      "attention": "attn", "echo dr": "echo.dr",
                      "echo di": "echo.di", "decoder": "decoder",
                      "head": "head"}
            covered = set()
            pick = np.random.default_rng(1)
            h = 1e-5
            for name, p in model.named_parameters().items():
                if "query_reduce" in name:
                    continue  # only feeds the discrete retrieval; zero a.e.
                for label, frag in groups.items():
                    if frag in name:
                        covered.add(label)
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                flat = p.data.ravel()
                for i in pick.choice(flat.size, size=min(3, flat.size), replace=False):
                    orig = flat[i]
                    flat[i] = orig + h
                    lp = loss_value()
                    flat[i] = orig - h
                    lm = loss_value()
                    flat[i] = orig
                    fd = (lp - lm) / (2 * h)
                    an = g.ravel()[i]
                    denom = max(1e-6, abs(fd), abs(an))
                    assert abs(fd - an) / denom <= 1e-3, (name, int(i), fd, an)
            assert covered == set(groups)
        assert time.perf_counter() - start < 120.0


def test_criterion_07_overfit_tiny_dataset():
    with report(7, "overfit a small synthetic dataset"):
        start = time.perf_counter()
        series = sine_trend_series(219, period=8.0, trend=0.02)
        windows, _ = normalized_windows(series, 16, 4, 4)
        assert len(windows) == 200
        cfg = ModelConfig(lookback=16, horizon=4, token_len=4, d_in=1,
                          d_model=16, heads=2, encoder_layers=1, decoder_layers=1,
                          top_k=4, slice_len=8, static_dim=0, mark_dim=2,
                          dropout=0.0, period=8)
        model = MetaEformer(cfg, seed=0)
        tc = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=200, seed=0,
                         update_interval=10**9, patience=10**9)
        model, mpp, history = train(model, None, windows, [], tc,
                                    pool_config=PoolConfig(capacity=16, slice_len=8, period=8))
        final = evaluate(model, mpp, windows)
        assert history.train_loss[-1] <= 0.05 * history.train_loss[0], (
            history.train_loss[0], history.train_loss[-1])
        assert final.mae <= 0.05, final.mae
        assert time.perf_counter() - start <= 300.0


def _switch_windows(seed, length=420):
    spec = preset_scenario("switch", length=length, noise_std=0.05)
    series = generate_scenario(spec, seed=seed)
    tr, va, te = split_series(series)
    scaler = Scaler.fit(tr.values)
    out = []
    for part in (tr, va, te):
        part.values = scaler.normalize(part.values)
        out.append(make_windows(part, 24, 8, 4))
    return tuple(out)


def test_criterion_08_ablation_direction():
    with report(8, "removing the pool or the echo does not help"):
        start = time.perf_counter()
        cfg = ModelConfig(lookback=24, horizon=8, token_len=4, d_in=1,
                          d_model=16, heads=2, encoder_layers=1, decoder_layers=1,
                          top_k=4, slice_len=8, static_dim=0, mark_dim=2,
                          dropout=0.0, period=12)
        pc = PoolConfig(capacity=32, slice_len=8, period=12)
        results = {v: [] for v in ("none", "de_mpp", "de_el")}
        for seed in range(5):
            tr, va, te = _switch_windows(seed)
            for variant in results:
                from dataclasses import replace
                mcfg = replace(cfg, ablation=variant)
                model = MetaEformer(mcfg, seed=seed)
                mpp = random_pool(pc, np.random.default_rng(seed)) \
                    if variant == "de_mpp" else None
                tc = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=5,
                                 seed=seed, update_interval=5, patience=10**9)
                model, mpp, _ = train(model, mpp, tr, va, tc, pool_config=pc)
                results[variant].append(evaluate(model, mpp, te).mse)
        med = {v: float(np.median(r)) for v, r in results.items()}
        assert med["de_mpp"] >= med["none"], med
        assert med["de_el"] >= med["none"], med
        assert time.perf_counter() - start <= 1800.0


def test_criterion_09_pool_and_echo_overhead():
    with report(9, "pool maintenance overhead is small"):
        start = time.perf_counter()
        cfg = ModelConfig(lookback=48, horizon=24, token_len=12, d_in=1,
                          d_model=64, heads=4, encoder_layers=2, decoder_layers=1,
                          top_k=16, slice_len=16, static_dim=0, mark_dim=2,
                          dropout=0.0, period=24)
        pc = PoolConfig(capacity=128, slice_len=16, period=24)
        rng = np.random.default_rng(0)
        model = MetaEformer(cfg, seed=0)
        x = rng.normal(size=(32, 48, 1)).astype(np.float32)
        mx = rng.normal(size=(32, 48, 2)).astype(np.float32)
        my = rng.normal(size=(32, 36, 2)).astype(np.float32)
        y = rng.normal(size=(32, 24, 1)).astype(np.float32)
        mpp = construct_pool(x, pc)
        opt = AdamOptimizer(model.parameters(), 1e-4)
        step_time = extra_time = 0.0
        for _ in range(200):
            t0 = time.perf_counter()
            update_pool(mpp, rng.normal(size=(32, 48, 1)))
            queries = rng.normal(size=(32 * 3, 16))
            select_top_k(queries, mpp, 16)
            t1 = time.perf_counter()
            opt.zero_grad()
            loss = mse_loss(model.forward(x, mx, my, None, mpp, training=True), y)
            loss.backward()
            opt.step()
            t2 = time.perf_counter()
            extra_time += t1 - t0
            step_time += t2 - t1
        ratio = extra_time / step_time
        assert ratio <= 0.15, ratio
        assert time.perf_counter() - start <= 120.0


def test_criterion_10_stationarity_classification():
    with report(10, "unit-root test sanity"):
        start = time.perf_counter()
        rng = np.random.default_rng(5)
        stationary = sum(adf_test(rng.normal(size=1000)).is_stationary
                         for _ in range(20))
        walks = sum(not adf_test(np.cumsum(rng.normal(size=1000))).is_stationary
                    for _ in range(20))
        assert stationary >= 19, stationary
        assert walks >= 19, walks
        assert time.perf_counter() - start < 30.0


def test_criterion_11_persistence_round_trips(tmp_path):
    with report(11, "bit-exact persistence"):
        start = time.perf_counter()
        rng = np.random.default_rng(6)
        pc = PoolConfig(capacity=16, slice_len=8, period=8)
        mpp = construct_pool(rng.normal(size=(4, 24, 1)), pc)
        p1, p2 = tmp_path / "a.mpp", tmp_path / "b.mpp"
        save_pool(mpp, p1)
        save_pool(load_pool(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

        cfg = ModelConfig(lookback=16, horizon=4, token_len=4, d_in=1,
                          d_model=16, heads=2, encoder_layers=1, decoder_layers=1,
                          top_k=4, slice_len=8, static_dim=0, mark_dim=2,
                          dropout=0.0, period=8)
        model = MetaEformer(cfg, seed=0)
        c1, c2 = tmp_path / "a.mef", tmp_path / "b.mef"
        save_checkpoint(model, c1, pool_path=str(p1))
        loaded, _ = load_checkpoint(c1)
        save_checkpoint(loaded, c2, pool_path=str(p1))
        assert c1.read_bytes() == c2.read_bytes()

        series = sine_trend_series(60, period=8.0)
        windows, _ = normalized_windows(series, 16, 4, 4)
        m_orig = evaluate(model, mpp, windows)
        m_load = evaluate(loaded, load_pool(p1), windows)
        assert (m_orig.mse, m_orig.mae) == (m_load.mse, m_load.mae)
        assert time.perf_counter() - start < 30.0


def test_criterion_12_retrieval_hyperparameter_robustness():
    with report(12, "stability across retrieval size and slice length"):
        start = time.perf_counter()
        series0 = sine_trend_series(800, period=24.0, trend=0.0, noise=0.02, seed=7)
        maes = {}
        for k, s in [(4, 16), (16, 16), (64, 16), (16, 8), (16, 24)]:
            series = LoadSeries(timestamps=series0.timestamps.copy(),
                                values=series0.values.copy())
            tr, va, _ = split_series(series)
            scaler = Scaler.fit(tr.values)
            tr.values = scaler.normalize(tr.values)
            va.values = scaler.normalize(va.values)
            trw = make_windows(tr, 48, 12, 6)
            vaw = make_windows(va, 48, 12, 6)
            cfg = ModelConfig(lookback=48, horizon=12, token_len=6, d_in=1,
                              d_model=16, heads=2, encoder_layers=1,
                              decoder_layers=1, top_k=k, slice_len=s,
                              static_dim=0, mark_dim=2, dropout=0.0, period=24)
            pc = PoolConfig(capacity=64, slice_len=s, period=24)
            model = MetaEformer(cfg, seed=0)
            tc = TrainConfig(learning_rate=3e-3, batch_size=32, epochs=25, seed=0,
                             update_interval=10, patience=10**9)
            model, mpp, _ = train(model, None, trw, vaw, tc, pool_config=pc)
            maes[(k, s)] = evaluate(model, mpp, vaw).mae
        spread = (max(maes.values()) - min(maes.values())) / min(maes.values())
        assert spread <= 0.5, (spread, maes)
        assert time.perf_counter() - start <= 1800.0
