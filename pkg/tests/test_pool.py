import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import construct_reference
from metaeformer.decomposition import decompose_batch
from metaeformer.errors import ConfigError, FormatError, InputError, StateError
from metaeformer.pool import (MetaPatternPool, PoolConfig, construct_pool, load_pool,
                              purification_threshold, save_pool, sim, similarity_matrix,
                              slice_waveforms, standardize, update_pool)


class TestStandardize:
    def test_hand_values(self):
        out = standardize(np.array([1.0, 2.0, 3.0, 4.0]))
        np.testing.assert_allclose(out, [-1.342, -0.447, 0.447, 1.342], atol=1e-3)

    def test_constant_goes_to_zero(self):
        np.testing.assert_array_equal(standardize(np.full(4, 5.0)), np.zeros(4))

    def test_idempotent(self):
        w = np.random.default_rng(0).normal(size=8)
        once = standardize(w)
        np.testing.assert_allclose(standardize(once), once, atol=1e-12)


class TestSlice:
    def test_small_example(self):
        W = slice_waveforms(np.array([[1.0, 2.0, 3.0, 4.0]])[:, :, None], 2)
        assert W.shape == (2, 2)
        np.testing.assert_allclose(W[0], standardize(np.array([1.0, 2.0])))
        np.testing.assert_allclose(W[1], standardize(np.array([3.0, 4.0])))

    def test_row_count(self):
        x = np.random.default_rng(0).normal(size=(2, 48, 1))
        assert slice_waveforms(x, 16).shape == (6, 16)

    def test_constant_slice_zeroed(self):
        W = slice_waveforms(np.full((1, 3, 1), 7.0), 3)
        np.testing.assert_array_equal(W, np.zeros((1, 3)))

    def test_indivisible_length_rejected(self):
        with pytest.raises(ConfigError, match="L=48.*s=10"):
            slice_waveforms(np.zeros((1, 48, 1)), 10)


class TestSim:
    def test_self_similarity_equals_length(self):
        w = standardize(np.random.default_rng(1).normal(size=8))
        assert sim(w, w) == pytest.approx(8.0, abs=1e-6)

    def test_antisymmetry(self):
        w = standardize(np.random.default_rng(2).normal(size=8))
        assert sim(w, -w) == pytest.approx(-8.0, abs=1e-6)

    def test_orthogonal_square_waves(self):
        a = np.array([1.0, -1.0, 1.0, -1.0])
        b = np.array([1.0, 1.0, -1.0, -1.0])
        assert sim(a, b) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            sim(np.zeros(3), np.zeros(4))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), s=st.sampled_from([4, 8, 16]))
    def test_bounded_and_symmetric(self, seed, s):
        rng = np.random.default_rng(seed)
        a = standardize(rng.normal(size=s))
        b = standardize(rng.normal(size=s))
        assert sim(a, b) == pytest.approx(sim(b, a), abs=1e-9)
        assert abs(sim(a, b)) <= s + 1e-9


class TestSimilarityMatrix:
    def test_identical_rows(self):
        w = standardize(np.random.default_rng(0).normal(size=4))
        SM = similarity_matrix(np.stack([w, w]))
        assert SM[0, 1] == pytest.approx(4.0, abs=1e-6)
        assert SM[1, 0] == 0.0 and SM[0, 0] == 0.0

    def test_matches_pair_loop(self):
        rng = np.random.default_rng(5)
        W = standardize(rng.normal(size=(3, 6)))
        SM = similarity_matrix(W)
        for i in range(3):
            for j in range(3):
                expected = sim(W[i], W[j]) if i < j else 0.0
                assert SM[i, j] == pytest.approx(expected, abs=1e-9)

    def test_single_row_rejected(self):
        with pytest.raises(InputError):
            similarity_matrix(np.zeros((1, 4)))


class TestPurificationThreshold:
    def make_sm(self, upper):
        SM = np.zeros((3, 3))
        SM[0, 1], SM[0, 2], SM[1, 2] = upper
        return SM

    def test_hand_arithmetic(self):
        tau = purification_threshold(self.make_sm([2.0, 4.0, 3.0]), 6, 0.5)
        assert tau == pytest.approx(3.0 + (0.5 * 6 / 3) * 0.816497, abs=1e-4)

    def test_constant_entries(self):
        tau = purification_threshold(self.make_sm([2.0, 2.0, 2.0]), 10, 0.5)
        assert tau == pytest.approx(2.0)

    def test_alpha_linearity(self):
        sm = self.make_sm([1.0, 5.0, 3.0])
        mu = 3.0
        t1 = purification_threshold(sm, 4, 0.5)
        t2 = purification_threshold(sm, 4, 1.0)
        assert t2 - mu == pytest.approx(2 * (t1 - mu), abs=1e-9)

    def test_monotone_in_capacity(self):
        sm = self.make_sm([1.0, 5.0, 3.0])
        taus = [purification_threshold(sm, p, 0.5) for p in (2, 8, 64)]
        assert taus[0] < taus[1] < taus[2]

    def test_empty_upper_rejected(self):
        with pytest.raises(InputError):
            purification_threshold(np.zeros((1, 1)), 4, 0.5)


def small_config(capacity=16, s=4, period=4):
    return PoolConfig(capacity=capacity, slice_len=s, period=period)


class TestConstructPool:
    def test_matches_literal_transcription(self):
        rng = np.random.default_rng(11)
        for trial in range(50):
            B = int(rng.integers(1, 9))
            s = int(rng.choice([4, 8]))
            L = s * int(rng.integers(2, max(3, 33 // s)))
            capacity = int(rng.integers(2, 12))
            batch = rng.normal(size=(B, L, 1))
            cfg = small_config(capacity=capacity, s=s)
            if B * L // s < 2:
                continue
            mine = construct_pool(batch, cfg)
            ref_patterns, ref_occ, ref_tau = construct_reference(
                batch, capacity, s, cfg.alpha, cfg.gamma, cfg.period)
            assert mine.occupancy == ref_occ
            assert mine.threshold_tau == pytest.approx(ref_tau, abs=1e-9)
            np.testing.assert_allclose(mine.patterns, ref_patterns, atol=1e-5)

    def test_all_dissimilar_appends_verbatim(self):
        # orthogonal square fragments on a long batch: all Sim <= tau
        base = np.array([[1.0, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]])
        cfg = small_config(capacity=8, s=4, period=2)
        batch = np.concatenate([b for b in base])[None, :, None]
        mine = construct_pool(batch, cfg)
        ref_patterns, ref_occ, _ = construct_reference(batch, 8, 4, cfg.alpha, cfg.gamma, 2)
        assert mine.occupancy == ref_occ
        np.testing.assert_allclose(mine.patterns, ref_patterns, atol=1e-9)

    def test_paper_scale_stays_bounded(self):
        rng = np.random.default_rng(0)
        batch = rng.normal(size=(64, 48, 1))  # trimmed batch, paper-shaped windows
        cfg = PoolConfig(capacity=650, slice_len=16)
        mine = construct_pool(batch, cfg)
        assert mine.occupancy <= 650
        assert np.isfinite(mine.patterns).all()


class TestUpdatePool:
    def build(self, seed=0, capacity=6, s=4):
        rng = np.random.default_rng(seed)
        cfg = small_config(capacity=capacity, s=s)
        return construct_pool(rng.normal(size=(2, 16, 1)), cfg)

    def test_unconstructed_rejected(self):
        with pytest.raises(StateError):
            update_pool(None, np.zeros((1, 8, 1)))

    def test_occupancy_and_convexity_invariants(self):
        rng = np.random.default_rng(42)
        for trial in range(50):
            pool = self.build(seed=trial, capacity=int(rng.integers(3, 8)))
            for _ in range(4):
                before = pool.patterns.copy()
                occ_before = pool.occupancy
                # single-slice batch: exactly one incoming waveform per update
                batch = rng.normal(size=(1, 4, 1))
                w = slice_waveforms(decompose_batch(batch, 4)[1], 4)[0]
                update_pool(pool, batch)
                assert occ_before <= pool.occupancy <= pool.config.capacity
                changed = np.flatnonzero(
                    np.any(pool.patterns[:occ_before] != before[:occ_before], axis=1))
                assert len(changed) <= 1
                for r in changed:
                    lo = np.minimum(before[r], w) - 1e-12
                    hi = np.maximum(before[r], w) + 1e-12
                    assert np.all(pool.patterns[r] >= lo) and np.all(pool.patterns[r] <= hi)

    def test_fixed_point_when_waveform_matches_row(self):
        pool = self.build()
        pool.threshold_tau = 0.0  # ensure the match branch triggers
        row = pool.patterns[0].copy()
        g = pool.config.gamma
        updated = (1 - g) * row + g * row
        np.testing.assert_allclose(updated, row)

    def test_below_threshold_appends_verbatim(self):
        pool = self.build(capacity=30)
        pool.threshold_tau = 100.0  # nothing can match
        occ = pool.occupancy
        batch = np.random.default_rng(9).normal(size=(1, 16, 1))
        update_pool(pool, batch)
        assert pool.occupancy == occ + 4
        W = slice_waveforms(decompose_batch(batch, 4)[1], 4)
        np.testing.assert_allclose(pool.patterns[occ:occ + 4], W, atol=1e-9)

    def test_full_pool_merges_convexly(self):
        pool = self.build(capacity=4)
        pool.threshold_tau = 100.0
        while pool.occupancy < 4:
            update_pool(pool, np.random.default_rng(pool.occupancy).normal(size=(1, 16, 1)))
        before = pool.patterns.copy()
        rng = np.random.default_rng(3)
        batch = rng.normal(size=(1, 4, 1))
        w = slice_waveforms(decompose_batch(batch.astype(float), 4)[1], 4)[0]
        best = int(np.argmax(before @ w))
        update_pool(pool, batch)
        np.testing.assert_allclose(pool.patterns[best], 0.9 * before[best] + 0.1 * w,
                                   atol=1e-9)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        pool = construct_pool(np.random.default_rng(0).normal(size=(2, 16, 1)),
                              small_config(capacity=10))
        path = tmp_path / "pool.mpp"
        save_pool(pool, path)
        loaded = load_pool(path)
        assert loaded.occupancy == pool.occupancy
        assert loaded.config.capacity == pool.config.capacity
        assert loaded.config.slice_len == pool.config.slice_len
        np.testing.assert_allclose(loaded.patterns, pool.patterns.astype(np.float32),
                                   atol=1e-7)
        # second save is byte-identical
        path2 = tmp_path / "pool2.mpp"
        save_pool(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_fails_closed(self, tmp_path):
        pool = construct_pool(np.random.default_rng(0).normal(size=(2, 16, 1)),
                              small_config(capacity=10))
        path = tmp_path / "pool.mpp"
        save_pool(pool, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError):
            load_pool(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.mpp"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="magic"):
            load_pool(path)

    def test_half_filled_occupancy_preserved(self, tmp_path):
        cfg = small_config(capacity=50)
        pool = construct_pool(np.random.default_rng(1).normal(size=(2, 16, 1)), cfg)
        assert 0 < pool.occupancy < 50
        save_pool(pool, tmp_path / "p.mpp")
        assert load_pool(tmp_path / "p.mpp").occupancy == pool.occupancy


def test_config_validation():
    with pytest.raises(ConfigError):
        PoolConfig(capacity=0)
    with pytest.raises(ConfigError):
        PoolConfig(slice_len=1)
    with pytest.raises(ConfigError):
        PoolConfig(gamma=0.0)
