"""Spectral encoder: DFT correctness against the naive oracle, frequency
selection, padding, two-channel stacking, and numeric invariants."""

import numpy as np
import pytest

from facedyn.spectral import (
    EPS_PHASE,
    build_heatmap,
    dft_channel,
    split_two_channel,
    stack_two_channel,
)

import oracles


def assert_phases_close(actual, expected, atol=1e-9):
    """Angular comparison: -pi and +pi are the same phase."""
    d = np.abs(np.asarray(actual) - np.asarray(expected)) % (2 * np.pi)
    d = np.minimum(d, 2 * np.pi - d)
    assert np.all(d <= atol), f"max angular difference {d.max():.3e}"


class TestDftChannel:
    def test_constant_signal_is_dc_only(self):
        for c, n in ((3.0, 4), (0.7, 9)):
            amp, phase = dft_channel(np.full(n, c))
            assert amp[0] == pytest.approx(n * c, rel=1e-12)
            np.testing.assert_allclose(amp[1:], 0.0, atol=1e-9)
            np.testing.assert_allclose(phase[1:], 0.0, atol=0.0)

    def test_single_cosine_peaks(self):
        n = 8
        x = np.cos(2 * np.pi * np.arange(n) / n)
        amp, _ = dft_channel(x)
        assert amp[1] == pytest.approx(4.0, abs=1e-9)
        assert amp[7] == pytest.approx(4.0, abs=1e-9)
        for k in (0, 2, 3, 4, 5, 6):
            assert amp[k] == pytest.approx(0.0, abs=1e-9)

    def test_conjugate_symmetry_on_real_input(self):
        rng = np.random.default_rng(0)
        for n in (2, 5, 16, 33):
            amp, _ = dft_channel(rng.normal(size=n))
            for k in range(1, n):
                assert amp[k] == pytest.approx(amp[n - k], abs=1e-9)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        for n in (1, 2, 3, 7, 12, 31):
            x = rng.normal(size=n)
            amp, phase = dft_channel(x)
            expected = oracles.dft_naive(x)
            np.testing.assert_allclose(amp, np.abs(expected), atol=1e-9)
            mask = amp >= EPS_PHASE
            assert_phases_close(phase[mask], np.angle(expected)[mask])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            dft_channel(np.array([1.0, np.nan, 2.0]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            dft_channel(np.array([]))

    def test_phase_range_excludes_negative_pi(self):
        # spectrum component on the negative real axis must report +pi
        amp, phase = dft_channel(np.array([-1.0, 1.0]))
        assert amp[1] == pytest.approx(2.0)
        assert phase[1] == np.pi


class TestBuildHeatmap:
    def test_paper_scale_geometry(self):
        rng = np.random.default_rng(2)
        hm = build_heatmap(rng.normal(size=(64, 90)), M=32)
        assert hm.amplitude.shape == (64, 32)
        assert hm.phase.shape == (64, 32)

    def test_zero_channel_rows_are_zero(self):
        seq = np.zeros((3, 10))
        seq[1] = np.random.default_rng(3).normal(size=10)
        hm = build_heatmap(seq, M=4, dtype=np.float64)
        np.testing.assert_array_equal(hm.amplitude[0], 0.0)
        np.testing.assert_array_equal(hm.phase[0], 0.0)
        np.testing.assert_array_equal(hm.amplitude[2], 0.0)
        np.testing.assert_array_equal(hm.phase[2], 0.0)
        assert np.any(hm.amplitude[1] != 0.0)

    def test_matches_naive_oracle_small_case(self):
        rng = np.random.default_rng(4)
        seq = rng.normal(size=(4, 16))
        hm = build_heatmap(seq, M=5, dtype=np.float64)
        for d in range(4):
            full = oracles.dft_naive(seq[d])
            np.testing.assert_allclose(hm.amplitude[d], np.abs(full)[:5], atol=1e-9)
            mask = hm.amplitude[d] >= EPS_PHASE
            assert_phases_close(hm.phase[d][mask], np.angle(full)[:5][mask])

    def test_short_sequence_zero_padded(self):
        rng = np.random.default_rng(5)
        seq = rng.normal(size=(2, 3))
        hm = build_heatmap(seq, M=8, dtype=np.float64)
        assert hm.amplitude.shape == (2, 8)
        padded = np.pad(seq, ((0, 0), (0, 5)))
        for d in range(2):
            expected = oracles.dft_naive(padded[d])
            np.testing.assert_allclose(hm.amplitude[d], np.abs(expected), atol=1e-9)

    def test_fuzzed_oracle_equivalence(self):
        rng = np.random.default_rng(6)
        for _ in range(12):
            D = int(rng.integers(1, 8))
            N = int(rng.integers(1, 64))
            M = int(rng.integers(1, N + 1))
            seq = rng.normal(size=(D, N))
            hm = build_heatmap(seq, M=M, dtype=np.float64)
            for d in range(D):
                expected = oracles.dft_naive(seq[d])[:M]
                np.testing.assert_allclose(hm.amplitude[d], np.abs(expected), atol=1e-9)
                mask = hm.amplitude[d] >= EPS_PHASE
                assert_phases_close(hm.phase[d][mask], np.angle(expected)[mask])

    def test_amplitude_scaling_invariant(self):
        rng = np.random.default_rng(7)
        seq = rng.normal(size=(3, 20))
        base = build_heatmap(seq, M=6, dtype=np.float64)
        for s in (2.5, -1.75):
            scaled = build_heatmap(s * seq, M=6, dtype=np.float64)
            np.testing.assert_allclose(scaled.amplitude, abs(s) * base.amplitude, rtol=1e-12)
        pos = build_heatmap(2.5 * seq, M=6, dtype=np.float64)
        mask = base.amplitude > 1e-6
        np.testing.assert_allclose(pos.phase[mask], base.phase[mask], atol=1e-12)

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(8)
        seq = rng.normal(size=(5, 24))
        a = build_heatmap(seq, M=7)
        b = build_heatmap(seq, M=7)
        assert a.amplitude.tobytes() == b.amplitude.tobytes()
        assert a.phase.tobytes() == b.phase.tobytes()

    def test_invalid_m_rejected(self):
        with pytest.raises(ValueError, match="M must be >= 1"):
            build_heatmap(np.ones((2, 4)), M=0)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            build_heatmap(np.ones((0, 4)), M=2)
        with pytest.raises(ValueError, match="non-empty"):
            build_heatmap(np.ones((2, 0)), M=2)

    def test_non_finite_rejected(self):
        seq = np.ones((2, 4))
        seq[0, 1] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            build_heatmap(seq, M=2)

    def test_amplitudes_non_negative_and_phase_in_range(self):
        rng = np.random.default_rng(9)
        hm = build_heatmap(rng.normal(size=(6, 40)), M=16, dtype=np.float64)
        assert np.all(hm.amplitude >= 0.0)
        assert np.all(hm.phase > -np.pi)
        assert np.all(hm.phase <= np.pi)


class TestTwoChannelStack:
    def test_shape_and_ordering(self):
        rng = np.random.default_rng(10)
        hm = build_heatmap(rng.normal(size=(64, 90)), M=32)
        stacked = stack_two_channel(hm)
        assert stacked.shape == (2, 64, 32)
        np.testing.assert_array_equal(stacked[0], hm.amplitude)
        np.testing.assert_array_equal(stacked[1], hm.phase)

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        hm = build_heatmap(rng.normal(size=(4, 12)), M=5, video_id=42)
        back = split_two_channel(stack_two_channel(hm), video_id=42)
        np.testing.assert_array_equal(back.amplitude, hm.amplitude)
        np.testing.assert_array_equal(back.phase, hm.phase)
        assert back.video_id == 42

    def test_amplitude_channel_identifiable(self):
        # DC amplitude of a positive signal is large and positive, while
        # its phase is 0 -- so channel order is observable, not cosmetic
        seq = np.full((1, 8), 3.0)
        stacked = stack_two_channel(build_heatmap(seq, M=2, dtype=np.float64))
        assert stacked[0, 0, 0] == pytest.approx(24.0)
        assert stacked[1, 0, 0] == 0.0
