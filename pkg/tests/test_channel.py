"""Channel statistics and convolution conventions."""

import numpy as np
import pytest

from scmasim.channel import (
    ChannelRealization,
    convolve_streams,
    draw_channel,
    ebn0_to_n0,
    power_delay_profile,
    transmit,
)


class TestPdp:
    def test_single_tap(self):
        np.testing.assert_allclose(power_delay_profile(1), [1.0])

    def test_ten_tap_head_value(self):
        q = power_delay_profile(10)
        # exp(0) / sum_{l<10} exp(-0.1 l) evaluated directly
        assert q[0] == pytest.approx(0.15054495, abs=1e-7)
        assert q.sum() == pytest.approx(1.0, abs=1e-12)

    def test_monotone_decay(self):
        q = power_delay_profile(7)
        assert np.all(np.diff(q) < 0)


class TestDrawChannel:
    def test_tap_variance_matches_profile(self):
        ch = draw_channel(2, 2, 4, rng_seed=0, shape=(25_000,))
        var = np.mean(np.abs(ch.h) ** 2, axis=(0, 1, 2))
        np.testing.assert_allclose(var, ch.pdp, rtol=0.02)

    def test_deterministic_per_seed(self):
        a = draw_channel(3, 2, 5, rng_seed=42)
        b = draw_channel(3, 2, 5, rng_seed=42)
        np.testing.assert_array_equal(a.h, b.h)

    def test_csv_rows(self):
        ch = draw_channel(2, 2, 2, rng_seed=1)
        rows = ch.to_csv_rows()
        assert len(rows) == 8
        k, j, l, re, im = rows[-1]
        assert (k, j, l) == (1, 1, 1)
        assert re == ch.h[1, 1, 1].real


class TestTransmit:
    def test_noiseless_flat_channel_permutes(self):
        s = np.arange(1, 7, dtype=complex).reshape(1, 6)
        h = np.ones((1, 1, 1), dtype=complex)
        ch = ChannelRealization(h=h, pdp=np.array([1.0]))
        y = transmit(s, ch, N0=0.0, rng_seed=0)
        np.testing.assert_allclose(y[0], s[0])

    def test_impulse_traces_taps(self):
        ch = draw_channel(2, 2, 5, rng_seed=3)
        s = np.zeros((2, 4), dtype=complex)
        s[1, 0] = 1.0
        y = convolve_streams(s, ch.h)
        np.testing.assert_allclose(y[0, :5], ch.h[0, 1, :])
        np.testing.assert_allclose(y[0, 5:], 0.0, atol=1e-15)

    def test_tail_length_covers_convolution(self):
        ch = draw_channel(1, 2, 3, rng_seed=4)
        s = np.ones((2, 10), dtype=complex)
        y = transmit(s, ch, N0=0.1, rng_seed=5)
        assert y.shape == (1, 12)

    def test_noise_variance(self):
        ch = ChannelRealization(h=np.zeros((1, 1, 1), dtype=complex), pdp=np.array([1.0]))
        s = np.zeros((1, 100_000), dtype=complex)
        y = transmit(s, ch, N0=0.7, rng_seed=6)
        assert np.mean(np.abs(y) ** 2) == pytest.approx(1.4, rel=0.03)

    def test_linearity_at_fixed_noise(self):
        ch = draw_channel(2, 3, 4, rng_seed=7)
        rng = np.random.default_rng(8)
        s1 = rng.normal(size=(3, 9)) + 1j * rng.normal(size=(3, 9))
        s2 = rng.normal(size=(3, 9)) + 1j * rng.normal(size=(3, 9))
        lhs = convolve_streams(s1 + s2, ch.h)
        rhs = convolve_streams(s1, ch.h) + convolve_streams(s2, ch.h)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_received_energy_budget(self):
        # interior samples: E|y|^2 = J * E|s|^2 + 2 N0 for unit-power streams
        K, J, L, N = 1, 2, 3, 2_000
        ch = draw_channel(K, J, L, rng_seed=9, shape=(200,))
        rng = np.random.default_rng(10)
        s = (rng.normal(size=(200, J, N)) + 1j * rng.normal(size=(200, J, N))) / np.sqrt(2)
        y = transmit(s, ch, N0=0.25, rng_seed=11)
        interior = y[..., L:N]
        measured = np.mean(np.abs(interior) ** 2)
        assert measured == pytest.approx(J * 1.0 + 0.5, rel=0.03)

    def test_batched_matches_single(self):
        ch = draw_channel(2, 2, 3, rng_seed=12, shape=(4,))
        rng = np.random.default_rng(13)
        s = rng.normal(size=(4, 2, 6)) + 1j * rng.normal(size=(4, 2, 6))
        y = convolve_streams(s, ch.h)
        for t in range(4):
            single = convolve_streams(s[t], ch.h[t])
            np.testing.assert_allclose(y[t], single, atol=1e-12)


class TestEbn0Map:
    def test_formula(self):
        # N0 = 1 / (2 * (5/7) * 2 * 10^(8/10)) at 8 dB, QPSK, rate 5/7
        n0 = ebn0_to_n0(8.0, 5 / 7, 2)
        assert n0 == pytest.approx(1.0 / (2 * (5 / 7) * 2 * 10 ** 0.8), rel=1e-12)

    def test_monotone_in_snr(self):
        assert ebn0_to_n0(10.0, 0.5, 2) < ebn0_to_n0(0.0, 0.5, 2)
