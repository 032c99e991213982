"""Frequency-selective Rayleigh MIMO channel with zero-padded guard interval.

Conventions: taps h[k, j, l] carry the link from antenna j to user k with
per-tap variance q_l (exponentially decaying, normalized). Complex noise has
E|w|^2 = 2*N0 per received sample, matching the observation-factor variance
used by the receiver.
"""

from __future__ import annotations

import dataclasses

import numpy as np


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def power_delay_profile(L: int) -> np.ndarray:
    if L < 1:
        raise ValueError("need at least one tap")
    q = np.exp(-0.1 * np.arange(L))
    return q / q.sum()


@dataclasses.dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray  # (..., K, J, L) complex tap gains
    pdp: np.ndarray  # (L,)

    def to_csv_rows(self):
        """Debug dump: (k, j, l, re, im) per tap (leading axes flattened out)."""
        h = self.h.reshape((-1,) + self.h.shape[-3:])[0]
        rows = []
        for k in range(h.shape[0]):
            for j in range(h.shape[1]):
                for l in range(h.shape[2]):
                    rows.append((k, j, l, h[k, j, l].real, h[k, j, l].imag))
        return rows


def draw_channel(K: int, J: int, L: int, rng_seed, shape=()) -> ChannelRealization:
    """Independent circularly-symmetric Gaussian taps, variance pdp[l].

    shape: optional leading batch axes (one realization per batch entry)."""
    rng = as_rng(rng_seed)
    pdp = power_delay_profile(L)
    scale = np.sqrt(pdp / 2.0)
    dims = tuple(shape) + (K, J, L)
    h = scale * (rng.standard_normal(dims) + 1j * rng.standard_normal(dims))
    return ChannelRealization(h=h, pdp=pdp)


def convolve_streams(s, h):
    """Noise-free receive signals.

    s: (..., J, N) transmit signal per antenna; h: (..., K, J, L).
    Returns (..., K, N+L-1) with zero padding outside [0, N)."""
    s = np.asarray(s)
    h = np.asarray(h)
    N = s.shape[-1]
    L = h.shape[-1]
    K = h.shape[-3]
    out = np.zeros(np.broadcast_shapes(s.shape[:-2], h.shape[:-3]) + (K, N + L - 1), dtype=complex)
    for l in range(L):
        out[..., l : l + N] += np.einsum("...kj,...jn->...kn", h[..., l], s)
    return out


def transmit(s, channel: ChannelRealization, N0: float, rng_seed):
    """y_k = sum_{j,l} h[k,j,l] s_j^{n-l} + w, E|w|^2 = 2*N0."""
    rng = as_rng(rng_seed)
    clean = convolve_streams(s, channel.h)
    if N0 > 0:
        noise = np.sqrt(N0) * (
            rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        )
        return clean + noise
    return clean.copy()


def ebn0_to_n0(ebn0_db: float, rate: float, bits_per_symbol: int, es: float = 1.0) -> float:
    """N0 from Eb/N0 in dB: N0 = Es / (2 * rate * log2 M * Eb/N0_lin)."""
    ebn0 = 10.0 ** (ebn0_db / 10.0)
    return es / (2.0 * rate * bits_per_symbol * ebn0)
