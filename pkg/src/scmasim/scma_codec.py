"""SCMA codebooks, bit mapping, and antenna superposition.

Each user k owns an M-codeword table over J antennas; codeword entries are
nonzero only on the D antennas marked by column k of the indicator matrix F.
Coded bits map to codeword indices through a Gray labeling (first bit = most
significant label bit). Average codeword energy per user is 1.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

# indicator used throughout the experiments: J=4 antennas, K=6 users, D=2,
# overloading 150%
DEFAULT_F = np.array(
    [
        [1, 0, 1, 0, 1, 0],
        [1, 1, 0, 0, 0, 1],
        [0, 1, 1, 1, 0, 0],
        [0, 0, 0, 1, 1, 1],
    ],
    dtype=np.uint8,
)

QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)
BPSK = np.array([1.0 + 0j, -1.0 + 0j])


def gray_labels(M: int) -> np.ndarray:
    """(M, log2 M) bit labels; row m is the Gray code of m, MSB first."""
    B = M.bit_length() - 1
    labels = np.zeros((M, B), dtype=np.uint8)
    for m in range(M):
        g = m ^ (m >> 1)
        labels[m] = [(g >> (B - 1 - b)) & 1 for b in range(B)]
    return labels


@dataclasses.dataclass(frozen=True)
class Codebook:
    F: np.ndarray  # (J, K) indicator
    codewords: np.ndarray  # (K, M, J) complex, zero off-support
    bit_labels: np.ndarray  # (M, log2 M)

    @property
    def K(self):
        return self.F.shape[1]

    @property
    def J(self):
        return self.F.shape[0]

    @property
    def M(self):
        return self.codewords.shape[1]

    @property
    def D(self):
        return int(self.F[:, 0].sum())

    @property
    def bits_per_symbol(self):
        return self.bit_labels.shape[1]

    def support(self, k: int) -> np.ndarray:
        """Antenna indices user k occupies."""
        return np.flatnonzero(self.F[:, k])

    def points(self, k: int) -> np.ndarray:
        """(M, D) codeword values of user k on its support."""
        return self.codewords[k][:, self.support(k)]

    def to_json(self) -> str:
        return json.dumps(
            {
                "F": self.F.tolist(),
                "codewords_re": self.codewords.real.tolist(),
                "codewords_im": self.codewords.imag.tolist(),
                "bit_labels": self.bit_labels.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        obj = json.loads(text)
        cw = np.asarray(obj["codewords_re"]) + 1j * np.asarray(obj["codewords_im"])
        return cls(
            F=np.asarray(obj["F"], dtype=np.uint8),
            codewords=cw,
            bit_labels=np.asarray(obj["bit_labels"], dtype=np.uint8),
        )


def build_codebook(F, M: int, seed_constellation=None) -> Codebook:
    """Deterministic codebook: the M-point seed constellation placed on each
    nonzero antenna with a user-specific phase rotation 2*pi*k/(K*M), then
    normalized to unit average energy per user."""
    F = np.asarray(F, dtype=np.uint8)
    if F.ndim != 2 or not np.isin(F, (0, 1)).all():
        raise ValueError("indicator must be a binary matrix")
    J, K = F.shape
    col_weights = F.sum(axis=0)
    if len(set(col_weights.tolist())) != 1:
        raise ValueError(f"indicator column weights differ: {col_weights}")
    D = int(col_weights[0])
    if M < 2 or M & (M - 1):
        raise ValueError(f"codebook size must be a power of 2, got {M}")
    if seed_constellation is None:
        seed_constellation = {2: BPSK, 4: QPSK}.get(M, _psk(M))
    seed = np.asarray(seed_constellation, dtype=complex)
    if seed.shape != (M,):
        raise ValueError("seed constellation must provide M points")

    codewords = np.zeros((K, M, J), dtype=complex)
    for k in range(K):
        rot = np.exp(2j * np.pi * k / (K * M))
        values = seed * rot / np.sqrt(D)  # unit energy over the D positions
        for j in np.flatnonzero(F[:, k]):
            codewords[k, :, j] = values
    return Codebook(F=F, codewords=codewords, bit_labels=gray_labels(M))


def _psk(M):
    return np.exp(2j * np.pi * np.arange(M) / M) * np.exp(1j * np.pi / M)


def bits_to_indices(bits, bits_per_symbol: int):
    """Group coded bits into codeword indices via the Gray labeling.

    bits: (..., N * bits_per_symbol) -> indices (..., N)."""
    bits = np.asarray(bits)
    if bits.shape[-1] % bits_per_symbol:
        raise ValueError(
            f"bit count {bits.shape[-1]} not divisible by {bits_per_symbol}"
        )
    groups = bits.reshape(bits.shape[:-1] + (-1, bits_per_symbol))
    gray = np.zeros(groups.shape[:-1], dtype=np.int64)
    for b in range(bits_per_symbol):
        gray = (gray << 1) | groups[..., b]
    # inverse Gray: m = g ^ (g>>1) ^ (g>>2) ...
    m = gray.copy()
    shift = 1
    while (1 << shift) <= int(gray.max(initial=0)) + 1:
        m ^= gray >> shift
        shift += 1
    return m


def indices_to_bits(indices, bit_labels):
    """Codeword indices back to label bits: (..., N) -> (..., N*B)."""
    indices = np.asarray(indices)
    out = bit_labels[indices]
    return out.reshape(indices.shape[:-1] + (-1,))


def encode_symbols(coded_bits, cb: Codebook):
    """Per-user coded bits -> codeword sequences.

    coded_bits: (..., K, n_bits) -> X: (..., K, N, J) complex with
    N = n_bits / log2 M."""
    idx = bits_to_indices(coded_bits, cb.bits_per_symbol)
    K = cb.K
    out = np.empty(idx.shape[:-2] + (K,) + idx.shape[-1:] + (cb.J,), dtype=complex)
    for k in range(K):
        out[..., k, :, :] = cb.codewords[k][idx[..., k, :]]
    return out


def superpose(X):
    """Sum user codewords per antenna: (..., K, N, J) -> (..., J, N)."""
    s = np.asarray(X).sum(axis=-3)
    return np.swapaxes(s, -1, -2)


def symbol_priors_from_llrs(llrs, bit_labels):
    """Per-codeword-index probabilities from per-bit LLRs (log p0/p1).

    llrs: (..., B) -> probs (..., M); products of independent bit probabilities.
    """
    llrs = np.asarray(llrs, dtype=float)
    logp0 = -np.logaddexp(0.0, -llrs)
    logp1 = -np.logaddexp(0.0, llrs)
    logp = logp0 @ (1 - bit_labels.T.astype(float)) + logp1 @ bit_labels.T.astype(float)
    p = np.exp(logp - logp.max(axis=-1, keepdims=True))
    return p / p.sum(axis=-1, keepdims=True)
