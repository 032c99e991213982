"""Brute-force references for small instances. Test/acceptance dependency only.

Enumeration is chunked so the hypothesis bound (2^20) never materializes as a
single giant array.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .channel import convolve_streams
from .scma_codec import Codebook, superpose

MAX_HYPOTHESES = 1 << 20
_CHUNK = 1 << 14


@dataclasses.dataclass(frozen=True)
class TinyInstance:
    cb: Codebook
    h: np.ndarray  # (K_rx, J, L) taps for the conditioning observations
    y: np.ndarray  # (K_rx, N + L - 1)
    N0: float
    log_priors: np.ndarray | None = None  # (K, N, M); uniform when None

    @property
    def N(self):
        return self.y.shape[-1] - self.h.shape[-1] + 1

    def hypothesis_count(self):
        return self.cb.M ** (self.cb.K * self.N)


def map_marginals_bruteforce(inst: TinyInstance):
    """Exact per-symbol posteriors and the joint MAP index sequence.

    Returns (marginals (K, N, M), map_indices (K, N), log_evidence)."""
    K, M, N = inst.cb.K, inst.cb.M, inst.N
    total = inst.hypothesis_count()
    if total > MAX_HYPOTHESES:
        raise ValueError(f"{total} hypotheses exceed the enumeration bound {MAX_HYPOTHESES}")
    if inst.log_priors is None:
        log_priors = np.zeros((K, N, M))
    else:
        log_priors = np.asarray(inst.log_priors, dtype=float)

    n0_eff = 2.0 * inst.N0
    digits_shape = (K, N)
    best_score = -np.inf
    best_idx = None
    # running logsumexp accumulators
    run_max = np.full((K, N, M), -np.inf)
    run_sum = np.zeros((K, N, M))
    run_total_max = -np.inf
    run_total_sum = 0.0

    for start in range(0, total, _CHUNK):
        count = min(_CHUNK, total - start)
        flat = np.arange(start, start + count)
        idx = np.empty((count, K, N), dtype=np.int64)
        rem = flat
        for pos in range(K * N - 1, -1, -1):
            idx.reshape(count, -1)[:, pos] = rem % M
            rem = rem // M
        X = np.empty((count, K, N, inst.cb.J), dtype=complex)
        for k in range(K):
            X[:, k] = inst.cb.codewords[k][idx[:, k]]
        clean = convolve_streams(superpose(X), inst.h)
        loglik = -np.sum(np.abs(inst.y - clean) ** 2, axis=(-2, -1)) / n0_eff
        lp = np.zeros(count)
        for k in range(K):
            for n in range(N):
                lp += log_priors[k, n, idx[:, k, n]]
        score = loglik + lp

        top = int(np.argmax(score))
        if score[top] > best_score:
            best_score = float(score[top])
            best_idx = idx[top].copy()
        # accumulate marginals
        for k in range(K):
            for n in range(N):
                for m in range(M):
                    sel = score[idx[:, k, n] == m]
                    if sel.size == 0:
                        continue
                    _accumulate(run_max, run_sum, (k, n, m), sel)
        chunk_max = score.max()
        if chunk_max > run_total_max:
            run_total_sum *= np.exp(run_total_max - chunk_max)
            run_total_max = chunk_max
        run_total_sum += np.sum(np.exp(score - run_total_max))

    log_evidence = run_total_max + np.log(run_total_sum)
    logm = run_max + np.log(np.maximum(run_sum, 1e-300))
    marginals = np.exp(logm - log_evidence)
    marginals /= marginals.sum(axis=-1, keepdims=True)
    return marginals, best_idx, float(log_evidence)


def _accumulate(run_max, run_sum, key, scores):
    m = scores.max()
    if m > run_max[key]:
        run_sum[key] *= np.exp(run_max[key] - m)
        run_max[key] = m
    run_sum[key] += np.sum(np.exp(scores - run_max[key]))


def map_sequences_batch(cb, h, y, N0):
    """Joint MAP index sequences for a batch of tiny instances.

    h: (B, K_rx, J, L); y: (B, K_rx, N_obs). Returns (B, K, N) indices.
    Vectorized over the batch; hypothesis axis enumerated in one shot, so use
    only for genuinely tiny instances."""
    B = y.shape[0]
    K, M = cb.K, cb.M
    N = y.shape[-1] - h.shape[-1] + 1
    total = M ** (K * N)
    if total > _CHUNK:
        raise ValueError("batch enumeration reserved for tiny instances")
    flat = np.arange(total)
    idx = np.empty((total, K, N), dtype=np.int64)
    rem = flat
    for pos in range(K * N - 1, -1, -1):
        idx.reshape(total, -1)[:, pos] = rem % M
        rem = rem // M
    X = np.empty((total, K, N, cb.J), dtype=complex)
    for k in range(K):
        X[:, k] = cb.codewords[k][idx[:, k]]
    s = superpose(X)  # (total, J, N)
    out = np.empty((B, K, N), dtype=np.int64)
    chunk = max(1, _CHUNK // total)
    for start in range(0, B, chunk):
        hh = h[start : start + chunk, None]  # (b, 1, K_rx, J, L)
        clean = convolve_streams(s[None], hh)  # (b, total, K_rx, N_obs)
        d = np.sum(np.abs(y[start : start + chunk, None] - clean) ** 2, axis=(-2, -1))
        best = np.argmin(d, axis=1)
        out[start : start + chunk] = idx[best]
    return out


def gaussian_posterior_exact(A, y, noise_var, prior_mean, prior_var):
    """Exact posterior for y = A x + w with proper complex Gaussians.

    A: (n_obs, n_x); noise_var = E|w|^2 per observation; prior diag.
    Returns (posterior mean (n_x,), posterior covariance (n_x, n_x))."""
    A = np.asarray(A, dtype=complex)
    y = np.asarray(y, dtype=complex)
    prior_mean = np.asarray(prior_mean, dtype=complex)
    prior_var = np.asarray(prior_var, dtype=float)
    if np.any(prior_var <= 0) or noise_var <= 0:
        raise np.linalg.LinAlgError("covariances must be positive")
    precision = np.diag(1.0 / prior_var) + (A.conj().T @ A) / noise_var
    cov = np.linalg.inv(precision)
    rhs = prior_mean / prior_var + A.conj().T @ y / noise_var
    mean = cov @ rhs
    return mean, cov
