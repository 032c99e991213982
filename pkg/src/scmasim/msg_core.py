"""Gaussian message algebra and EP projection of discrete symbol priors.

All messages are scalar complex Gaussians with the density convention
exp(-|x-m|^2 / v), i.e. v = E|x-m|^2. var = +inf encodes the vacuous
(information-free) message, whose natural parameters are (0, 0).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

VAR_FLOOR = 1e-8


class IndefiniteMessage(ArithmeticError):
    """Raised when a message operation yields non-positive precision."""


@dataclasses.dataclass(frozen=True)
class GaussianMsg:
    mean: complex
    var: float

    def __post_init__(self):
        if not (self.var > 0.0):
            raise ValueError(f"variance must be positive or +inf, got {self.var}")
        if math.isinf(self.var) and self.mean != 0:
            # canonical vacuous form so natural parameters round-trip to (0, 0)
            object.__setattr__(self, "mean", 0j)

    @property
    def is_vacuous(self) -> bool:
        return math.isinf(self.var)

    def natural(self):
        """(eta, lam) = (mean/var, 1/var); (0, 0) for the vacuous message."""
        if self.is_vacuous:
            return 0j, 0.0
        lam = 1.0 / self.var
        return self.mean * lam, lam


VACUOUS = GaussianMsg(0j, math.inf)


def from_natural(eta, lam) -> GaussianMsg:
    if lam > 0.0:
        return GaussianMsg(eta / lam, 1.0 / lam)
    if lam == 0.0 and eta == 0:
        return VACUOUS
    raise IndefiniteMessage(f"natural parameters ({eta}, {lam}) are not a proper Gaussian")


def gmul(a: GaussianMsg, b: GaussianMsg) -> GaussianMsg:
    """Pointwise product of two Gaussian messages (precisions add)."""
    ea, la = a.natural()
    eb, lb = b.natural()
    return from_natural(ea + eb, la + lb)


def gmul_all(msgs) -> GaussianMsg:
    eta, lam = 0j, 0.0
    for m in msgs:
        e, l = m.natural()
        eta += e
        lam += l
    return from_natural(eta, lam)


def gdiv(a: GaussianMsg, b: GaussianMsg) -> GaussianMsg:
    """Pointwise quotient a/b. Raises IndefiniteMessage if the result has
    precision <= 0 (the caller applies its safeguard)."""
    ea, la = a.natural()
    eb, lb = b.natural()
    return from_natural(ea - eb, la - lb)


def gpow(a: GaussianMsg, gamma: float) -> GaussianMsg:
    """a^gamma: mean unchanged, variance divided by gamma."""
    if gamma == 0.0:
        return VACUOUS
    eta, lam = a.natural()
    return from_natural(eta * gamma, lam * gamma)


@dataclasses.dataclass(frozen=True)
class DiscretePrior:
    """Finite prior over constellation points: p(x) = sum_i probs[i] delta(x - support[i])."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=complex)
        probs = np.asarray(self.probs, dtype=float)
        if support.shape != probs.shape or support.ndim != 1:
            raise ValueError("support and probs must be 1-d arrays of equal length")
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and nonnegative")
        total = probs.sum()
        if total <= 0.0:
            raise ValueError("at least one prior probability must be positive")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs / total)


def moment_match(prior: DiscretePrior, var_floor: float = VAR_FLOOR) -> GaussianMsg:
    """Gaussian with the prior's mean and variance (variance floored)."""
    mean = np.sum(prior.probs * prior.support)
    var = float(np.sum(prior.probs * np.abs(prior.support - mean) ** 2))
    return GaussianMsg(complex(mean), max(var, var_floor))


def tilted_moments(probs, support, cav_mean, cav_var):
    """Mean/variance of b(x) prop. p(x) exp(-|m_cav - x|^2 / v_cav), vectorized.

    probs/support broadcast over leading axes with the last axis enumerating
    the constellation; cav_mean/cav_var broadcast over the leading axes.
    """
    logw = np.log(np.maximum(probs, 1e-300)) - np.abs(support - cav_mean[..., None]) ** 2 / cav_var[..., None]
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)
    mean = np.sum(w * support, axis=-1)
    var = np.sum(w * np.abs(support - mean[..., None]) ** 2, axis=-1)
    return mean, var


def ep_project_arrays(probs, support, cav_mean, cav_var, var_floor=VAR_FLOOR):
    """Vectorized EP update: project prior x cavity onto a Gaussian and divide
    out the cavity.

    Vacuous cavities fall back to the direct moment match of the prior.
    Improper cavities (negative variance) are fine: the tilt reweights a
    finite constellation, and subtracting a negative cavity precision leaves
    the quotient proper. Non-positive quotient precision falls back to the
    floored moment match of the tilted belief. Returns (mean, var,
    safeguard_mask).
    """
    probs = np.asarray(probs, dtype=float)
    support = np.asarray(support, dtype=complex)
    cav_mean = np.asarray(cav_mean, dtype=complex)
    cav_var = np.asarray(cav_var, dtype=float)

    proper = np.isfinite(cav_var)
    # a harmless finite stand-in where the cavity is vacuous
    cv = np.where(proper, cav_var, 1.0)
    cm = np.where(proper, cav_mean, 0.0)
    b_mean, b_var = tilted_moments(probs, support, cm, cv)
    p_mean = np.sum(probs * support, axis=-1)
    p_var = np.sum(probs * np.abs(support - p_mean[..., None]) ** 2, axis=-1)
    b_mean = np.where(proper, b_mean, p_mean)
    b_var = np.where(proper, b_var, p_var)
    b_var_f = np.maximum(b_var, var_floor)

    # quotient in natural parameters; only meaningful for proper cavities
    lam = 1.0 / b_var_f - np.where(proper, 1.0 / cv, 0.0)
    eta = b_mean / b_var_f - np.where(proper, cm / cv, 0.0)
    quotient_ok = proper & (lam > 0.0) & (b_var > var_floor)
    safeguarded = proper & ~quotient_ok

    with np.errstate(divide="ignore", invalid="ignore"):
        q_mean = np.where(quotient_ok, eta / np.where(lam > 0, lam, 1.0), 0.0)
        q_var = np.where(quotient_ok, 1.0 / np.where(lam > 0, lam, 1.0), np.inf)

    out_mean = np.where(quotient_ok, q_mean, b_mean)
    out_var = np.where(quotient_ok, q_var, b_var_f)
    return out_mean, out_var, safeguarded


def ep_project(prior: DiscretePrior, cavity: GaussianMsg, var_floor: float = VAR_FLOOR) -> GaussianMsg:
    """EP update for one symbol: moment-match the tilted belief and divide out
    the cavity. See ep_project_arrays for the safeguard policy."""
    mean, var, _ = ep_project_arrays(
        prior.probs[None, :],
        prior.support[None, :],
        np.array([cavity.mean], dtype=complex),
        np.array([cavity.var], dtype=float),
        var_floor,
    )
    return GaussianMsg(complex(mean[0]), float(var[0]))


def _log_bit_probs(prior_llrs):
    """Per-bit (log p0, log p1) from LLRs log(p0/p1), numerically stable."""
    llr = np.asarray(prior_llrs, dtype=float)
    logp0 = -np.logaddexp(0.0, -llr)
    logp1 = -np.logaddexp(0.0, llr)
    return logp0, logp1


def codeword_scores(means, variances, points):
    """Log-likelihood of each codeword index given per-position Gaussian
    messages: sum_d -|m_d - points[i, d]|^2 / v_d. Vacuous positions drop out.

    means/variances: (..., D); points: (M, D). Returns (..., M).
    """
    means = np.asarray(means, dtype=complex)
    variances = np.asarray(variances, dtype=float)
    points = np.asarray(points, dtype=complex)
    d2 = np.abs(means[..., None, :] - points) ** 2
    with np.errstate(invalid="ignore"):
        terms = np.where(np.isfinite(variances)[..., None, :], -d2 / variances[..., None, :], 0.0)
    return terms.sum(axis=-1)


def symbol_extrinsic_llr(means, variances, points, bit_labels, prior_llrs):
    """Extrinsic bit LLRs for one symbol from its incoming channel messages.

    means/variances: (..., D) Gaussian messages on the nonzero positions.
    points: (M, D) codeword values on those positions.
    bit_labels: (M, B) 0/1 label of each codeword index.
    prior_llrs: (..., B) prior LLRs, sign convention log p(0)/p(1).
    Returns (..., B) extrinsic LLRs (total minus the bit's own prior).
    """
    bit_labels = np.asarray(bit_labels)
    prior_llrs = np.asarray(prior_llrs, dtype=float)
    logp0, logp1 = _log_bit_probs(prior_llrs)
    # log prior of codeword index i = sum_b log p_b(label[i, b])
    log_prior = logp0 @ (1 - bit_labels.T) + logp1 @ bit_labels.T
    score = codeword_scores(means, variances, points) + log_prior

    bits1 = bit_labels.T.astype(bool)  # (B, M)
    total = np.stack(
        [logsumexp_masked(score, ~bits1[b]) - logsumexp_masked(score, bits1[b]) for b in range(bit_labels.shape[1])],
        axis=-1,
    )
    return total - prior_llrs


def logsumexp_masked(scores, mask):
    """logsumexp over the last axis restricted to mask (mask: (M,) bool)."""
    sel = scores[..., mask]
    m = sel.max(axis=-1)
    return m + np.log(np.sum(np.exp(sel - m[..., None]), axis=-1))
