"""Iterative Gaussian message-passing detector on the stretched factor graph.

One engine instance detects all users' symbols from a single receiver's
observation. With a channel code attached it turbo-decodes every user's
stream (the downlink broadcasts all codewords, so each receiver can run all
decoders); `own_user` selects whose decoded bits the result reports.

Message storage is moment-form numpy arrays with a leading batch axis so many
Monte Carlo trials run in lockstep:
    mu_x_phi / mu_phi_x : (B, K, J, N)   codeword-component edges (support only)
    mu_phi_s / mu_s_phi : (B, J, N)      superposition-to-signal edges
    mu_s_psi / mu_psi_s : (B, J, N_obs, L)  entry [j, n, l] is the edge between
                                         the convolution factor at time n and
                                         the signal s_j^{n-l}
    mu_psi_r / mu_f_r   : (B, J, N_obs)  auxiliary/observation edges
    mu_r_f / mu_r_psi   : (B, J, N_obs)  pass-through copies (degree-2 r)
A vacuous message is var=inf with canonical mean 0. Invalid (n, l) pairs
(taps reaching outside the frame) stay vacuous forever and are masked out of
every sum.

With counting numbers attached, every edge update becomes the two-exponent
power combination of the freshly recomputed auxiliary messages; exponent
patterns (1, 0) short-circuit to the plain formulas, so Bethe numbers
reproduce the plain detector bit for bit. Fractional exponents can and do
produce improper messages (negative variance); those are legitimate points of
the fixed-point iteration and are carried through all linear-combination
algebra unchanged. Decision and decoder read-outs evaluate quadratic scores
with the signed precision (the pointwise ratio of the proper belief to the
prior message), so improper components keep their evidence; the prior
projection tilts the finite constellation the same signed way. Exported
beliefs are the one hard boundary: improper ones fall back to vacuous and
are counted in `safeguards`.

The prior edge is special. Discrete symbol priors are refreshed once per
iteration by an EP projection against the current factor-side message, and
the quotient is stored as the incoming message unchanged: a mixture of point
masses has no meaningful fractional power, so exponent weighting never
touches this edge and the prior factor counts 1. Fixed Gaussian priors (the
oracle-validation mode) are genuine model factors, so there the prior edge
follows the same two-exponent rule as every other edge.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .msg_core import VAR_FLOOR, ep_project_arrays, symbol_extrinsic_llr, codeword_scores
from .scma_codec import Codebook, symbol_priors_from_llrs


@dataclasses.dataclass
class ReceiverConfig:
    n_iter: int = 10
    ldpc_iters: int = 10
    prior_mode: str = "ep"  # "ep" | "gauss" | "fixed"
    var_floor: float = VAR_FLOOR
    # floor for stored prior-quotient variances: a decided symbol needs no
    # more precision than this, and unbounded site precision destabilizes
    # the exponent-weighted combinations
    prior_var_floor: float = 1e-3

    def __post_init__(self):
        if self.prior_mode not in ("ep", "gauss", "fixed"):
            raise ValueError(f"unknown prior mode {self.prior_mode!r}")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")


@dataclasses.dataclass(frozen=True)
class CountingArrays:
    """Counting numbers instantiated on a concrete graph (one receiver).

    c_phi/c_s: (J, N); c_psi/c_r: (J, N_obs); c_f: (N_obs,); c_x: (K, J, N).
    """

    c_phi: np.ndarray
    c_s: np.ndarray
    c_psi: np.ndarray
    c_r: np.ndarray
    c_f: np.ndarray
    c_x: np.ndarray


@dataclasses.dataclass
class DetectResult:
    symbol_indices: np.ndarray  # (B, K, N)
    info_bits: np.ndarray | None  # (B, k_info)
    syndrome_ok: np.ndarray | None  # (B,)
    iter_delta: np.ndarray  # (n_iter,)
    iter_ber: np.ndarray | None  # (n_iter, B)
    iter_ser: np.ndarray | None  # (n_iter, B)
    safeguards: int
    info_bits_all: np.ndarray | None = None  # (B, K, k_info)
    syndrome_ok_all: np.ndarray | None = None  # (B, K)


def _nat(m, v):
    lam = np.where(np.isfinite(v), 1.0 / v, 0.0)
    return m * lam, lam


def _mom(eta, lam):
    nz = lam != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(nz, 1.0 / np.where(nz, lam, 1.0), np.inf)
        m = np.where(nz, eta / np.where(nz, lam, 1.0), 0.0)
    return m, v


def _sanitize(m, v):
    """Replace improper messages (finite nonpositive variance) with vacuous."""
    bad = np.isfinite(v) & (v <= 0.0)
    return np.where(bad, 0.0, m), np.where(bad, np.inf, v), int(np.count_nonzero(bad))


def _masked_sum(m, v, mask, axis):
    """Sum of mean and variance over an axis, counting only mask entries.

    Any vacuous (inf-variance) contributor makes the summed variance inf."""
    mm = np.where(mask, m, 0.0)
    vfin = np.where(mask & np.isfinite(v), v, 0.0)
    ninf = np.sum(mask & ~np.isfinite(v), axis=axis)
    sm = np.sum(mm, axis=axis)
    sv = np.where(ninf > 0, np.inf, np.sum(vfin, axis=axis))
    return sm, sv


def _weighted_var(h2, v):
    """|h|^2 * v without 0*inf: a zero weight contributes nothing."""
    out = np.where(np.isfinite(v), h2 * v, np.inf)
    return np.where(h2 > 0, out, 0.0)


def _loo_sum(m, v, mask, axis):
    """Leave-one-out sums along axis: out[..., i] = sum over j != i.

    Returns (loo_mean, loo_var); positions outside mask get garbage and must
    be masked by the caller."""
    mm = np.where(mask, m, 0.0)
    inf_flags = mask & ~np.isfinite(v)
    vfin = np.where(mask & np.isfinite(v), v, 0.0)
    tot_m = np.sum(mm, axis=axis, keepdims=True)
    tot_v = np.sum(vfin, axis=axis, keepdims=True)
    tot_inf = np.sum(inf_flags, axis=axis, keepdims=True)
    loo_m = tot_m - mm
    loo_inf = tot_inf - inf_flags
    loo_v = np.where(loo_inf > 0, np.inf, tot_v - vfin)
    return loo_m, loo_v


class DetectorEngine:
    def __init__(
        self,
        y,
        h,
        cb: Codebook,
        N0: float,
        cfg: ReceiverConfig,
        own_user: int | None = None,
        code=None,
        counting: CountingArrays | None = None,
        fixed_prior=None,
        true_info_bits=None,
        true_indices=None,
    ):
        y = np.asarray(y, dtype=complex)
        h = np.asarray(h, dtype=complex)
        if y.ndim == 1:
            y = y[None]
            h = h[None] if h.ndim == 2 else h
        self.y = y
        self.h = h
        self.cb = cb
        self.cfg = cfg
        self.own_user = own_user
        self.code = code
        self.n0_eff = 2.0 * float(N0)

        self.B = y.shape[0]
        self.K, self.J, self.M = cb.K, cb.J, cb.M
        self.L = h.shape[-1]
        self.N_obs = y.shape[-1]
        self.N = self.N_obs - self.L + 1
        if self.N < 1:
            raise ValueError("observation shorter than channel memory")
        if h.shape != (self.B, self.J, self.L):
            raise ValueError(f"channel shape {h.shape} does not match batch/antennas")
        if np.any(cb.F.sum(axis=1) < 1):
            raise ValueError("every antenna needs at least one occupying user")

        B, K, J, N, L, N_obs = self.B, self.K, self.J, self.N, self.L, self.N_obs
        # edge validity: [n, l] used iff 0 <= n-l < N
        n_grid = np.arange(N_obs)[:, None]
        l_grid = np.arange(L)[None, :]
        self.valid = (n_grid - l_grid >= 0) & (n_grid - l_grid < N)
        # gather indices for the signal-centric view sv[m, l] = edge[m+l, l]
        m_grid = np.arange(N)[:, None]
        self._sv_n = m_grid + l_grid  # (N, L)
        self._sv_l = np.broadcast_to(l_grid, (N, L))

        self.support = cb.F.T.astype(bool)  # (K, J)
        pairs = np.argwhere(self.support)
        self.sup_k = pairs[:, 0]
        self.sup_j = pairs[:, 1]
        # constellation values on each support edge: (S, M)
        self.sup_points = np.stack(
            [cb.codewords[k][:, j] for k, j in pairs], axis=0
        )

        def full(shape):
            return np.zeros(shape, dtype=complex), np.full(shape, np.inf)

        self.mu_x_phi = full((B, K, J, N))
        self.mu_phi_x = full((B, K, J, N))
        self.mu_phi_s = full((B, J, N))
        self.mu_s_phi = full((B, J, N))
        self.mu_s_psi = full((B, J, N_obs, L))
        self.mu_psi_s = full((B, J, N_obs, L))
        self.mu_psi_r = full((B, J, N_obs))
        self.mu_f_r = full((B, J, N_obs))
        self.mu_r_f = full((B, J, N_obs))
        self.mu_r_psi = full((B, J, N_obs))
        self.mu_prior_x = full((B, K, J, N))

        self.prior_probs = np.full((B, K, N, self.M), 1.0 / self.M)
        self._fixed_raw = None
        if cfg.prior_mode == "fixed":
            if fixed_prior is None:
                raise ValueError("fixed prior mode needs explicit prior messages")
            pm = np.asarray(fixed_prior[0], dtype=complex)
            pv = np.asarray(fixed_prior[1], dtype=float)
            pm = np.broadcast_to(pm, (B, K, J, N)).copy()
            pv = np.broadcast_to(pv, (B, K, J, N)).copy()
            off = ~self.support[None, :, :, None]
            pm[np.broadcast_to(off, pm.shape)] = 0.0
            pv[np.broadcast_to(off, pv.shape)] = np.inf
            self._fixed_raw = (pm, pv)
            self.mu_prior_x = (pm.copy(), pv.copy())

        self.prior_llrs = None
        if code is not None:
            nbits = N * cb.bits_per_symbol
            if code.n != nbits:
                raise ValueError(f"code length {code.n} != frame bits {nbits}")
            self.prior_llrs = np.zeros((B, K, N, cb.bits_per_symbol))

        self.counting = counting
        self._gam = None if counting is None else self._build_gammas(counting)

        self.true_info_bits = true_info_bits
        self.true_indices = true_indices
        self.safeguards = 0
        self._latch = {}
        self.iter_delta = []
        self.iter_ber = []
        self.iter_ser = []
        self._last_info_hard = None
        self._last_syndrome = None
        self._last_hard_all = None
        self._last_syndrome_all = None

    # ---- counting-number exponents -------------------------------------

    def _build_gammas(self, cn: CountingArrays):
        J, N, L, N_obs = self.J, self.N, self.L, self.N_obs
        d_s = L + 1
        for name, arr, shape in (
            ("c_phi", cn.c_phi, (J, N)),
            ("c_s", cn.c_s, (J, N)),
            ("c_psi", cn.c_psi, (J, N_obs)),
            ("c_r", cn.c_r, (J, N_obs)),
            ("c_f", cn.c_f, (N_obs,)),
            ("c_x", cn.c_x, (self.K, J, N)),
        ):
            if np.asarray(arr).shape != shape:
                raise ValueError(f"{name} has shape {np.asarray(arr).shape}, expected {shape}")

        def pair(d_i, c_a, c_i):
            den = d_i * c_a + c_i + d_i - 1.0
            if np.any(den <= 0):
                raise ValueError("nonpositive gamma denominator; counting numbers invalid")
            return d_i * c_a / den, d_i / den

        g = {}
        g["g_x"] = pair(2.0, 1.0, cn.c_x)  # (K, J, N); prior factor counts 1
        g["phi_x"] = pair(2.0, cn.c_phi[None], cn.c_x)  # (K, J, N)
        g["phi_s"] = pair(float(d_s), cn.c_phi, cn.c_s)  # (J, N)
        c_s_edge = np.full((J, N_obs, L), 1.0 - float(d_s))
        nn, ll = np.nonzero(self.valid)
        for j in range(J):
            c_s_edge[j, nn, ll] = cn.c_s[j, nn - ll]
        ga, gi = pair(float(d_s), cn.c_psi[:, :, None], c_s_edge)  # (J, N_obs, L)
        # invalid tap positions carry vacuous messages; pin their exponents
        ga = np.where(self.valid[None], ga, 1.0)
        gi = np.where(self.valid[None], gi, 1.0)
        g["psi_s"] = (ga, gi)
        g["psi_r"] = pair(2.0, cn.c_psi, cn.c_r)  # (J, N_obs)
        g["f_r"] = pair(2.0, cn.c_f[None], cn.c_r)  # (J, N_obs)
        g["c_f"] = np.asarray(cn.c_f, dtype=float)
        return g

    # ---- auxiliary (plain BP) message formulas -------------------------

    def _aux_phi_to_s(self):
        mask = self.support[None, :, :, None]
        m, v = _masked_sum(self.mu_x_phi[0], self.mu_x_phi[1], mask, axis=1)
        return m, v

    def _aux_phi_to_x(self):
        mask = self.support[None, :, :, None]
        loo_m, loo_v = _loo_sum(self.mu_x_phi[0], self.mu_x_phi[1], mask, axis=1)
        sm, sv = self.mu_s_phi
        out_m = sm[:, None] - loo_m
        inf = ~np.isfinite(sv[:, None]) | ~np.isfinite(loo_v)
        out_v = np.where(inf, np.inf, sv[:, None] + np.where(np.isfinite(loo_v), loo_v, 0.0))
        out_m = np.where(np.isfinite(out_v), out_m, 0.0)
        off = ~np.broadcast_to(mask, out_m.shape)
        out_m = np.where(off, 0.0, out_m)
        out_v = np.where(off, np.inf, out_v)
        return out_m, out_v

    def _sv(self, arr):
        """Edge-layout (.., N_obs, L) -> signal-centric (.., N, L)."""
        return arr[..., self._sv_n, self._sv_l]

    def _scatter_sv(self, m_sv, v_sv):
        B, J, N_obs, L = self.B, self.J, self.N_obs, self.L
        m = np.zeros((B, J, N_obs, L), dtype=complex)
        v = np.full((B, J, N_obs, L), np.inf)
        m[..., self._sv_n, self._sv_l] = m_sv
        v[..., self._sv_n, self._sv_l] = v_sv
        return m, v

    def _aux_s_to_psi(self):
        # per signal: phi message plus all other convolution-edge messages
        eta_p, lam_p = _nat(*self.mu_psi_s)
        eta_sv, lam_sv = self._sv(eta_p), self._sv(lam_p)
        eta_phi, lam_phi = _nat(*self.mu_phi_s)
        tot_eta = eta_phi[..., None] + eta_sv.sum(axis=-1, keepdims=True)
        tot_lam = lam_phi[..., None] + lam_sv.sum(axis=-1, keepdims=True)
        m_sv, v_sv = _mom(tot_eta - eta_sv, tot_lam - lam_sv)
        return self._scatter_sv(m_sv, v_sv)

    def _aux_s_to_phi(self):
        eta_p, lam_p = _nat(*self.mu_psi_s)
        eta = self._sv(eta_p).sum(axis=-1)
        lam = self._sv(lam_p).sum(axis=-1)
        return _mom(eta, lam)

    def _aux_psi_to_r(self):
        h = self.h[:, :, None, :]  # (B, J, 1, L)
        mask = self.valid[None, None]
        m, v = self.mu_s_psi
        sm, sv = _masked_sum(h * m, _weighted_var(np.abs(h) ** 2, v), mask, axis=-1)
        return sm, sv

    def _aux_f_to_r(self):
        m, v = self.mu_r_f
        loo_m, loo_v = _loo_sum(m, v, np.True_, axis=1)
        c_f = 1.0 if self._gam is None else self._gam["c_f"][None, None, :]
        out_m = self.y[:, None, :] - loo_m
        out_v = c_f * self.n0_eff + loo_v
        out_m = np.where(np.isfinite(out_v), out_m, 0.0)
        return out_m, out_v

    def _aux_psi_to_s(self):
        h = self.h[:, :, None, :]
        mask = self.valid[None, None]
        m, v = self.mu_s_psi
        loo_m, loo_v = _loo_sum(h * m, _weighted_var(np.abs(h) ** 2, v), mask, axis=-1)
        h2 = np.abs(h) ** 2
        rm, rv = self.mu_r_psi
        with np.errstate(divide="ignore", invalid="ignore"):
            out_m = (rm[..., None] - loo_m) / np.where(h2 > 0, h, 1.0)
            out_v = (rv[..., None] + loo_v) / np.where(h2 > 0, h2, 1.0)
        bad = (h2 <= 0) | ~np.isfinite(out_v) | ~mask
        out_m = np.where(bad, 0.0, out_m)
        out_v = np.where(bad, np.inf, out_v)
        return out_m, out_v

    # ---- exponent combination ------------------------------------------

    def _combine(self, fA, eA, fB, eB):
        eA = np.asarray(eA, dtype=float)
        eB = np.asarray(eB, dtype=float)
        if np.all(eA == 1.0) and np.all(eB == 0.0):
            return fA()
        if np.all(eA == 0.0) and np.all(eB == 1.0):
            return fB()
        eta = 0.0
        lam = 0.0
        for f, e in ((fA, eA), (fB, eB)):
            if np.all(e == 0.0):
                continue
            et, la = _nat(*f())
            eta = eta + e * et
            lam = lam + e * la
        return _mom(eta, lam)

    def _combine_latched(self, name, fA, eA, fB, eB, plain_is_a):
        """Exponent combination that never emits an improper message.

        The negative-exponent correction terms subtract precision; an edge
        whose partner cannot support the subtraction falls back to the
        unit-exponent (plain) value, and stays there for the rest of the
        frame: re-enabling the correction once the plain value has restored
        the partner just disables it again next sweep, and that flip-flop
        never settles. Entry-wise, so healthy edges keep their corrections.
        The Bethe short-circuits make this bit-identical to the plain
        detector."""
        eA = np.asarray(eA, dtype=float)
        eB = np.asarray(eB, dtype=float)
        if np.all(eA == 1.0) and np.all(eB == 0.0):
            return fA()
        if np.all(eA == 0.0) and np.all(eB == 1.0):
            return fB()
        mA, vA = fA()
        mB, vB = fB()
        etaA, lamA = _nat(mA, vA)
        etaB, lamB = _nat(mB, vB)
        m, v = _mom(eA * etaA + eB * etaB, eA * lamA + eB * lamB)
        bad = np.isfinite(v) & (v <= 0.0)
        latched = self._latch.get(name)
        if latched is not None:
            bad = bad | latched
        self._latch[name] = bad
        if np.any(bad):
            pm, pv = (mA, vA) if plain_is_a else (mB, vB)
            m = np.where(bad, pm, m)
            v = np.where(bad, pv, v)
            self.safeguards += int(np.count_nonzero(bad))
        return m, v

    def _mix(self, name, fA, eA, fB, eB, plain_is_a):
        if self.cfg.prior_mode == "fixed":
            return self._combine(fA, eA, fB, eB)
        return self._combine_latched(name, fA, eA, fB, eB, plain_is_a)

    # ---- schedule --------------------------------------------------------

    def _phase_prior(self):
        g = self._gam
        if self.cfg.prior_mode == "fixed":
            if g is None:
                return
            # Gaussian priors are real factors of the model, so the prior
            # edge obeys the same two-exponent rule as every other edge;
            # this keeps the Gaussian fixed point at the exact posterior mean
            ggx_a, ggx_b = g["g_x"]
            phi_x = self.mu_phi_x
            raw = self._fixed_raw

            def copy_of(pair):
                return lambda: (pair[0].copy(), pair[1].copy())

            self.mu_prior_x = self._combine(copy_of(raw), ggx_a, copy_of(phi_x), ggx_b - 1.0)
            return
        # Discrete priors are refreshed by the EP quotient against the current
        # factor-side message and stored as-is; exponent weighting never
        # touches this edge (a mixture of point masses has no meaningful
        # fractional power).
        cav_m = self.mu_phi_x[0][:, self.sup_k, self.sup_j, :]
        cav_v = self.mu_phi_x[1][:, self.sup_k, self.sup_j, :]
        if self.cfg.prior_mode == "gauss":
            cav_v = np.full_like(cav_v, np.inf)
        probs = self.prior_probs[:, self.sup_k]  # (B, S, N, M)
        mean, var, guarded = ep_project_arrays(
            probs,
            self.sup_points[None, :, None, :],
            cav_m,
            cav_v,
            self.cfg.var_floor,
        )
        var = np.maximum(var, self.cfg.prior_var_floor)
        self.safeguards += int(np.count_nonzero(guarded))
        am = np.zeros_like(self.mu_prior_x[0])
        av = np.full_like(self.mu_prior_x[1], np.inf)
        am[:, self.sup_k, self.sup_j, :] = mean
        av[:, self.sup_k, self.sup_j, :] = var
        self.mu_prior_x = (am, av)

    def _prior_copy(self):
        return self.mu_prior_x[0].copy(), self.mu_prior_x[1].copy()

    def begin_iteration(self):
        """Phases up to the signal-message product; returns the local signal
        messages (what a cooperating user would broadcast)."""
        g = self._gam
        self._phase_prior()
        if g is None:
            self.mu_x_phi = self._prior_copy()
            self.mu_phi_s = self._aux_phi_to_s()
            self.mu_s_psi = self._aux_s_to_psi()
            self.mu_psi_r = self._aux_psi_to_r()
            self.mu_r_f = (self.mu_psi_r[0].copy(), self.mu_psi_r[1].copy())
            self.mu_f_r = self._aux_f_to_r()
            self.mu_r_psi = (self.mu_f_r[0].copy(), self.mu_f_r[1].copy())
            self.mu_psi_s = self._aux_psi_to_s()
        elif self.cfg.prior_mode == "fixed":
            gpx_a, gpx_b = g["phi_x"]
            self.mu_x_phi = self._combine(self._aux_phi_to_x, gpx_a - 1.0, self._prior_copy, gpx_b)
            self._begin_conv_tail()
        else:
            # discrete priors: the EP quotient is itself the codeword-side
            # var-to-factor message (the exponent-combined variant is computed
            # last and immediately superseded by the next EP refresh, so it
            # never has a consumer)
            self.mu_x_phi = self._prior_copy()
            self._begin_conv_tail()
        return self._aux_s_to_phi()

    def _begin_conv_tail(self):
        g = self._gam
        gps_a, gps_b = g["phi_s"]
        self.mu_phi_s = self._mix("phi_s", self._aux_phi_to_s, gps_a, self._aux_s_to_phi, gps_b - 1.0, True)
        gss_a, gss_b = g["psi_s"]
        self.mu_s_psi = self._mix("s_psi", self._aux_psi_to_s, gss_a - 1.0, self._aux_s_to_psi, gss_b, False)
        gpr_a, gpr_b = g["psi_r"]
        aux_psi_r = self._aux_psi_to_r()

        def copy_of(pair):
            return lambda: (pair[0].copy(), pair[1].copy())

        self.mu_psi_r = self._mix("psi_r", copy_of(aux_psi_r), gpr_a, copy_of(self.mu_f_r), gpr_b - 1.0, True)
        gfr_a, gfr_b = g["f_r"]
        self.mu_r_f = self._mix("r_f", self._aux_f_to_r, gfr_a - 1.0, copy_of(self.mu_psi_r), gfr_b, False)
        self.mu_f_r = self._mix("f_r", self._aux_f_to_r, gfr_a, copy_of(self.mu_psi_r), gfr_b - 1.0, True)
        self.mu_r_psi = self._mix("r_psi", copy_of(aux_psi_r), gpr_a - 1.0, copy_of(self.mu_f_r), gpr_b, False)
        self.mu_psi_s = self._mix("psi_s", self._aux_psi_to_s, gss_a, self._aux_s_to_psi, gss_b - 1.0, True)

    def finish_iteration(self, s_phi_override=None):
        g = self._gam
        prev = (self.mu_phi_x[0].copy(), _nat(*self.mu_phi_x)[1].copy())
        if s_phi_override is not None:
            m, v = s_phi_override
            self.mu_s_phi = (np.array(m, dtype=complex), np.array(v, dtype=float))
        elif g is None:
            self.mu_s_phi = self._aux_s_to_phi()
        else:
            gps_a, gps_b = g["phi_s"]
            self.mu_s_phi = self._mix("s_phi", self._aux_phi_to_s, gps_a - 1.0, self._aux_s_to_phi, gps_b, False)
        if g is None:
            self.mu_phi_x = self._aux_phi_to_x()
        elif self.cfg.prior_mode == "fixed":
            gpx_a, gpx_b = g["phi_x"]
            self.mu_phi_x = self._combine(self._aux_phi_to_x, gpx_a, self._prior_copy, gpx_b - 1.0)
        else:
            # the EP cavity and the decision scores need a proper density
            gpx_a, gpx_b = g["phi_x"]
            self.mu_phi_x = self._mix("phi_x", self._aux_phi_to_x, gpx_a, self._prior_copy, gpx_b - 1.0, True)
        self._phase_decode()
        dm = np.mean(np.abs(self.mu_phi_x[0] - prev[0]))
        dl = np.mean(np.abs(_nat(*self.mu_phi_x)[1] - prev[1]))
        self.iter_delta.append(float(dm + dl))

    def _user_edge_msgs(self, k):
        # improper entries stay: the quadratic scores are the pointwise ratio
        # of the (proper) belief to the prior message, finite for any sign
        js = self.cb.support(k)
        m = np.moveaxis(self.mu_phi_x[0][:, k, js, :], 1, 2)  # (B, N, D)
        v = np.moveaxis(self.mu_phi_x[1][:, k, js, :], 1, 2)
        return m, v, self.cb.points(k)

    def _phase_decode(self):
        if self.code is None:
            if self.true_indices is not None:
                self.iter_ser.append(self._symbol_errors())
            return
        B, K, N = self.B, self.K, self.N
        bs = self.cb.bits_per_symbol
        # every stream of the broadcast is decoded: the refreshed priors of
        # the interfering users are what make the next sweep separate them
        ext = np.empty((B, K, N, bs))
        for k in range(K):
            m, v, pts = self._user_edge_msgs(k)
            ext[:, k] = symbol_extrinsic_llr(
                m, v, pts, self.cb.bit_labels, self.prior_llrs[:, k]
            )
        dec_ext, hard, ok = self.code.decode_bp(
            ext.reshape(B * K, -1), iters=self.cfg.ldpc_iters
        )
        self.prior_llrs = dec_ext.reshape(B, K, N, bs)
        for k in range(K):
            self.prior_probs[:, k] = symbol_priors_from_llrs(
                self.prior_llrs[:, k], self.cb.bit_labels
            )
        hard = hard.reshape(B, K, -1)
        ok = ok.reshape(B, K)
        self._last_hard_all = hard[..., self.code.info_positions]
        self._last_syndrome_all = ok
        if self.own_user is not None:
            self._last_info_hard = hard[:, self.own_user][:, self.code.info_positions]
            self._last_syndrome = ok[:, self.own_user]
            if self.true_info_bits is not None:
                errs = np.mean(self._last_info_hard != self.true_info_bits, axis=-1)
                self.iter_ber.append(errs)
        if self.true_indices is not None:
            self.iter_ser.append(self._symbol_errors())

    def _symbol_errors(self):
        dec = self.symbol_decisions()
        return np.mean(dec != self.true_indices, axis=(1, 2))

    # ---- read-outs -------------------------------------------------------

    def symbol_decisions(self):
        out = np.empty((self.B, self.K, self.N), dtype=np.int64)
        for k in range(self.K):
            m, v, pts = self._user_edge_msgs(k)
            scores = codeword_scores(m, v, pts)
            scores = scores + np.log(np.maximum(self.prior_probs[:, k], 1e-300))
            out[:, k] = np.argmax(scores, axis=-1)
        return out

    def signal_beliefs(self):
        eta_p, lam_p = _nat(*self.mu_psi_s)
        eta = self._sv(eta_p).sum(axis=-1)
        lam = self._sv(lam_p).sum(axis=-1)
        eta_phi, lam_phi = _nat(*self.mu_phi_s)
        m, v = _mom(eta + eta_phi, lam + lam_phi)
        m, v, nbad = _sanitize(m, v)
        self.safeguards += nbad
        return m, v

    def codeword_component_beliefs(self):
        eta_a, lam_a = _nat(*self.mu_phi_x)
        eta_b, lam_b = _nat(*self.mu_prior_x)
        m, v = _mom(eta_a + eta_b, lam_a + lam_b)
        m, v, nbad = _sanitize(m, v)
        self.safeguards += nbad
        return m, v

    def run(self, n_iter=None):
        for _ in range(self.cfg.n_iter if n_iter is None else n_iter):
            self.begin_iteration()
            self.finish_iteration()
        return self.result()

    def result(self):
        """Snapshot of current decisions and per-iteration statistics."""
        return DetectResult(
            symbol_indices=self.symbol_decisions(),
            info_bits=self._last_info_hard,
            syndrome_ok=self._last_syndrome,
            iter_delta=np.asarray(self.iter_delta),
            iter_ber=np.asarray(self.iter_ber) if self.iter_ber else None,
            iter_ser=np.asarray(self.iter_ser) if self.iter_ser else None,
            safeguards=self.safeguards,
            info_bits_all=self._last_hard_all,
            syndrome_ok_all=self._last_syndrome_all,
        )


def detect_frame(
    y,
    h,
    cb: Codebook,
    code=None,
    cfg: ReceiverConfig | None = None,
    N0: float = 1.0,
    own_user: int | None = None,
    counting: CountingArrays | None = None,
    fixed_prior=None,
    true_info_bits=None,
    true_indices=None,
) -> DetectResult:
    cfg = cfg or ReceiverConfig()
    eng = DetectorEngine(
        y,
        h,
        cb,
        N0,
        cfg,
        own_user=own_user,
        code=code,
        counting=counting,
        fixed_prior=fixed_prior,
        true_info_bits=true_info_bits,
        true_indices=true_indices,
    )
    return eng.run()


def detect_frame_conv(y, h, cb, counting: CountingArrays, code=None, cfg=None, N0=1.0, **kw):
    return detect_frame(y, h, cb, code=code, cfg=cfg, N0=N0, counting=counting, **kw)


def bethe_counting(K, J, L, N) -> CountingArrays:
    """Standard-BP counting numbers: every factor counts once."""
    N_obs = N + L - 1
    return CountingArrays(
        c_phi=np.ones((J, N)),
        c_s=np.full((J, N), -float(L)),
        c_psi=np.ones((J, N_obs)),
        c_r=np.full((J, N_obs), -1.0),
        c_f=np.ones(N_obs),
        c_x=np.full((K, J, N), -1.0),
    )
