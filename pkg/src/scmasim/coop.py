"""Round-synchronous user cooperation on the detector's signal messages.

Each receiver ends its upward sweep with one Gaussian message per signal
variable; the product of all users' messages is the fused signal message a
central unit would compute. The protocols here reach that product with
neighbor-only exchanges: parameters travel in natural form
theta = (mean/variance, 1/variance), where products become sums and
consensus averaging is componentwise.

Two protocols. Metropolis-weighted belief consensus averages neighbor
parameters directly; on noisy links it switches to a vanishing-step variant
that trades speed for bounded noise accumulation. Bregman ADMM anchors every
user to its initial parameters, exchanges both a primal and an auxiliary
variable (twice the traffic), and adapts each user's penalty to its
primal/dual residual balance. Both limits are the network average of the
initial parameters; scaling by the user count turns the average into the
product.

Array convention: parameter arrays have shape (*lead, V) with the tracked
variables flattened into the last axis. Residual norms and MSE reduce over
that axis only, so a leading batch axis runs independent networks in
lockstep (batched runs adapt penalties per lead entry, exactly as separate
runs would).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .msg_core import GaussianMsg, gmul_all

PENALTY_KAPPA = 10.0
PENALTY_TAU = 1.0


def local_message(tap_msgs) -> GaussianMsg:
    """Fuse the convolution-factor messages into one signal message."""
    return gmul_all(tap_msgs)


def fuse_global(locals_) -> GaussianMsg:
    """Centralized fusion: the product of every user's local message."""
    return gmul_all(locals_)


# ---------------------------------------------------------------------------
# parameter container


@dataclasses.dataclass(frozen=True)
class NaturalParams:
    """Natural parameters (mean/var, 1/var) per tracked variable.

    Values converted from messages have nonnegative precision. The protocol
    arithmetic is a plain vector space, so intermediates (multipliers,
    noisy receptions) may leave that cone; `to_messages` reapplies the
    nonnegativity guard at the exit boundary.
    """

    eta: np.ndarray  # complex, shape (*lead, V)
    prec: np.ndarray  # real, same shape

    @classmethod
    def from_messages(cls, m, v):
        m = np.asarray(m, dtype=complex)
        v = np.asarray(v, dtype=float)
        prec = np.where(np.isfinite(v), 1.0 / v, 0.0)
        return cls(eta=m * prec, prec=prec)

    def to_messages(self):
        ok = self.prec > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.where(ok, 1.0 / np.where(ok, self.prec, 1.0), np.inf)
            m = np.where(ok, self.eta / np.where(ok, self.prec, 1.0), 0.0)
        return m, v

    def __add__(self, other):
        return NaturalParams(self.eta + other.eta, self.prec + other.prec)

    def __sub__(self, other):
        return NaturalParams(self.eta - other.eta, self.prec - other.prec)

    def scaled(self, a):
        """Scale by a real factor (scalar or lead-shaped array)."""
        a = np.asarray(a)
        if a.ndim:
            a = a[..., None]
        return NaturalParams(self.eta * a, self.prec * a)

    def copy(self):
        return NaturalParams(self.eta.copy(), self.prec.copy())

    @classmethod
    def zeros_like(cls, other):
        return cls(np.zeros_like(other.eta), np.zeros_like(other.prec))

    def dist_sq(self, other):
        """Squared distance over the variable axis; shape (*lead,)."""
        de = self.eta - other.eta
        dp = self.prec - other.prec
        return np.sum(de.real**2 + de.imag**2 + dp**2, axis=-1)

    def power(self):
        """Mean square of the real components; shape (*lead,)."""
        e2 = self.eta.real**2 + self.eta.imag**2
        return (np.sum(e2, axis=-1) + np.sum(self.prec**2, axis=-1)) / (
            3 * self.eta.shape[-1]
        )


def params_mean(states) -> NaturalParams:
    K = len(states)
    acc = states[0].copy()
    for s in states[1:]:
        acc = acc + s
    return acc.scaled(1.0 / K)


def network_mse(states):
    """Sum over users of squared distance to the current network average."""
    mean = params_mean(states)
    out = states[0].dist_sq(mean)
    for s in states[1:]:
        out = out + s.dist_sq(mean)
    return out


# ---------------------------------------------------------------------------
# topology


@dataclasses.dataclass(frozen=True)
class NetworkTopology:
    """Disk-graph cooperation network with Metropolis averaging weights."""

    positions: np.ndarray  # (K, 2) meters
    range_d: float
    neighbors: tuple  # tuple of per-user sorted neighbor tuples
    weights: np.ndarray  # (K, K) Metropolis matrix

    def __post_init__(self):
        w = self.weights
        if np.any(w < 0):
            raise AssertionError("negative Metropolis weight")
        if np.max(np.abs(w - w.T)) > 1e-12:
            raise AssertionError("Metropolis matrix must be symmetric")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-12:
            raise AssertionError("Metropolis rows must sum to 1")

    @property
    def n_users(self):
        return len(self.neighbors)

    def degree(self, k):
        return len(self.neighbors[k])

    def is_connected(self):
        K = self.n_users
        seen = {0}
        stack = [0]
        while stack:
            k = stack.pop()
            for i in self.neighbors[k]:
                if i not in seen:
                    seen.add(i)
                    stack.append(i)
        return len(seen) == K

    @classmethod
    def from_positions(cls, positions, range_d=10.0):
        positions = np.asarray(positions, dtype=float)
        K = positions.shape[0]
        diff = positions[:, None, :] - positions[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        adj = (dist <= range_d) & ~np.eye(K, dtype=bool)
        neighbors = tuple(
            tuple(int(i) for i in np.flatnonzero(adj[k])) for k in range(K)
        )
        deg = adj.sum(axis=1)
        w = np.zeros((K, K))
        for k in range(K):
            for i in neighbors[k]:
                w[k, i] = 1.0 / max(deg[k], deg[i])
            w[k, k] = 1.0 - w[k].sum()
        return cls(
            positions=positions, range_d=float(range_d), neighbors=neighbors,
            weights=w,
        )

    @classmethod
    def random(cls, K, rng, *, side=20.0, range_d=10.0, require_connected=True,
               max_draws=1000):
        """Users uniform on a side x side square, linked within range_d."""
        for _ in range(max_draws):
            topo = cls.from_positions(
                rng.uniform(0.0, side, size=(K, 2)), range_d=range_d
            )
            if not require_connected or topo.is_connected():
                return topo
        raise RuntimeError(f"no connected draw in {max_draws} attempts")


def fully_connected_topology(K):
    """All pairwise links; positions collapsed to the origin."""
    return NetworkTopology.from_positions(np.zeros((K, 2)), range_d=1.0)


# ---------------------------------------------------------------------------
# link noise


@dataclasses.dataclass
class LinkNoiseModel:
    """Additive white Gaussian noise on every transmitted parameter vector.

    The per-component noise variance is set on `calibrate` so that the
    average parameter power over the first round's parameters, divided by
    the noise variance, equals the configured link SNR (per lead entry when
    batched). Failed links replay the last delivered value; the initial
    parameters count as delivered, so a first-round failure has a fallback.
    """

    snr_db: float | None = None
    seed: int = 0
    p_fail: float = 0.0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)
        self._sigma = None
        self._cache = {}

    @property
    def noiseless(self):
        return self.snr_db is None and self.p_fail == 0.0

    def calibrate(self, states):
        if self.snr_db is not None:
            p = states[0].power()
            for s in states[1:]:
                p = p + s.power()
            p = p / len(states)
            self._sigma = np.sqrt(p / 10.0 ** (self.snr_db / 10.0))
        for k in range(len(states)):
            for i in range(len(states)):
                if i != k:
                    self._cache[("init", k, i)] = states[i]

    def _perturb(self, theta):
        if self.snr_db is None:
            return theta
        if self._sigma is None:
            raise RuntimeError("noise model used before calibration")
        s = np.asarray(self._sigma)
        if s.ndim:
            s = s[..., None]
        ne = self._rng.standard_normal(theta.eta.shape) * s + 1j * (
            self._rng.standard_normal(theta.eta.shape) * s
        )
        np_ = self._rng.standard_normal(theta.prec.shape) * s
        return NaturalParams(theta.eta + ne, theta.prec + np_)

    def transmit(self, tag, k, i, theta):
        """Deliver user i's parameters to user k over one directed link."""
        if self.noiseless:
            return theta
        if self.p_fail > 0.0 and self._rng.random() < self.p_fail:
            return self._cache.get((tag, k, i), self._cache[("init", k, i)])
        out = self._perturb(theta)
        if self.p_fail > 0.0:
            self._cache[(tag, k, i)] = out
        return out


NOISELESS = LinkNoiseModel()


# ---------------------------------------------------------------------------
# belief consensus


def consensus_round(states, topo, noise=NOISELESS, p=1, vanishing=False):
    """One synchronous Metropolis averaging round.

    Plain form replaces each user's parameters by the weighted neighborhood
    average; the vanishing form moves a 1/p step toward the (noisy) average
    disagreement, which keeps link noise from accumulating.
    """
    K = len(states)
    w = topo.weights
    out = []
    for k in range(K):
        if vanishing:
            alpha = 1.0 / max(int(p), 1)
            step = NaturalParams.zeros_like(states[k])
            for i in topo.neighbors[k]:
                got = noise.transmit("theta", k, i, states[i])
                step = step + (got - states[k]).scaled(w[k, i])
            out.append(states[k] + step.scaled(alpha))
        else:
            acc = states[k].scaled(w[k, k])
            for i in topo.neighbors[k]:
                got = noise.transmit("theta", k, i, states[i])
                acc = acc + got.scaled(w[k, i])
            out.append(acc)
    return out


# ---------------------------------------------------------------------------
# Bregman ADMM


@dataclasses.dataclass
class AdmmState:
    """Per-user primal/auxiliary/multiplier variables and penalties.

    Each user k owns a bridge variable pi_k coupling its neighborhood
    (theta_i = pi_k for i in S_k and itself); mult[(k, i)] is the multiplier
    of that coupling as user k tracks it. A user can keep every multiplier
    that touches it current from its own values plus the received theta/pi
    broadcasts, so multipliers never cross a link: `m_out[(k, i)]` is user
    k's copy for its own bridge against theta_i, `m_in[(k, i)]` its copy for
    neighbor i's bridge against theta_k. Noiseless, m_in[(k, i)] equals
    m_out[(i, k)]; link noise lets the two copies drift apart, which is the
    stochastic-update reading of noisy links.

    `pi_recv` caches the bridge values received in the last broadcast, so
    one transmission per link per round serves both the multiplier update
    and the next round's primal update.
    """

    theta0: list  # anchors, never updated
    theta: list
    pi: list
    m_out: dict  # (k, i) -> NaturalParams, i in neighbors[k] + self
    m_in: dict  # (k, i) -> NaturalParams, i in neighbors[k] + self
    c: list  # per-user penalty, scalar or lead-shaped array
    pi_recv: dict | None = None
    nbr_mean_prev: list | None = None
    eps: list | None = None  # primal residual norms, per user
    iota: list | None = None  # dual residual norms, per user

    @classmethod
    def init(cls, states, topo, c0=1.0):
        K = len(states)
        m_out, m_in = {}, {}
        for k in range(K):
            for i in (*topo.neighbors[k], k):
                m_out[(k, i)] = NaturalParams.zeros_like(states[k])
                m_in[(k, i)] = NaturalParams.zeros_like(states[k])
        lead = states[0].prec.shape[:-1]
        return cls(
            theta0=[s.copy() for s in states],
            theta=[s.copy() for s in states],
            pi=[s.copy() for s in states],
            m_out=m_out,
            m_in=m_in,
            c=[np.full(lead, float(c0)) for _ in range(K)],
        )


def adapt_penalty(state: AdmmState, k, kappa=PENALTY_KAPPA, tau=PENALTY_TAU):
    """Residual-balancing penalty update: grow on primal excess, shrink on
    dual excess, else hold."""
    eps, iota, c = state.eps[k], state.iota[k], state.c[k]
    grow = eps > kappa * iota
    shrink = iota > kappa * eps
    return np.where(grow, c * (1.0 + tau), np.where(shrink, c / (1.0 + tau), c))


def admm_round(state: AdmmState, topo, noise=NOISELESS) -> AdmmState:
    """One synchronous bridge-ADMM round: theta, then pi, then multipliers.

    theta_k minimizes its anchor term plus the penalties of every bridge
    containing it (each weighted by the bridge owner's penalty); pi_k
    re-centers user k's bridge on the received thetas; the multipliers
    absorb the remaining disagreement. Fresh theta and fresh pi each cross
    every link exactly once per round, and the multiplier sum telescopes to
    zero, which pins the noiseless fixed point to the network average of
    the anchors for any penalty trajectory.
    """
    K = len(state.theta)

    new_theta = []
    for k in range(K):
        denom = 1.0 + state.c[k] * 1.0
        acc = state.theta0[k] - state.m_in[(k, k)] + state.pi[k].scaled(state.c[k])
        for i in topo.neighbors[k]:
            if state.pi_recv is not None:
                pi_i = state.pi_recv[(k, i)]
            else:
                pi_i = noise.transmit("pi", k, i, state.pi[i])
            acc = acc - state.m_in[(k, i)] + pi_i.scaled(state.c[i])
            denom = denom + state.c[i]
        new_theta.append(acc.scaled(1.0 / denom))

    theta_recv = {
        (k, i): noise.transmit("theta", k, i, new_theta[i])
        for k in range(K)
        for i in topo.neighbors[k]
    }

    new_pi = []
    for k in range(K):
        acc = new_theta[k].scaled(state.c[k]) + state.m_out[(k, k)]
        for i in topo.neighbors[k]:
            acc = acc + theta_recv[(k, i)].scaled(state.c[k]) + state.m_out[(k, i)]
        new_pi.append(acc.scaled(1.0 / (state.c[k] * (topo.degree(k) + 1))))

    pi_recv = {
        (k, i): noise.transmit("pi", k, i, new_pi[i])
        for k in range(K)
        for i in topo.neighbors[k]
    }

    m_out, m_in = {}, {}
    for k in range(K):
        own = (new_theta[k] - new_pi[k]).scaled(state.c[k])
        m_out[(k, k)] = state.m_out[(k, k)] + own
        m_in[(k, k)] = state.m_in[(k, k)] + own
        for i in topo.neighbors[k]:
            m_out[(k, i)] = state.m_out[(k, i)] + (
                (theta_recv[(k, i)] - new_pi[k]).scaled(state.c[k])
            )
            m_in[(k, i)] = state.m_in[(k, i)] + (
                (new_theta[k] - pi_recv[(k, i)]).scaled(state.c[i])
            )

    nbr_mean = []
    for k in range(K):
        acc = NaturalParams.zeros_like(new_theta[k])
        for i in topo.neighbors[k]:
            acc = acc + theta_recv[(k, i)]
        nbr_mean.append(acc.scaled(1.0 / max(topo.degree(k), 1)))

    eps = [np.sqrt(new_theta[k].dist_sq(nbr_mean[k])) for k in range(K)]
    out = AdmmState(
        theta0=state.theta0,
        theta=new_theta,
        pi=new_pi,
        m_out=m_out,
        m_in=m_in,
        c=list(state.c),
        pi_recv=pi_recv,
        nbr_mean_prev=nbr_mean,
        eps=eps,
        iota=None,
    )
    if state.nbr_mean_prev is not None:
        out.iota = [
            np.sqrt(nbr_mean[k].dist_sq(state.nbr_mean_prev[k])) for k in range(K)
        ]
        out.c = [adapt_penalty(out, k) for k in range(K)]
    return out


# ---------------------------------------------------------------------------
# frame-level driver


def run_cooperative_detection(
    local_msgs, topo, protocol="consensus", n_rounds=10, noise=None,
    trace=None, admm_c0=None,
):
    """Fuse per-user local signal messages; Algorithm: init, rounds, rescale.

    local_msgs: per user, a (mean, var) array pair of any common shape.
    Returns the per-user fused (mean, var) pairs. `centralized` computes the
    exact product for every user; the distributed protocols approach the
    average of the users' natural parameters and are rescaled by K on exit
    so their limit is that same product. A list passed as `trace` collects
    the network MSE after every round.

    admm_c0=None picks the penalty by link regime: 1.0 noiseless, 0.1 under
    link noise. The multiplier updates integrate whatever noise rides on the
    received parameters, so the noisy regime wants a step an order of
    magnitude smaller, mirroring the vanishing factor on the consensus side.
    """
    noise = noise or NOISELESS
    K = len(local_msgs)
    shape = np.asarray(local_msgs[0][0]).shape
    states = [
        NaturalParams.from_messages(
            np.asarray(m, dtype=complex).reshape(*shape[:-2], -1)
            if len(shape) >= 2
            else np.asarray(m, dtype=complex).reshape(-1),
            np.asarray(v, dtype=float).reshape(*shape[:-2], -1)
            if len(shape) >= 2
            else np.asarray(v, dtype=float).reshape(-1),
        )
        for m, v in local_msgs
    ]

    if protocol == "centralized":
        total = states[0]
        for s in states[1:]:
            total = total + s
        fused = [total] * K
    elif protocol in ("consensus", "admm"):
        noise.calibrate(states)
        if protocol == "consensus":
            vanishing = noise.snr_db is not None
            for p in range(1, n_rounds + 1):
                states = consensus_round(
                    states, topo, noise, p=p, vanishing=vanishing
                )
                if trace is not None:
                    trace.append(network_mse(states))
        else:
            if admm_c0 is None:
                admm_c0 = 1.0 if noise.noiseless else 0.1
            st = AdmmState.init(states, topo, c0=admm_c0)
            for _ in range(n_rounds):
                st = admm_round(st, topo, noise)
                if trace is not None:
                    trace.append(network_mse(st.theta))
            states = st.theta
        fused = [s.scaled(float(K)) for s in states]
    else:
        raise ValueError(f"unknown protocol {protocol!r}")

    out = []
    for f in fused:
        m, v = f.to_messages()
        out.append((m.reshape(shape), v.reshape(shape)))
    return out
