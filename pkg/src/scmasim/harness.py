"""Monte Carlo orchestration: config files, BER sweeps, MSE traces, CSV I/O.

Every trial draws its randomness from a generator seeded by
(master_seed, trial_index), so results do not depend on how trials are
chunked into vectorized batches and any subset of trials can be rerun or
merged without touching the rest.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from pathlib import Path

import numpy as np
import yaml

from .channel import draw_channel, ebn0_to_n0, transmit
from .convexify import C_MIN, REG, ConvexifiedCounting, receiver_counting
from .coop import (
    AdmmState,
    LinkNoiseModel,
    NaturalParams,
    NetworkTopology,
    admm_round,
    consensus_round,
    params_mean,
    run_cooperative_detection,
)
from .ldpc import LdpcCode
from .receiver import DetectorEngine, ReceiverConfig
from .scma_codec import DEFAULT_F, build_codebook, encode_symbols, superpose

log = logging.getLogger(__name__)

RECEIVER_MODES = ("stretch-bp-ep", "gauss-approx-bp", "conv-bp-ep")
COOP_PROTOCOLS = ("consensus", "admm", "centralized")

# trials per vectorized batch; cooperative runs draw one topology per trial
# and therefore run trial-at-a-time
_CHUNK = 16


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _require(cond, field, msg):
    if not cond:
        raise ConfigError(f"{field}: {msg}")


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class SystemConfig:
    K: int = 6
    J: int = 4
    L: int = 10
    M: int = 4
    D: int = 2
    F: list = dataclasses.field(
        default_factory=lambda: DEFAULT_F.astype(int).tolist()
    )

    def validate(self):
        for name in ("K", "J", "L", "M", "D"):
            v = getattr(self, name)
            _require(isinstance(v, int) and v >= 1, f"system.{name}",
                     f"must be a positive integer, got {v!r}")
        _require(self.M >= 2 and self.M & (self.M - 1) == 0, "system.M",
                 f"must be a power of two, got {self.M}")
        F = np.asarray(self.F)
        _require(F.ndim == 2 and F.shape == (self.J, self.K), "system.F",
                 f"must be a {self.J}x{self.K} matrix, got shape {F.shape}")
        _require(np.isin(F, (0, 1)).all(), "system.F", "entries must be 0 or 1")
        _require((F.sum(axis=0) == self.D).all(), "system.F",
                 f"every user must occupy exactly D={self.D} antennas")
        _require((F.sum(axis=1) >= 1).all(), "system.F",
                 "every antenna needs at least one occupying user")


@dataclasses.dataclass
class CodeConfig:
    n: int = 1008
    profile: str = "rate-5/7"
    inner_iters: int = 10

    def validate(self):
        _require(isinstance(self.n, int) and self.n >= 14, "code.n",
                 f"must be an integer >= 14, got {self.n!r}")
        _require(self.profile == "rate-5/7", "code.profile",
                 f"only the rate-5/7 family is built in, got {self.profile!r}")
        _require(isinstance(self.inner_iters, int) and self.inner_iters >= 1,
                 "code.inner_iters", "must be a positive integer")


@dataclasses.dataclass
class ReceiverSection:
    mode: str = "conv-bp-ep"
    n_iter: int = 10

    def validate(self):
        _require(self.mode in RECEIVER_MODES, "receiver.mode",
                 f"must be one of {RECEIVER_MODES}, got {self.mode!r}")
        _require(isinstance(self.n_iter, int) and self.n_iter >= 1,
                 "receiver.n_iter", "must be a positive integer")


@dataclasses.dataclass
class CooperationConfig:
    enabled: bool = False
    protocol: str = "consensus"
    n_p: int = 10
    d: float = 10.0
    link_snr_db: float | None = None

    def __post_init__(self):
        self.d = float(self.d)
        if self.link_snr_db is not None:
            self.link_snr_db = float(self.link_snr_db)

    def validate(self):
        _require(isinstance(self.enabled, bool), "cooperation.enabled",
                 "must be true or false")
        _require(self.protocol in COOP_PROTOCOLS, "cooperation.protocol",
                 f"must be one of {COOP_PROTOCOLS}, got {self.protocol!r}")
        _require(isinstance(self.n_p, int) and self.n_p >= 1,
                 "cooperation.n_p", "must be a positive integer")
        _require(self.d > 0, "cooperation.d", "must be positive")


@dataclasses.dataclass
class SweepConfig:
    ebn0_db: list = dataclasses.field(
        default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0]
    )
    trials: int = 1000
    master_seed: int = 1

    def __post_init__(self):
        self.ebn0_db = [float(x) for x in self.ebn0_db]

    def validate(self):
        _require(len(self.ebn0_db) > 0, "sweep.ebn0_db", "must be nonempty")
        _require(isinstance(self.trials, int) and self.trials >= 1,
                 "sweep.trials", "must be a positive integer")
        _require(isinstance(self.master_seed, int) and self.master_seed >= 0,
                 "sweep.master_seed", "must be a nonnegative integer")


@dataclasses.dataclass
class OutputConfig:
    ber_csv: str = "out/ber.csv"
    mse_csv: str = "out/mse.csv"
    counting_cache: str = "out/counting"

    def validate(self):
        for name in ("ber_csv", "mse_csv", "counting_cache"):
            _require(isinstance(getattr(self, name), str) and getattr(self, name),
                     f"output.{name}", "must be a nonempty path")


_SECTIONS = {
    "system": SystemConfig,
    "code": CodeConfig,
    "receiver": ReceiverSection,
    "cooperation": CooperationConfig,
    "sweep": SweepConfig,
    "output": OutputConfig,
}


@dataclasses.dataclass
class SimConfig:
    system: SystemConfig = dataclasses.field(default_factory=SystemConfig)
    code: CodeConfig = dataclasses.field(default_factory=CodeConfig)
    receiver: ReceiverSection = dataclasses.field(default_factory=ReceiverSection)
    cooperation: CooperationConfig = dataclasses.field(
        default_factory=CooperationConfig
    )
    sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)
    output: OutputConfig = dataclasses.field(default_factory=OutputConfig)

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.system.M))

    @property
    def frame_symbols(self) -> int:
        return self.code.n // self.bits_per_symbol

    def validate(self):
        for name, section in self._sections():
            section.validate()
        _require(self.code.n % self.bits_per_symbol == 0, "code.n",
                 f"must be divisible by log2(M)={self.bits_per_symbol}")
        return self

    def _sections(self):
        return [(name, getattr(self, name)) for name in _SECTIONS]

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(sec) for name, sec in self._sections()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        _require(isinstance(d, dict), "config", "top level must be a mapping")
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            body = d.get(name, {})
            _require(isinstance(body, dict), name, "section must be a mapping")
            fields = {f.name for f in dataclasses.fields(section_cls)}
            bad = set(body) - fields
            if bad:
                raise ConfigError(f"{name}.{sorted(bad)[0]}: unknown field")
            try:
                kwargs[name] = section_cls(**body)
            except TypeError as e:
                raise ConfigError(f"{name}: {e}") from e
        return cls(**kwargs).validate()


def load_config(path) -> SimConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    return SimConfig.from_dict(data if data is not None else {})


def save_config(cfg: SimConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


# ---------------------------------------------------------------------------
# records and CSV persistence


@dataclasses.dataclass(frozen=True)
class BerRecord:
    receiver: str
    ebn0_db: float
    trials: int
    bit_errors: int
    bits: int
    ber: float
    wall_time_s: float


@dataclasses.dataclass(frozen=True)
class MseRecord:
    protocol: str
    link_snr_db: float | None
    round: int
    mse: float


BER_COLUMNS = tuple(f.name for f in dataclasses.fields(BerRecord))
MSE_COLUMNS = tuple(f.name for f in dataclasses.fields(MseRecord))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, columns, rows, append):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fresh = not (append and path.exists())
    with open(path, "a" if not fresh else "w", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_ber_csv(path, records, append=False):
    _write_rows(
        path, BER_COLUMNS,
        [dataclasses.astuple(r) for r in records], append,
    )


def read_ber_csv(path) -> list[BerRecord]:
    out = []
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        missing = set(BER_COLUMNS) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column {sorted(missing)[0]!r}")
        for row in r:
            out.append(BerRecord(
                receiver=row["receiver"],
                ebn0_db=float(row["ebn0_db"]),
                trials=int(row["trials"]),
                bit_errors=int(row["bit_errors"]),
                bits=int(row["bits"]),
                ber=float(row["ber"]),
                wall_time_s=float(row["wall_time_s"]),
            ))
    return out


def write_mse_csv(path, records, append=False):
    _write_rows(
        path, MSE_COLUMNS,
        [dataclasses.astuple(r) for r in records], append,
    )


def read_mse_csv(path) -> list[MseRecord]:
    out = []
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        missing = set(MSE_COLUMNS) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column {sorted(missing)[0]!r}")
        for row in r:
            snr = row["link_snr_db"]
            out.append(MseRecord(
                protocol=row["protocol"],
                link_snr_db=None if snr == "" else float(snr),
                round=int(row["round"]),
                mse=float(row["mse"]),
            ))
    return out


# two-sided 95% normal quantile
_Z95 = 1.959963984540054


def wilson_interval(errors: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return (0.0, 1.0)
    p = errors / n
    den = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / den
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == n else min(1.0, center + half)
    return (lo, hi)


# ---------------------------------------------------------------------------
# counting-number cache


def counting_cache_key(F, L, N, c_min=C_MIN, reg=REG) -> str:
    payload = json.dumps(
        {
            "F": np.asarray(F).astype(int).tolist(),
            "L": int(L),
            "N": int(N),
            "c_min": float(c_min),
            "reg": float(reg),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def load_or_solve_counting(F, L, N, cache_dir, *, c_min=C_MIN, reg=REG):
    """Counting numbers from the cache when a valid entry exists.

    Cache files are keyed by a hash of the template inputs, so any change
    to the indicator matrix, channel memory, frame length, or solver knobs
    lands on a different file. A cached split is re-validated on load and
    re-solved if it no longer passes.
    """
    key = counting_cache_key(F, L, N, c_min, reg)
    path = Path(cache_dir) / f"counting-{key[:16]}.json"
    if path.exists():
        cc = ConvexifiedCounting.from_json(path.read_text())
        report = cc.revalidate(F, L, N)
        if report:
            log.info("counting cache hit: %s", path.name)
            return dataclasses.replace(cc, report=report), path
        log.warning("counting cache entry failed validation, re-solving: %s",
                    path.name)
    F = np.asarray(F)
    log.info("counting solve: J=%d K=%d L=%d N=%d", F.shape[0], F.shape[1],
             L, N)
    cc = receiver_counting(F, L, N, c_min=c_min, reg=reg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cc.to_json())
    return cc, path


def solve_and_cache_counting_numbers(cfg: SimConfig) -> Path:
    cfg.validate()
    _, path = load_or_solve_counting(
        np.asarray(cfg.system.F), cfg.system.L, cfg.frame_symbols,
        cfg.output.counting_cache,
    )
    return path


# ---------------------------------------------------------------------------
# simulation stack


_CODE_CACHE: dict[int, LdpcCode] = {}


def _code_for(n: int) -> LdpcCode:
    if n not in _CODE_CACHE:
        _CODE_CACHE[n] = LdpcCode(n)
    return _CODE_CACHE[n]


@dataclasses.dataclass
class _Stack:
    cb: object
    code: LdpcCode
    counting: object
    rcfg: ReceiverConfig


def _build_stack(cfg: SimConfig, mode: str | None = None) -> _Stack:
    mode = mode or cfg.receiver.mode
    cb = build_codebook(np.asarray(cfg.system.F, dtype=np.uint8), cfg.system.M)
    code = _code_for(cfg.code.n)
    counting = None
    if mode == "conv-bp-ep":
        cc, _ = load_or_solve_counting(
            np.asarray(cfg.system.F), cfg.system.L, cfg.frame_symbols,
            cfg.output.counting_cache,
        )
        counting = cc.arrays
    rcfg = ReceiverConfig(
        n_iter=cfg.receiver.n_iter,
        ldpc_iters=cfg.code.inner_iters,
        prior_mode="gauss" if mode == "gauss-approx-bp" else "ep",
    )
    return _Stack(cb=cb, code=code, counting=counting, rcfg=rcfg)


def _gen_trials(cfg: SimConfig, cb, code, trial_indices, N0):
    """Per-trial data, channel, and observations, stacked in index order."""
    K, J, L = cfg.system.K, cfg.system.J, cfg.system.L
    seed = cfg.sweep.master_seed
    infos, ys, hs = [], [], []
    for t in trial_indices:
        rng = np.random.default_rng(np.random.SeedSequence((seed, int(t))))
        info = rng.integers(0, 2, size=(K, code.k_info)).astype(np.uint8)
        coded = code.encode(info)
        s = superpose(encode_symbols(coded, cb))
        ch = draw_channel(K, J, L, rng)
        y = transmit(s, ch, N0, rng)
        infos.append(info)
        ys.append(y)
        hs.append(ch.h)
    return np.stack(infos), np.stack(ys), np.stack(hs)


def _coop_spec(cfg: SimConfig, trial_index: int):
    """Topology and link-noise model for one cooperative trial."""
    seed = cfg.sweep.master_seed
    rng = np.random.default_rng(
        np.random.SeedSequence((seed, int(trial_index), 1))
    )
    topo = NetworkTopology.random(
        cfg.system.K, rng, side=20.0, range_d=cfg.cooperation.d
    )
    noise = LinkNoiseModel(
        snr_db=cfg.cooperation.link_snr_db,
        seed=np.random.SeedSequence((seed, int(trial_index), 2)),
    )
    return topo, noise


def detect_chunk(info, y, h, cb, code, rcfg, N0, counting=None, coop=None):
    """Run the per-user receivers on a stacked trial chunk.

    info: (B, K, k_info); y: (B, K, N_obs); h: (B, K, J, L). Each user's
    receiver sees only that user's observation. With `coop` set, the users'
    local signal messages are fused every outer iteration and pushed back
    through the message schedule. Returns (bit_errors, bits, engines).
    """
    K = cb.K
    engines = [
        DetectorEngine(
            y[:, k], h[:, k], cb, N0, rcfg,
            own_user=k, code=code, counting=counting,
        )
        for k in range(K)
    ]
    for _ in range(rcfg.n_iter):
        if coop is None:
            for eng in engines:
                eng.begin_iteration()
                eng.finish_iteration()
        else:
            msgs = [eng.begin_iteration() for eng in engines]
            fused = run_cooperative_detection(
                msgs,
                coop["topo"],
                protocol=coop["protocol"],
                n_rounds=coop["n_p"],
                noise=coop["noise"],
            )
            for k, eng in enumerate(engines):
                eng.finish_iteration(s_phi_override=fused[k])
    errors = 0
    for k, eng in enumerate(engines):
        errors += int(np.sum(eng.result().info_bits != info[:, k]))
    bits = info.shape[0] * K * code.k_info
    return errors, bits, engines


def run_point(cfg: SimConfig, receiver: str, ebn0_db: float, trial_indices,
              stack: _Stack | None = None) -> tuple[int, int]:
    """Bit errors and counted bits for one (receiver, Eb/N0) point.

    Each user contributes its own decoded stream, so bits = trials * K *
    k_info. Results are identical for any partition of trial_indices.
    """
    stack = stack or _build_stack(cfg, receiver)
    N0 = ebn0_to_n0(float(ebn0_db), stack.code.rate, cfg.bits_per_symbol)
    idx = [int(t) for t in trial_indices]
    coop_on = cfg.cooperation.enabled
    chunks = (
        [[t] for t in idx]
        if coop_on
        else [idx[i:i + _CHUNK] for i in range(0, len(idx), _CHUNK)]
    )
    errors = bits = 0
    for chunk in chunks:
        info, y, h = _gen_trials(cfg, stack.cb, stack.code, chunk, N0)
        coop = None
        if coop_on:
            topo, noise = _coop_spec(cfg, chunk[0])
            coop = {
                "topo": topo,
                "noise": noise,
                "protocol": cfg.cooperation.protocol,
                "n_p": cfg.cooperation.n_p,
            }
        e, b, _ = detect_chunk(
            info, y, h, stack.cb, stack.code, stack.rcfg, N0,
            counting=stack.counting, coop=coop,
        )
        errors += e
        bits += b
    return errors, bits


def run_ber_sweep(cfg: SimConfig) -> list[BerRecord]:
    """BER at every sweep point for the configured receiver.

    Appends each finished point to the output CSV as it completes;
    (receiver, Eb/N0) pairs already present in the file are skipped, so an
    interrupted sweep resumes where it stopped.
    """
    cfg.validate()
    mode = cfg.receiver.mode
    stack = _build_stack(cfg)
    out_path = Path(cfg.output.ber_csv)
    done = set()
    if out_path.exists():
        done = {(r.receiver, r.ebn0_db) for r in read_ber_csv(out_path)}
    records = []
    for ebn0 in cfg.sweep.ebn0_db:
        if (mode, float(ebn0)) in done:
            log.info("ber point already recorded, skipping: %s @ %g dB",
                     mode, ebn0)
            continue
        t0 = time.perf_counter()
        errors, bits = run_point(
            cfg, mode, ebn0, range(cfg.sweep.trials), stack=stack
        )
        wall = time.perf_counter() - t0
        rec = BerRecord(
            receiver=mode,
            ebn0_db=float(ebn0),
            trials=cfg.sweep.trials,
            bit_errors=errors,
            bits=bits,
            ber=errors / bits,
            wall_time_s=wall,
        )
        lo, hi = wilson_interval(errors, bits)
        log.info(
            "ber %s @ %g dB: %d/%d = %.4g  wilson95 [%.4g, %.4g]  %.1fs",
            mode, ebn0, errors, bits, rec.ber, lo, hi, wall,
        )
        write_ber_csv(out_path, [rec], append=True)
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# consensus / ADMM MSE traces


def _local_messages(cfg: SimConfig, stack: _Stack, run_index: int, N0):
    """One receiver iteration per user on a fresh frame; the resulting
    local signal messages seed the cooperative protocols."""
    info, y, h = _gen_trials(cfg, stack.cb, stack.code, [run_index], N0)
    engines = [
        DetectorEngine(
            y[:, k], h[:, k], stack.cb, N0, stack.rcfg,
            own_user=k, code=stack.code, counting=stack.counting,
        )
        for k in range(stack.cb.K)
    ]
    return [eng.begin_iteration() for eng in engines]


def run_consensus_trace(
    cfg: SimConfig,
    *,
    protocols=("consensus", "admm"),
    link_snrs_db=(5.0, 10.0, 20.0),
    n_runs: int | None = None,
    rounds: int | None = None,
) -> list[MseRecord]:
    """Average network-disagreement MSE per round for each protocol/SNR.

    Every run draws a fresh frame, runs one receiver iteration per user to
    obtain real local messages, draws a fresh connected topology, and plays
    both protocols over the same links at every listed link SNR (None =
    noiseless links). MSE after round p is sum_k ||theta_k - mean||^2,
    averaged over runs.
    """
    cfg.validate()
    _require(cfg.cooperation.enabled, "cooperation.enabled",
             "consensus trace needs cooperation enabled")
    for prot in protocols:
        if prot not in ("consensus", "admm"):
            raise ConfigError(
                f"cooperation.protocol: trace supports consensus/admm, got {prot!r}"
            )
    n_runs = cfg.sweep.trials if n_runs is None else int(n_runs)
    rounds = cfg.cooperation.n_p if rounds is None else int(rounds)
    stack = _build_stack(cfg)
    N0 = ebn0_to_n0(cfg.sweep.ebn0_db[0], stack.code.rate, cfg.bits_per_symbol)
    seed = cfg.sweep.master_seed

    acc = {
        (prot, snr): np.zeros(rounds)
        for prot in protocols
        for snr in link_snrs_db
    }
    for r in range(n_runs):
        msgs = _local_messages(cfg, stack, r, N0)
        topo_rng = np.random.default_rng(np.random.SeedSequence((seed, r, 1)))
        topo = NetworkTopology.random(
            cfg.system.K, topo_rng, side=20.0, range_d=cfg.cooperation.d
        )
        for pi, prot in enumerate(protocols):
            for si, snr in enumerate(link_snrs_db):
                noise = LinkNoiseModel(
                    snr_db=snr,
                    seed=np.random.SeedSequence((seed, r, 2, pi, si)),
                )
                tr = []
                run_cooperative_detection(
                    msgs, topo, protocol=prot, n_rounds=rounds,
                    noise=noise, trace=tr,
                )
                acc[(prot, snr)] += np.array([float(np.mean(v)) for v in tr])
        if (r + 1) % 20 == 0:
            log.info("consensus trace: %d/%d runs", r + 1, n_runs)

    records = []
    for prot in protocols:
        for snr in link_snrs_db:
            mse = acc[(prot, snr)] / n_runs
            for p in range(rounds):
                records.append(MseRecord(
                    protocol=prot,
                    link_snr_db=None if snr is None else float(snr),
                    round=p + 1,
                    mse=float(mse[p]),
                ))
    return records


# ---------------------------------------------------------------------------
# detailed per-round trace export


TRACE_COLUMNS = ("round", "user", "variable_id", "mean", "precision",
                 "mse_to_centralized")


def export_coop_trace_csv(path, local_msgs, topo, protocol="consensus",
                          n_rounds=10, noise=None, admm_c0=None):
    """Per-round, per-user parameter dump for a single unbatched fusion.

    Writes one row per (round, user, variable) with the user's current
    Gaussian moments and the squared distance of the user's natural
    parameters for that variable to the centralized reference (the network
    average of the initial parameters, which both protocols aim at).
    """
    from .coop import NOISELESS

    noise = noise or NOISELESS
    shape = np.asarray(local_msgs[0][0]).shape
    _require(len(shape) == 2, "trace", "expects unbatched (J, N)-shaped messages")
    states = [
        NaturalParams.from_messages(
            np.asarray(m, dtype=complex).reshape(-1),
            np.asarray(v, dtype=float).reshape(-1),
        )
        for m, v in local_msgs
    ]
    target = params_mean(states)
    noise.calibrate(states)
    rows = []

    def snapshot(p, states_now):
        for k, st in enumerate(states_now):
            m, v = st.to_messages()
            d2 = np.abs(st.eta - target.eta) ** 2 + (st.prec - target.prec) ** 2
            for i in range(m.shape[-1]):
                rows.append((p, k, i, complex(m[i]), float(v[i]), float(d2[i])))

    if protocol == "consensus":
        vanishing = noise.snr_db is not None
        for p in range(1, n_rounds + 1):
            states = consensus_round(states, topo, noise, p=p,
                                     vanishing=vanishing)
            snapshot(p, states)
    elif protocol == "admm":
        if admm_c0 is None:
            admm_c0 = 1.0 if noise.noiseless else 0.1
        st = AdmmState.init(states, topo, c0=admm_c0)
        for p in range(1, n_rounds + 1):
            st = admm_round(st, topo, noise)
            snapshot(p, st.theta)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")

    _write_rows(path, TRACE_COLUMNS, rows, append=False)
    return Path(path)
