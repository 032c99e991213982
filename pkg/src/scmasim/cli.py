"""Command-line front end: BER sweeps, MSE traces, counting cache, selftest."""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

import numpy as np

from .harness import (
    CodeConfig,
    ConfigError,
    OutputConfig,
    ReceiverSection,
    RECEIVER_MODES,
    SimConfig,
    SweepConfig,
    SystemConfig,
    load_config,
    run_ber_sweep,
    run_consensus_trace,
    run_point,
    solve_and_cache_counting_numbers,
    write_mse_csv,
)

log = logging.getLogger(__name__)


def _add_common(p, config_required=True):
    p.add_argument("--config", required=config_required, metavar="PATH",
                   help="YAML configuration file")
    p.add_argument("--seed", type=int, metavar="U64",
                   help="override sweep.master_seed")
    p.add_argument("--out", metavar="DIR",
                   help="override output directory (ber.csv, mse.csv, counting/)")
    p.add_argument("--receiver", choices=RECEIVER_MODES,
                   help="override receiver.mode")
    p.add_argument("--trials", type=int, metavar="N",
                   help="override sweep.trials")


def _load(args) -> SimConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.sweep.master_seed = args.seed
    if args.trials is not None:
        cfg.sweep.trials = args.trials
    if args.receiver is not None:
        cfg.receiver.mode = args.receiver
    if args.out is not None:
        out = Path(args.out)
        cfg.output.ber_csv = str(out / "ber.csv")
        cfg.output.mse_csv = str(out / "mse.csv")
        cfg.output.counting_cache = str(out / "counting")
    return cfg.validate()


def _cmd_ber(args) -> int:
    cfg = _load(args)
    records = run_ber_sweep(cfg)
    print(f"{len(records)} new point(s) -> {cfg.output.ber_csv}")
    return 0


def _cmd_consensus(args) -> int:
    cfg = _load(args)
    records = run_consensus_trace(cfg)
    write_mse_csv(cfg.output.mse_csv, records)
    print(f"{len(records)} trace row(s) -> {cfg.output.mse_csv}")
    return 0


def _cmd_counting(args) -> int:
    cfg = _load(args)
    path = solve_and_cache_counting_numbers(cfg)
    print(path)
    return 0


def _cmd_selftest(args) -> int:
    """Fast end-to-end checks with built-in configurations."""
    failures = []

    def check(name, fn):
        try:
            fn()
            print(f"selftest {name}: ok")
        except Exception as e:  # noqa: BLE001 - report every failure
            failures.append(name)
            print(f"selftest {name}: FAIL ({e})")

    def single_user_noiseless():
        with tempfile.TemporaryDirectory() as tmp:
            cfg = SimConfig(
                system=SystemConfig(K=1, J=1, L=1, M=2, D=1, F=[[1]]),
                code=CodeConfig(n=70),
                receiver=ReceiverSection(mode="stretch-bp-ep", n_iter=2),
                sweep=SweepConfig(ebn0_db=[300.0], trials=2, master_seed=3),
                output=OutputConfig(ber_csv=f"{tmp}/b.csv", mse_csv=f"{tmp}/m.csv",
                                    counting_cache=f"{tmp}/c"),
            )
            e, b = run_point(cfg, cfg.receiver.mode, 300.0, range(2))
            assert e == 0 and b == 100, f"expected 0/100, got {e}/{b}"

    def determinism():
        with tempfile.TemporaryDirectory() as tmp:
            cfg = SimConfig(
                system=SystemConfig(K=2, J=2, L=2, M=2, D=1, F=[[1, 0], [0, 1]]),
                code=CodeConfig(n=70),
                receiver=ReceiverSection(mode="stretch-bp-ep", n_iter=2),
                sweep=SweepConfig(ebn0_db=[4.0], trials=3, master_seed=5),
                output=OutputConfig(ber_csv=f"{tmp}/b.csv", mse_csv=f"{tmp}/m.csv",
                                    counting_cache=f"{tmp}/c"),
            )
            a = run_point(cfg, cfg.receiver.mode, 4.0, range(3))
            b = run_point(cfg, cfg.receiver.mode, 4.0, range(3))
            assert a == b, f"{a} != {b}"
            halves = tuple(
                x + y for x, y in zip(
                    run_point(cfg, cfg.receiver.mode, 4.0, [0]),
                    run_point(cfg, cfg.receiver.mode, 4.0, [1, 2]),
                )
            )
            assert halves == a, f"merge {halves} != {a}"

    def scalar_gaussian_oracle():
        from .oracle import gaussian_posterior_exact
        mean, _cov = gaussian_posterior_exact(
            np.array([[2.0]]), np.array([2.0]), 1.0,
            np.array([0.0]), np.array([1.0]),
        )
        assert abs(mean[0] - 0.8) < 1e-12, mean

    def map_oracle_normalization():
        from .oracle import TinyInstance, map_marginals_bruteforce
        from .scma_codec import build_codebook
        rng = np.random.default_rng(0)
        cb = build_codebook([[1, 0], [0, 1]], 2)
        h = rng.standard_normal((2, 2, 1)) + 1j * rng.standard_normal((2, 2, 1))
        y = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        inst = TinyInstance(cb=cb, h=h, y=y, N0=1.0)
        tables, _map_idx, _ev = map_marginals_bruteforce(inst)
        s = tables.sum(axis=-1)
        assert np.allclose(s, 1.0, atol=1e-12), s

    def counting_chain():
        from .convexify import chain_template, solve_counting_numbers
        cn = solve_counting_numbers(chain_template(5))
        assert cn.objective < 1e-8, cn.objective

    check("single-user-noiseless-ber0", single_user_noiseless)
    check("determinism-and-merge", determinism)
    check("gaussian-oracle-scalar", scalar_gaussian_oracle)
    check("map-oracle-normalization", map_oracle_normalization)
    check("counting-chain-objective", counting_chain)

    if failures:
        print(f"selftest: {len(failures)} failure(s): {', '.join(failures)}")
        return 1
    print("selftest: all ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scmasim",
        description="Monte Carlo simulator for overloaded multi-antenna "
                    "sparse-code transmission with distributed detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ber = sub.add_parser("ber", help="run the configured BER sweep")
    _add_common(p_ber)
    p_ber.set_defaults(func=_cmd_ber)

    p_con = sub.add_parser("consensus", help="average MSE-per-round trace")
    _add_common(p_con)
    p_con.set_defaults(func=_cmd_consensus)

    p_cnt = sub.add_parser("counting", help="solve and cache counting numbers")
    _add_common(p_cnt)
    p_cnt.set_defaults(func=_cmd_counting)

    p_self = sub.add_parser("selftest", help="fast built-in checks")
    _add_common(p_self, config_required=False)
    p_self.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
