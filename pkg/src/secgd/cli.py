"""Command-line front end.

Subcommands: ``simulate`` (full training runs from a config file),
``attack`` (subset-sum and leakage experiments), ``bench`` (solver
scaling and communication-cost tables), ``dp-calc`` (noise
calibration).  Results are newline-delimited JSON records, one per
round or trial, with sorted keys; a fixed ``--seed`` reproduces them
byte-identically on the in-process transport.

Exit codes: 0 success, 1 usage error, 2 protocol abort (equivocation
or exhausted dropout retries), 3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import adversary
from .dp import DpParams, aggregate_noise_variance, gaussian_sigma
from .errors import TrainingDiverged
from .expconfig import ExperimentConfig, load_config
from .group_math import from_sequence
from .harness import TrainingAborted, expected_uplink_bytes, run_training
from .mask import seed_bits as seed_bits_for

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROTOCOL_ABORT = 2
EXIT_DIVERGED = 3


def _emit(records, out_path: str | None) -> None:
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(lines)
    else:
        sys.stdout.write(lines)


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    try:
        result = run_training(config, seed=args.seed)
    except TrainingAborted as exc:
        _emit(
            exc.result.records
            + [{"record": "abort", "reason": exc.result.abort_reason}],
            args.out,
        )
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL_ABORT
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _emit(result.records, args.out)
    return EXIT_OK


def _cmd_attack(args) -> int:
    rng = np.random.default_rng(args.seed)
    records: list[dict] = []
    if args.experiment == "dsss":
        vecs = adversary.random_vectors(args.n, args.dim, args.m, rng)
        if args.random_target:
            target = adversary.random_vectors(1, args.dim, args.m, rng)[0]
        else:
            chosen = sorted(
                rng.permutation(args.n)[: args.cardinality].tolist()
            )
            planted = [vecs[i].entries for i in chosen] or [(0,) * args.dim]
            target = from_sequence(np.sum(planted, axis=0).tolist(), args.m)
        instance = adversary.DsssInstance(vecs, target, args.cardinality)
        res = adversary.dsss_decide(instance, method=args.method)
        records.append(
            {
                "record": "dsss",
                "n": args.n,
                "d": args.dim,
                "m": args.m,
                "cardinality": args.cardinality,
                "found": res.found,
                "witness": list(res.witness) if res.witness else None,
                "explored": res.explored,
                "method": res.method,
            }
        )
    elif args.experiment == "injectivity":
        res = adversary.injectivity_experiment(
            args.dim, args.m, args.k, args.trials, rng
        )
        records.append(
            {
                "record": "injectivity",
                "d": res.d,
                "m": res.m,
                "k": res.k,
                "trials": res.trials,
                "collisions": res.collisions,
                "rate": res.rate,
                "bound": res.bound,
            }
        )
    elif args.experiment == "quasirandomness":
        for k in args.k_list:
            res = adversary.quasirandomness_experiment(
                args.dim, args.m, k, args.draws, rng
            )
            records.append(
                {
                    "record": "quasirandomness",
                    "d": res.d,
                    "m": res.m,
                    "k": res.k,
                    "draws": res.draws,
                    "median_tv": res.median_tv,
                }
            )
    elif args.experiment == "recovery":
        hits = 0
        for trial in range(args.trials):
            config = ExperimentConfig(
                n_clients=2,
                rounds=1,
                dim=args.dim,
                m_tilde=args.m_tilde,
                fraction_bits=0,
                masks_per_client=args.k,
                seed_bits=16,
                samples_per_client=4,
                scenarios="recovery",
                min_m_tilde=1,
            )
            result = run_training(config, seed=args.seed + trial)
            round_rec = next(
                r for r in result.records if r["record"] == "round"
            )
            ok = all(round_rec["recovery_hits"])
            hits += ok
            records.append(
                {
                    "record": "recovery-trial",
                    "trial": trial,
                    "planted_found": ok,
                }
            )
        records.append(
            {"record": "recovery", "trials": args.trials, "complete": hits}
        )
    elif args.experiment == "leakage":
        if args.g_neg is None or args.g_pos is None:
            g_neg, g_pos = adversary.leakage_forward(1.0, 2.0)
        else:
            g_neg, g_pos = args.g_neg, args.g_pos
        x1, x2 = adversary.recover_features(g_neg, g_pos)
        print(f"recovered features: {{{x1:.6f}, {x2:.6f}}}")
        records.append(
            {"record": "leakage", "g_neg": g_neg, "g_pos": g_pos,
             "x1": x1, "x2": x2}
        )
    _emit(records, args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    records: list[dict] = []
    # Solver scaling at the hard ratio: n vectors of n total bits each.
    for n in args.sizes:
        vecs = adversary.random_vectors(n, 1, n, rng)
        target = adversary.random_vectors(1, 1, n, rng)[0]
        instance = adversary.DsssInstance(vecs, target, cardinality=n // 2)
        t0 = time.perf_counter()
        res = adversary.dsss_decide(instance)
        elapsed = time.perf_counter() - t0
        records.append(
            {
                "record": "solver-bench",
                "n": n,
                "found": res.found,
                "explored": res.explored,
            }
        )
        logging.getLogger(__name__).info(
            "solver n=%d: %.1f ms, %d subsets", n, elapsed * 1e3, res.explored
        )
    # Communication cost across a small parameter sweep.
    for d in args.cost_dims:
        for m_tilde in args.cost_m_tildes:
            quant_m = m_tilde + int(np.ceil(np.log2(args.cost_clients)))
            k = int(np.ceil(d * quant_m / 2))
            q = seed_bits_for(k, 1e-10)
            records.append(
                {
                    "record": "cost",
                    "d": d,
                    "m_tilde": m_tilde,
                    "n_clients": args.cost_clients,
                    "k": k,
                    "q": q,
                    "uplink_bytes": expected_uplink_bytes(d, quant_m, k, q),
                }
            )
    _emit(records, args.out)
    return EXIT_OK


def _cmd_dp_calc(args) -> int:
    params = DpParams(
        epsilon=args.epsilon,
        delta=args.delta,
        l2_sensitivity=args.sensitivity,
        n_clients=args.clients,
        n_honest=args.honest,
    )
    sigma = gaussian_sigma(params)
    variances = aggregate_noise_variance(params, sigma)
    print(f"sigma = {sigma:.6f}")
    print(f"per-client variance (sigma^2/N_honest) = {variances['per_client']:.6f}")
    print(f"aggregate variance, honest clients only = {variances['honest_only']:.6f}")
    print(f"aggregate variance, all clients adding  = {variances['all_clients']:.6f}")
    print(
        "aggregate variance, colluders at full sigma^2 = "
        f"{variances['colluders_full']:.6f}"
    )
    _emit(
        [{"record": "dp-calc", "sigma": sigma, **variances}],
        args.out,
    )
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    # Shared options accepted both before and after the subcommand; the
    # SUPPRESS defaults keep a subparser from clobbering a value that was
    # given at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="global RNG seed"
    )
    common.add_argument(
        "--out", type=str, default=argparse.SUPPRESS, help="NDJSON output path"
    )
    common.add_argument(
        "-v", "--verbose", action="store_true", default=argparse.SUPPRESS
    )

    parser = argparse.ArgumentParser(
        prog="secgd",
        description="Secure-summation gradient descent: simulator and attack bench",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser(
        "simulate", help="run a training simulation", parents=[common]
    )
    p_sim.add_argument("--config", required=True, help="experiment config file")

    p_att = sub.add_parser("attack", help="adversary experiments")
    att_sub = p_att.add_subparsers(dest="experiment", required=True)

    p_dsss = att_sub.add_parser(
        "dsss", help="solve one subset-sum instance", parents=[common]
    )
    p_dsss.add_argument("--n", type=int, default=12)
    p_dsss.add_argument("--dim", type=int, default=2)
    p_dsss.add_argument("--m", type=int, default=3)
    p_dsss.add_argument("--cardinality", type=int, default=6)
    p_dsss.add_argument("--method", default="auto",
                        choices=("auto", "exhaustive", "mitm"))
    p_dsss.add_argument("--random-target", action="store_true",
                        help="random target instead of a planted witness")

    p_inj = att_sub.add_parser(
        "injectivity", help="second-preimage rate", parents=[common]
    )
    p_inj.add_argument("--dim", type=int, default=2)
    p_inj.add_argument("--m", type=int, default=4)
    p_inj.add_argument("--k", type=int, default=2)
    p_inj.add_argument("--trials", type=int, default=10000)

    p_qr = att_sub.add_parser(
        "quasirandomness", help="subset-sum flatness vs uniform",
        parents=[common],
    )
    p_qr.add_argument("--dim", type=int, default=2)
    p_qr.add_argument("--m", type=int, default=2)
    p_qr.add_argument("--k-list", type=_int_list, default=[4, 6, 8])
    p_qr.add_argument("--draws", type=int, default=200)

    p_rec = att_sub.add_parser(
        "recovery", help="planted-gradient detection", parents=[common]
    )
    p_rec.add_argument("--dim", type=int, default=2)
    p_rec.add_argument("--m-tilde", type=int, default=3)
    p_rec.add_argument("--k", type=int, default=2)
    p_rec.add_argument("--trials", type=int, default=100)

    p_leak = att_sub.add_parser(
        "leakage", help="feature recovery from exact aggregates",
        parents=[common],
    )
    p_leak.add_argument("--g-neg", type=float, default=None,
                        help="aggregate gradient observed at w=-1")
    p_leak.add_argument("--g-pos", type=float, default=None,
                        help="aggregate gradient observed at w=+1")

    p_bench = sub.add_parser(
        "bench", help="solver scaling and cost tables", parents=[common]
    )
    p_bench.add_argument("--sizes", type=_int_list, default=[8, 12, 16, 20])
    p_bench.add_argument("--cost-dims", type=_int_list, default=[16, 256])
    p_bench.add_argument("--cost-m-tildes", type=_int_list, default=[16, 24])
    p_bench.add_argument("--cost-clients", type=int, default=16)

    p_dp = sub.add_parser(
        "dp-calc", help="Gaussian noise calibration", parents=[common]
    )
    p_dp.add_argument("--epsilon", type=float, required=True)
    p_dp.add_argument("--delta", type=float, required=True)
    p_dp.add_argument("--sensitivity", type=float, required=True)
    p_dp.add_argument("--clients", type=int, default=2)
    p_dp.add_argument("--honest", type=int, default=2)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "attack":
            return _cmd_attack(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "dp-calc":
            return _cmd_dp_calc(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
