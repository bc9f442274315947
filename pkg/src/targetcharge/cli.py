"""Command-line front end: ``tct run``, ``tct calibrate`` and ``tct audit``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .accountant import SessionConfig
from .boundary_wrapper import run_twice_sample_codes, wrap_sample_codes
from .engine import EXIT_ERROR, EXIT_OK, Engine
from .errors import ConfigurationError, ContractError
from .formats import FormatError, load_transcript, read_csv
from .mechanisms import AboveThreshold, BetweenThresholds, Dataset, ExponentialChoice, LinearQuery
from .privacy_core import chernoff_constant, min_tau, wrapper_privacy
from .rng import RandomStream
from .verifier import mc_privacy_audit


def _seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("TCT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigurationError(f"TCT_SEED must be an integer, got {env!r}") from None


def cmd_run(args) -> int:
    data, columns = read_csv(args.dataset)
    ops = load_transcript(args.transcript)
    config = SessionConfig(
        tau=args.tau,
        epsilon=args.epsilon,
        tau_delta=args.tau_delta,
        q=args.q,
        num_targets=args.targets,
        alpha=args.alpha,
        seed=_seed(args.seed),
    )
    result = Engine(data, config, args.delta, columns).run(ops)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "outputs.jsonl").write_text(result.outputs_jsonl())
    (out / "report.json").write_text(result.report_json())
    counters = result.report["counters"]
    basic = result.report["bounds"]["basic"]
    print(
        f"executed {result.report['ops_executed']}/{result.report['ops_total']} ops, hits {counters}, "
        f"basic bound ({basic['epsilon']:.6g}, {basic['delta']:.3g}), halt: {result.report['halt_reason']}"
    )
    return result.exit_code


def cmd_calibrate(args) -> int:
    tau = min_tau(args.alpha, args.delta_star, args.form)
    const = chernoff_constant(args.alpha, args.form)
    print(json.dumps({"tau": tau, "constant": const, "constant_3sig": float(f"{const:.3g}"), "form": args.form}))
    return EXIT_OK


_AUDIT_MECHANISMS = ("above_threshold", "between_thresholds", "exp_choice", "wrap", "run_twice")


def _neighbors(count: int) -> tuple[Dataset, Dataset]:
    base = Dataset(tuple({"x": 1.0} for _ in range(count)))
    return base, base.add({"x": 1.0})


def _audit_base(args, count_query):
    if args.base == "above_threshold":
        t = args.threshold if args.threshold is not None else args.count + 1.0
        return AboveThreshold(LinearQuery(count_query, t, "x"), args.epsilon)
    if args.base == "between_thresholds":
        t_l = args.threshold if args.threshold is not None else args.count + 1.0
        return BetweenThresholds(LinearQuery(count_query, 0.0, "x"), t_l, t_l + args.gap, args.epsilon)
    zero = LinearQuery(lambda r: 0.0, 0.0, "zero")
    return ExponentialChoice([LinearQuery(count_query, 0.0, "x"), zero], args.epsilon)


def cmd_audit(args) -> int:
    if args.mechanism not in _AUDIT_MECHANISMS:
        raise ConfigurationError(f"unknown mechanism {args.mechanism!r}; choose from {_AUDIT_MECHANISMS}")
    if args.trials <= 0:
        raise ConfigurationError("trials must be > 0")
    if args.mechanism in ("wrap", "run_twice") and args.base not in ("above_threshold", "between_thresholds", "exp_choice"):
        raise ConfigurationError(f"unknown base mechanism {args.base!r}")
    if args.mechanism not in ("wrap", "run_twice"):
        args.base = args.mechanism
    count_query = lambda r: float(r["x"])
    mech = _audit_base(args, count_query)
    d0, d1 = _neighbors(args.count)
    m = len(mech.labels)
    if args.mechanism == "wrap":
        sampler = lambda d: (lambda rng, n: wrap_sample_codes(mech, d, rng, n))
        outcomes, declared = m + 1, wrapper_privacy(args.epsilon)
    elif args.mechanism == "run_twice":
        sampler = lambda d: (lambda rng, n: run_twice_sample_codes(mech, d, rng, n))
        outcomes, declared = m * m, 2 * args.epsilon
    else:
        sampler = lambda d: (lambda rng, n: mech.sample_codes(d, rng, n))
        outcomes, declared = m, args.epsilon
    result = mc_privacy_audit(sampler(d0), sampler(d1), args.trials, RandomStream(_seed(args.seed), 2), outcomes)
    report = dict(result.as_dict(), mechanism=args.mechanism, declared_epsilon=declared)
    report["within_declared"] = result.epsilon_lower_bound <= declared
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for early halts."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tct", description="Target-charging privacy engine")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="execute a transcript against a dataset")
    run.add_argument("dataset")
    run.add_argument("transcript")
    run.add_argument("--epsilon", type=float, default=0.1)
    run.add_argument("--tau", type=int, required=True)
    run.add_argument("--tau-delta", type=float, default=0.0)
    run.add_argument("--q", type=float, default=None, help="session q (default 1/(e^eps+1))")
    run.add_argument("--alpha", type=float, default=1.0)
    run.add_argument("--delta", type=float, default=None, help="target delta for the advanced bound")
    run.add_argument("--targets", type=int, default=1)
    run.add_argument("--seed", type=int, default=None, help="falls back to $TCT_SEED, then 0")
    run.add_argument("--out", default=".")
    run.set_defaults(func=cmd_run)

    cal = sub.add_parser("calibrate", help="smallest hit budget for a tail target")
    cal.add_argument("--alpha", type=float, default=1.0)
    cal.add_argument("--delta-star", type=float, required=True)
    cal.add_argument("--form", choices=("raw", "simplified"), default="raw")
    cal.set_defaults(func=cmd_calibrate)

    aud = sub.add_parser("audit", help="Monte Carlo lower bound on a built-in mechanism's privacy loss")
    aud.add_argument("--mechanism", required=True)
    aud.add_argument("--base", default="above_threshold", help="base mechanism for wrap/run_twice")
    aud.add_argument("--epsilon", type=float, default=0.1)
    aud.add_argument("--trials", type=int, default=100_000)
    aud.add_argument("--seed", type=int, default=None)
    aud.add_argument("--count", type=int, default=0, help="records in the smaller neighbour")
    aud.add_argument("--threshold", type=float, default=None)
    aud.add_argument("--gap", type=float, default=2.0)
    aud.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, ConfigurationError, ContractError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except AssertionError as exc:  # a failed soundness self-check
        print(f"soundness check failed: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
