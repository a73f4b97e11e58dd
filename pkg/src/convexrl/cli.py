"""Command-line interface: train, eval, experiment, and check subcommands.

Every run writes schema-stable CSVs plus a resolved-config copy into the
output directory, so an experiment can be reproduced from its artifacts
alone. Exit codes: 0 success, 1 validation error, 2 runtime divergence,
3 property-suite failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checks import run_all
from .config import (
    ConfigError,
    apply_overrides,
    load_config,
    write_resolved_config,
)
from .nets import DivergenceError
from .trainer import (
    METRICS_COLUMNS,
    REPORT_COLUMNS,
    TRACE_COLUMNS,
    Method,
    TrainConfig,
    evaluate,
    load_agent,
    run_experiment,
    train,
    write_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_CHECK_FAILED = 3


def _resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    seeds = None
    if getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    elif getattr(args, "seeds", None):
        seeds = args.seeds
    return apply_overrides(cfg, alpha=getattr(args, "alpha", None), seeds=seeds)


def _prepare_out(args, cfg: TrainConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(cfg, out / "resolved_config.toml")
    return out


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    results = train(cfg, Method(args.method), out)
    failed = [res.seed for res in results if res.failed]
    if failed:
        print(f"divergence during training, seeds {failed}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"trained {len(results)} seed(s); artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    agent = load_agent(args.checkpoint, cfg)
    report = evaluate(agent, cfg, episodes=args.episodes, seed=agent.seed)
    write_csv(out / "traces.csv", TRACE_COLUMNS, report.traces)
    write_csv(out / "report.csv", REPORT_COLUMNS,
              [report.row(agent.method.value, agent.alpha, agent.seed)])
    print(f"evaluated {args.episodes} episode(s); report in {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    alphas = (args.alpha,) if args.alpha is not None else (0.1, 0.5)
    result = run_experiment(cfg, out, alphas=alphas,
                            parallel_seeds=args.parallel_seeds)
    failed = [(key, res.seed) for key, arm in result.runs.items()
              for res in arm if res.failed]
    if failed:
        print(f"divergence during experiment: {failed}", file=sys.stderr)
        return EXIT_DIVERGENCE
    print(f"experiment complete; artifacts in {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_all(probes=args.probes, seed=args.seed or 0,
                      inject_fault=args.inject_negative_wzz)
    for res in results:
        print(res.line())
    if all(res.passed for res in results):
        return EXIT_OK
    return EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convexrl",
        description="Risk-sensitive convex-policy training on the cascade tank")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="TOML config file (defaults used if omitted)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--alpha", type=float, help="CVaR tail level override")
        p.add_argument("--seed", type=int, help="single seed override")
        p.add_argument("--seeds", type=int, nargs="+", help="seed list override")

    p_train = sub.add_parser("train", help="train one method over the seed list")
    common(p_train)
    p_train.add_argument("--method", choices=[m.value for m in Method],
                         default=Method.ACTOR_FREE.value)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(p_eval)
    p_eval.add_argument("checkpoint", help="checkpoint file from train")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.set_defaults(func=cmd_eval)

    p_exp = sub.add_parser("experiment",
                           help="both methods x alpha grid x seed list")
    common(p_exp)
    p_exp.add_argument("--parallel-seeds", type=int, default=1,
                       help="seed workers per arm")
    p_exp.set_defaults(func=cmd_experiment)

    p_check = sub.add_parser("check", help="run the property suites")
    p_check.add_argument("--probes", type=int, default=1000)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--inject-negative-wzz", action="store_true",
                         help="deliberately break convexity to test detection")
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
