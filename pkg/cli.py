import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from channel_model import InvalidParameterError
from config import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_POWER,
    DEFAULT_NOISE,
    AnalyzeRequest,
    ExperimentConfig,
    InstanceConfig,
    load_experiment_config,
    load_instance_config,
    log_level,
    results_dir,
)
from dtmc_analysis import ModelMismatchError, UnreachableTargetError, analyze
from game_core import InstanceTooLargeError, equilibrium_report
from report_templates import build_equilibrium_report, build_trial_summary
from repositories.instances_repo import InstancesRepository
from repositories.results_repo import ResultsRepository
from sim_harness import (
    SWEEP_COLUMNS,
    TRACE_COLUMNS,
    average_curves,
    fig5_protocol,
    standard_sweep_configs,
    random_profile_satisfaction,
    run_experiment,
    split_sweep,
    sweep,
    sweep_rows,
)


logger = logging.getLogger("te-powerctl")

LIBRARY_ERRORS = (
    InvalidParameterError,
    InstanceTooLargeError,
    ModelMismatchError,
    UnreachableTargetError,
    ValidationError,
    FileNotFoundError,
)


def cmd_analyze(args) -> int:
    req = AnalyzeRequest(
        K=args.K, C=args.C, Q=args.Q, eps=args.eps, gamma=args.gamma,
        pmax=args.pmax, noise=args.noise, target=args.target, du=args.du,
    )
    row = analyze(req.to_params(), req.target)
    df = pd.DataFrame([row])
    if args.out:
        ResultsRepository(args.out).append("analyze", [row])
    df.to_csv(sys.stdout, index=False)
    return 0


def _experiment_from_args(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config)
    overrides = {
        "trials": args.trials,
        "iterations": args.iters,
        "seed": args.seed,
        "out": args.out,
        "workers": args.workers,
    }
    update = {k: v for k, v in overrides.items() if v is not None}
    if args.trace:
        update["trace"] = True
    # re-validate so overrides get the same checks as the file
    return ExperimentConfig.model_validate({**cfg.model_dump(), **update})


def cmd_simulate(args) -> int:
    cfg = _experiment_from_args(args)
    records = run_experiment(cfg)
    repo = ResultsRepository(cfg.out)
    occ, passage = split_sweep(pd.DataFrame(sweep_rows(cfg, records), columns=SWEEP_COLUMNS))
    if "occupancy" in cfg.metrics:
        repo.write("occupancy", occ)
    if "passage" in cfg.metrics:
        repo.write("passage", passage)
    if "curves" in cfg.metrics:
        repo.write("curves", average_curves(records))
    if cfg.trace or "trace" in cfg.metrics:
        for r in records:
            repo.write("trace", pd.DataFrame(r.trace, columns=TRACE_COLUMNS), name=f"trace_{r.seed}")
    summaries = [build_trial_summary(r).model_dump() for r in records]
    print(json.dumps(summaries, indent=2))
    return 0


def cmd_sweep(args) -> int:
    channels = ("simplified", "rayleigh") if args.channel == "both" else (args.channel,)
    configs = standard_sweep_configs(
        num_players=args.K,
        num_channels=args.C,
        q_values=range(args.Q_min, args.Q_max + 1),
        channels=channels,
        epsilon=args.eps,
        iterations=args.iters,
        trials=args.trials,
        target=args.target,
        seed=args.seed,
    )
    df = sweep(configs)
    repo = ResultsRepository(args.out)
    occ, passage = split_sweep(df)
    repo.write("sweep", df)
    repo.write("occupancy", occ)
    repo.write("passage", passage)
    df.to_csv(sys.stdout, index=False)
    return 0


def cmd_fig5(args) -> int:
    ic = InstanceConfig(
        K=args.K, C=args.C, Q=args.Q, p_max=args.pmax, noise=args.noise, gamma=args.gamma,
        channel=args.channel, seed=args.seed,
    )
    cfg = ExperimentConfig(
        instance=ic, epsilon=args.eps, iterations=args.iters, trials=args.trials,
        seed=args.seed, target="se", **({"workers": args.workers} if args.workers else {}),
    )
    result = fig5_protocol(cfg)
    ResultsRepository(args.out).write("curves", result.curves, name="fig5_curves")
    baseline = random_profile_satisfaction(ic.build(), samples=args.baseline_samples, seed=args.seed)
    print(json.dumps({
        "trials": result.trials,
        "mean_first_all_satisfied": result.mean_first_all_satisfied,
        "mean_first_optimal": result.mean_first_optimal,
        "random_profile_satisfaction": baseline,
    }, indent=2))
    return 0


def cmd_compare(args) -> int:
    repo = ResultsRepository(args.out or results_dir())
    merged = repo.compare(args.sim, args.analyze)
    if args.out:
        path = Path(args.out) / "compare.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        merged.to_csv(path, index=False)
        logger.info("%d compared row(s) written to %s", len(merged), path)
    merged.to_csv(sys.stdout, index=False)
    return 0


def cmd_equilibria(args) -> int:
    instance = load_instance_config(args.config).build()
    report = equilibrium_report(instance, args.cap)
    print(build_equilibrium_report(instance, report, limit=args.limit).model_dump_json(indent=2))
    return 0


def cmd_instance(args) -> int:
    instance = load_instance_config(args.config).build()
    repo = InstancesRepository(args.data_dir)
    if args.gains_out:
        repo.dump_gains(instance, args.gains_out)
    if args.save:
        repo.save(args.save, instance, with_gains=args.with_gains)
    print(json.dumps(instance.to_config(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="te-powerctl",
        description="Trial-and-error power and channel allocation: simulator and Markov analysis",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python cli.py analyze --K 3 --C 4 --Q 6 --eps 0.02
  python cli.py simulate --config configs/k3c4q6.json --trials 10 --iters 200000
  python cli.py sweep --channel both --iters 1000000 --out results
  python cli.py fig5 --trials 200 --iters 6000
""",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="Chain transition probabilities, first-passage bounds and occupancy")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--Q", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("--pmax", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--target", choices=["ne", "se"], default="ne")
    p.add_argument("--du", type=float, default=0.0)
    p.add_argument("--out", help="results directory to append the row to")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte Carlo TE trials from an experiment config")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", "-s", type=int)
    p.add_argument("--out", "-o")
    p.add_argument("--workers", type=int)
    p.add_argument("--trace", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="Occupancy and first-passage over Q for both channel models")
    p.add_argument("--channel", choices=["simplified", "rayleigh", "both"], default="both")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--C", type=int, default=4)
    p.add_argument("--Q-min", dest="Q_min", type=int, default=6)
    p.add_argument("--Q-max", dest="Q_max", type=int, default=10)
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--iters", type=int, default=1_000_000)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--target", choices=["ne", "se"], default="ne")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fig5", help="Fraction satisfied and power ratio over iterations")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--C", type=int, default=5)
    p.add_argument("--Q", type=int, default=8)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="SINR threshold")
    p.add_argument("--pmax", type=float, default=DEFAULT_MAX_POWER)
    p.add_argument("--noise", type=float, default=DEFAULT_NOISE)
    p.add_argument("--channel", choices=["simplified", "rayleigh"], default="simplified")
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--iters", type=int, default=6000)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--baseline-samples", dest="baseline_samples", type=int, default=10_000)
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_fig5)

    p = sub.add_parser("compare", help="Join simulated occupancy with analyze rows")
    p.add_argument("--sim", required=True)
    p.add_argument("--analyze", required=True)
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("equilibria", help="Enumerate NE, SE, ESE and optimal profiles")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--cap", type=int)
    p.add_argument("--limit", type=int, default=50)
    p.set_defaults(func=cmd_equilibria)

    p = sub.add_parser("instance", help="Build an instance and dump or store it")
    p.add_argument("--config", "-c", required=True)
    p.add_argument("--gains-out", dest="gains_out")
    p.add_argument("--save", help="store under this name in the data directory")
    p.add_argument("--with-gains", dest="with_gains", action="store_true")
    p.add_argument("--data-dir", dest="data_dir")
    p.set_defaults(func=cmd_instance)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=log_level())
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LIBRARY_ERRORS as e:
        logger.error("%s failed: %s", args.command, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
