"""Command-line entry point: run, validate, schedule-check, show-config."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import yaml

from .errors import ConfigError
from .experiments import ALGORITHMS, KINDS, ExperimentConfig, run_experiment, scales_used
from .oracle import FAULTS, run_validation
from .schedule import StepSchedule, validate_schedule

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT, EXIT_QUORUM = 0, 1, 2, 3

# flag name -> config field
_FLAGS = {
    "kind": ("kind", str), "algorithm": ("algorithm", str), "states": ("num_states", int),
    "actions": ("num_actions", int), "branching": ("branching", int), "sigma": ("sigma", float),
    "reward_mode": ("reward_mode", str), "features": ("num_features", int), "horizon": ("horizon", int),
    "repeats": ("repeats", int), "seed": ("seed", int), "eval_interval": ("eval_interval", int),
    "sts_scale": ("sts_scale", int), "max_episode_steps": ("max_episode_steps", int),
    "workers": ("workers", int), "output": ("output", str),
}


def _floats4(text):
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated numbers")
    return vals


def _add_config_args(p):
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--states", type=int)
    p.add_argument("--actions", type=int)
    p.add_argument("--branching", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--reward-mode", choices=("state", "state-action"))
    p.add_argument("--features", type=int, help="number of critic features K_r")
    p.add_argument("--horizon", type=int, help="steps (Garnet) or episodes (mountain car)")
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--sts-scale", type=int)
    p.add_argument("--max-episode-steps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.add_argument("--coefficients", type=_floats4, help="c1,c2,c3,c4")
    p.add_argument("--offsets", type=_floats4, help="n0 per scale")
    p.add_argument("--exponents", type=_floats4, help="p per scale")


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_yaml(args.config) if args.config else ExperimentConfig()
    updates = {}
    for flag, (name, _) in _FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            updates[name] = val
    cfg = replace(cfg, **updates)
    overrides = {k: getattr(args, k) for k in ("coefficients", "offsets", "exponents")
                 if getattr(args, k, None) is not None}
    if overrides:
        base = cfg.schedule or replace(cfg, schedule=None).resolved().schedule
        cfg = replace(cfg, schedule={**base, **overrides})
    return cfg.resolved()


def cmd_run(args):
    outcome = run_experiment(build_config(args))
    m = outcome.manifest
    for name, v in m["variants"].items():
        print(f"{name}: {len(v['repeats']) - v['failed']}/{len(v['repeats'])} repeats ok, "
              f"aggregate {'valid' if v['aggregate_valid'] else 'INVALID'}")
    return outcome.exit_code


def cmd_validate(args):
    report = run_validation(args.seed or 0, instances=args.instances, fault=args.fault)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    for name, sec in report["sections"].items():
        print(f"{'PASS' if sec['pass'] else 'FAIL'}  {name}")
    print(f"{'PASS' if report['ok'] else 'FAIL'}  overall ({report['seconds']:.1f} s)")
    return EXIT_OK if report["ok"] else EXIT_AUDIT


def cmd_schedule_check(args):
    cfg = build_config(args) if not args.raw else None
    if args.raw:
        sched = StepSchedule(tuple(args.coefficients), tuple(args.offsets), tuple(args.exponents))
        scales = (1, 2, 3, 4)
    else:
        sched, scales = cfg.step_schedule(), scales_used(cfg.algorithm)
    report = validate_schedule(sched, scales)
    print(json.dumps({"schedule": sched.to_dict(), "scales": list(scales), **report.to_dict()}, indent=2))
    return EXIT_OK if report.ok else EXIT_CONFIG


def cmd_show_config(args):
    print(yaml.safe_dump(build_config(args).to_dict(), sort_keys=False), end="")
    return EXIT_OK


def make_parser():
    parser = argparse.ArgumentParser(prog="adaptive-ac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write CSV curves")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="run the oracle audit suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--fault", choices=FAULTS, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("schedule-check", help="check step-size schedules")
    _add_config_args(p)
    p.add_argument("--raw", action="store_true",
                   help="check exactly --coefficients/--offsets/--exponents on all four scales")
    p.set_defaults(func=cmd_schedule_check)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    _add_config_args(p)
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    if getattr(args, "raw", False):
        missing = [k for k in ("coefficients", "offsets", "exponents") if getattr(args, k) is None]
        if missing:
            print(f"error: --raw needs --{', --'.join(missing)}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
