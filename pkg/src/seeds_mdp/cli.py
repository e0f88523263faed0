"""Command-line entry point: ``seeds-mdp {run,sweep,validate,lower-bound-instance}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .adversary import lower_bound_mdp
from .checks import run_checks
from .harness import ConfigError, check_config, load_config, run_experiment, sweep_and_fit
from .mdp import save_mdp

log = logging.getLogger("seeds_mdp")

_OVERRIDES = {
    "seed": "base_seed",
    "replications": "replications",
    "out": "output",
    "beta": "beta",
    "delta": "delta",
    "c_eta": "c_eta",
    "c_tau": "c_tau",
    "c_gamma": "c_gamma",
    "algo": "algorithm",
}


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--out")
    p.add_argument("--beta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--c-eta", type=float)
    p.add_argument("--c-tau", type=float)
    p.add_argument("--c-gamma", type=float)
    p.add_argument("--algo", choices=["seeds", "seeds_ut", "oreps_baseline", "fixed_uniform"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seeds-mdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run replications of one experiment")
    _add_overrides(run)
    run.add_argument("--T", type=int, help="override the horizon")

    sweep = sub.add_parser("sweep", help="run a horizon sweep and fit the regret exponent")
    _add_overrides(sweep)
    sweep.add_argument("--T", required=True, help="comma-separated horizons, e.g. 1000,2000,4000")

    sub.add_parser("validate", help="run the invariant suite on built-in instances")

    lb = sub.add_parser("lower-bound-instance", help="write the bandit-chain lower-bound MDP as JSON")
    lb.add_argument("--S", type=int, required=True)
    lb.add_argument("--H", type=int, required=True)
    lb.add_argument("--A", type=int, required=True)
    lb.add_argument("--out", help="output path (stdout when omitted)")
    return parser


def _config_from_args(args):
    cfg = load_config(args.config)
    changes = {field: getattr(args, flag) for flag, field in _OVERRIDES.items() if getattr(args, flag) is not None}
    if args.command == "run" and args.T is not None:
        changes["T"] = args.T
    cfg = replace(cfg, **changes)
    check_config(cfg)
    return cfg


def _print_summary(summary) -> None:
    agg = summary["aggregate"]
    for key in ("loss_regret", "switching_cost", "total_regret", "n_switches"):
        print(f"{key:>15}: {agg[key]['mean']:.4f} +/- {agg[key]['stderr']:.4f}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            result = run_experiment(cfg)
            _print_summary(result.summary)
            if cfg.output:
                print(f"wrote {cfg.replications} run file(s) and summary.json to {cfg.output}")
        elif args.command == "sweep":
            cfg = _config_from_args(args)
            try:
                T_list = [int(t) for t in args.T.split(",") if t.strip()]
            except ValueError:
                raise ConfigError("T", f"cannot parse horizon list {args.T!r}") from None
            res = sweep_and_fit(cfg, T_list)
            print("T,tau,mean_total_regret,stderr_total_regret")
            for row in res.table:
                print(f"{row['T']},{row['tau']},{row['mean_total_regret']:.6g},{row['stderr_total_regret']:.6g}")
            print(f"slope={res.slope:.4f} intercept={res.intercept:.4f}")
        elif args.command == "validate":
            failed = 0
            for name, ok, detail in run_checks():
                print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
                failed += not ok
            return 1 if failed else 0
        elif args.command == "lower-bound-instance":
            mdp = lower_bound_mdp(args.S, args.H, args.A)
            if args.out:
                save_mdp(mdp, args.out)
            else:
                print(json.dumps(mdp.to_dict()))
        return 0
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON in {args.config}: {exc.msg} at line {exc.lineno}, column {exc.colno}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
