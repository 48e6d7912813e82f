"""Command-line entry point: ``fvspine <subcommand> [--config PATH] ...``.

Every flag can also be set through an environment variable with the
``FVSPINE_`` prefix (``FVSPINE_SEED``, ``FVSPINE_OUT``, ...); flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .acceptance import run_acceptance, shipped_config
from .config import parse_config
from .errors import ConfigError
from .experiments import run_experiment, simulate
from .report import report

ENV_PREFIX = "FVSPINE_"

SUBCOMMANDS = {
    "simulate": "spine_marginal",
    "spine": "spine_marginal",
    "villemonais": "villemonais",
    "verify-kernels": "kernels",
    "boundary": "boundary",
    "transform": "transform_coupling",
}


def _env(name, cast=str):
    val = os.environ.get(ENV_PREFIX + name)
    return None if val is None else cast(val)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=_env("CONFIG", Path),
                        help="YAML or JSON experiment config (default: the shipped one)")
    common.add_argument("--seed", type=int, default=_env("SEED", int))
    common.add_argument("--out", type=Path, default=_env("OUT", Path), help="output directory")
    common.add_argument("--parallelism", type=int, default=_env("PARALLELISM", int))
    common.add_argument("--dt", type=float, default=_env("DT", float))

    parser = argparse.ArgumentParser(prog="fvspine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=f"run the {experiment} experiment"
                       if name != "simulate" else "run the engine and write event logs")
    sub.add_parser("report", parents=[common], help="summarize a finished run (--out DIR)")
    accept = sub.add_parser("accept", parents=[common], help="run the full acceptance suite")
    accept.add_argument("--reuse", action="store_true",
                        help="keep verified results of identical earlier runs")
    return parser


def _load(args, experiment):
    cfg = parse_config(args.config) if args.config else shipped_config(experiment)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out,
                              parallelism=args.parallelism, dt=args.dt)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            if args.out is None:
                raise ConfigError("report needs --out pointing at a run directory")
            text = report(args.out)
            print(text)
            return 0 if text.endswith("PASS") else 1
        if args.command == "accept":
            out = args.out or Path("out/acceptance")
            results = run_acceptance(out, parallelism=args.parallelism or 1, seed=args.seed,
                                     dt=args.dt, echo=print, reuse=args.reuse)
            ok = all(r.passed for r in results)
            print("PASS" if ok else "FAIL: criteria " +
                  ", ".join(str(r.number) for r in results if not r.passed))
            return 0 if ok else 1
        cfg = _load(args, SUBCOMMANDS[args.command])
        manifest = simulate(cfg) if args.command == "simulate" else run_experiment(cfg)
        text = report(manifest)
        print(text)
        return 0 if manifest.passed else 1
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"fvspine: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
