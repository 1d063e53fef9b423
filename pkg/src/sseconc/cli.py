"""Command line interface: ``sseconc {run,sweep,validate,analyze,resume}``.

Exit codes: 0 success, 1 configuration error, 2 validation failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .engine import CheckpointError
from .estimators import BROKEN, SYMMETRIC
from . import runner

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit), overrides run.seed")
    p.add_argument("--chains", type=int, help="independent Markov chains, overrides run.chains")
    p.add_argument("--out", help="output directory, overrides run.out")
    p.add_argument("--checkpoint-every", type=int, metavar="SWEEPS", help="checkpoint interval, overrides run.checkpoint_every")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sseconc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="simulate one parameter point"))
    _add_run_flags(sub.add_parser("sweep", help="simulate every value of the [sweep] axis"))
    v = sub.add_parser("validate", help="compare Monte Carlo with exact diagonalization")
    _add_run_flags(v)
    a = sub.add_parser("analyze", help="entanglement tables from bin dumps")
    a.add_argument("inputs", nargs="+", help="bin files or run directories")
    a.add_argument("--mode", choices=[SYMMETRIC, BROKEN], default=SYMMETRIC)
    a.add_argument("--scale", type=float, default=1.0, help="multiplier applied to reported C_F (presentation only)")
    a.add_argument("--psd-project", action="store_true", help="project rho onto the PSD cone before the measures")
    a.add_argument("--out", help="write the table here instead of stdout")
    r = sub.add_parser("resume", help="continue an interrupted run or sweep")
    r.add_argument("--out", required=True, help="directory of the interrupted run")
    return ap


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, chains=args.chains, out=args.out, checkpoint_every=args.checkpoint_every)


def _print_summary(res) -> None:
    for name, est in res.summary().items():
        print(f"{name:<14} {est.value: .8g} +- {est.sigma:.3g}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = _config(args)
            res = runner.run_point(cfg, cfg.out)
            _print_summary(res)
        elif args.command == "sweep":
            cfg = _config(args)
            for value, res in runner.run_sweep(cfg):
                print(f"{cfg.sweep_parameter} = {value:g}: {res.config.out}")
        elif args.command == "validate":
            cfg = _config(args)
            report = runner.validate(cfg)
            print(report.format())
            if not report.passed:
                return EXIT_VALIDATION
        elif args.command == "analyze":
            rows = runner.analyze(args.inputs, args.mode, args.scale, args.psd_project, args.out)
            if args.out is None:
                cols = ["dx", "dy", "cf", "cf_err", "ef", "ca", "ca_err", "el_lower", "el_lower_err"]
                print("\t".join(cols))
                for r in rows:
                    print("\t".join(f"{r[c]:.6g}" for c in cols))
        elif args.command == "resume":
            for _, res in runner.resume(args.out):
                print(res.config.out)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
