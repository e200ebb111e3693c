"""Command-line entry point.

Exit codes: 0 success or accept, 1 internal error, 2 usage or I/O error,
3 reject (a prediction failed validation, or a study check failed).
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import traceback

from .campaign import (CampaignError, describe_residual, load_config, run_campaign,
                       run_discretisation_study, run_model_quality_study, solve_single,
                       validate_single)
from .errors import ConfigurationError

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_REJECT = 0, 1, 2, 3
VERBS = ("solve", "calibrate", "validate", "coverage-curve", "study-discretisation", "study-model-quality")


def _numbers(text: str, cast=float):
    return [cast(t) for t in text.replace(",", " ").split()]


def _ic_params(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        k, _, v = part.partition("=")
        if not _:
            raise ConfigurationError(f"--ic expects name=value pairs, got {part!r}")
        out[k.strip()] = float(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="physcp", description="Data-free conformal calibration of PDE surrogates.")
    p.add_argument("verb", nargs="?", choices=VERBS)
    p.add_argument("--config", help="campaign config file (INI)")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out", help="output directory (or file for solve)")
    p.add_argument("--describe-residual", action="store_true",
                   help="print the residual program and its stencils, then exit")
    p.add_argument("--prediction", help="validate: rollout file in field dump format")
    p.add_argument("--artifacts", help="validate: directory written by calibrate")
    p.add_argument("--mode", choices=("joint", "marginal"), default="joint", help="validate: band type")
    p.add_argument("--ic", "--params", dest="ic", help="solve: IC parameters, e.g. A=100,X=0.7 (default: box centre)")
    p.add_argument("--levels", default="100,400", help="study-discretisation: point counts")
    p.add_argument("--eps", default="0.01,0.2", help="study-model-quality: noise levels")
    return p


def _config(args):
    if not args.config:
        raise ConfigurationError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out and args.verb != "solve":
        cfg = dataclasses.replace(cfg, out=args.out)
    return cfg


def _run(args) -> int:
    if args.describe_residual:
        print(describe_residual(_config(args)))
        return EXIT_OK
    if args.verb is None:
        raise ConfigurationError("a verb is required")
    cfg = _config(args)
    if args.verb == "solve":
        if not args.out:
            raise ConfigurationError("solve needs --out <file>")
        roll = solve_single(cfg, _ic_params(args.ic), args.out)
        print(f"wrote {args.out}: {roll.grid!r}")
        return EXIT_OK
    if args.verb == "validate":
        if not (args.prediction and args.artifacts):
            raise ConfigurationError("validate needs --prediction and --artifacts")
        res = validate_single(cfg, args.prediction, args.artifacts, args.mode)
        print(res.message, file=sys.stderr if res.status == 2 else sys.stdout)
        return res.status
    if args.verb in ("calibrate", "coverage-curve"):
        if cfg.out is None:
            raise ConfigurationError(f"{args.verb} needs --out or [run] out")
        res = run_campaign(cfg)
        if args.verb == "coverage-curve":
            sys.stdout.write(res.report.to_csv())
        else:
            m, j = res.marginal, res.joint
            print(f"alpha={m.alpha:g} n_cal={m.n} mean_width_marginal={m.mean_width():.6g} "
                  f"qhat_joint={j.qhat:.6g} mean_width_joint={j.mean_width():.6g}")
            print(f"artifacts in {cfg.out}")
        return EXIT_OK
    if args.verb == "study-discretisation":
        study = run_discretisation_study(cfg, _numbers(args.levels, int), out=cfg.out)
    else:
        study = run_model_quality_study(cfg, _numbers(args.eps), out=cfg.out)
    sys.stdout.write(study.to_csv())
    for name, ok in study.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if study.passed else EXIT_REJECT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return _run(args)
    except (ConfigurationError, OSError) as exc:
        print(f"physcp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CampaignError as exc:
        print(f"physcp: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, (ConfigurationError, OSError)) else EXIT_INTERNAL
    except Exception:  # pragma: no cover - reported, not swallowed
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
