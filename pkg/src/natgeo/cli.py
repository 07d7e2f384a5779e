"""Command-line entry point.

Usage::

    natgeo invariance       --config configs/fig2.json       [--out DIR] [--seed N] [-v]
    natgeo order-study      --config configs/order.json
    natgeo mlp              --config configs/mlp.json
    natgeo small-curvature  --config configs/smallcurve.json
    natgeo check            [--inject-fault]

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure
(including failed checks).  Every run writes its CSV files and ``meta.json``
(resolved config, seed, build id) into the output directory.
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .errors import ConfigError, NatGeoError
from .harness.checks import checks_csv, run_checks
from .harness.config import load_config
from .harness.experiments import run_experiment

log = logging.getLogger("natgeo")

SUBCOMMANDS = {
    "invariance": "invariance",
    "order-study": "order",
    "mlp": "mlp",
    "small-curvature": "small_curvature",
}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="natgeo", description="Natural gradient experiments.")
    parser.add_argument("--version", action="version", version=f"natgeo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        _common(p)
    p = sub.add_parser("check", help="run the oracle check suite")
    p.add_argument("--inject-fault", action="store_true",
                   help="perturb the network handed to fisher_vp; Fisher checks must fail")
    _common(p)
    return parser


def _common(p):
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _write(out_dir, name, text):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)
    return path


def _prepare_out(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir!r}: {exc.strerror}", "out") from None
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory {out_dir!r} is not writable", "out")


def _meta(command, config, seed, files, summary=None):
    meta = {
        "command": command,
        "build": f"natgeo {__version__}",
        "seed": seed,
        "config": config,
        "files": sorted(files),
        "assumptions": {
            "loss_reduction": "mean",
            "rng": "numpy PCG64 (default_rng)",
            "network_init": "gaussian, variance init_variance / fan_in, zero biases",
        },
    }
    if summary is not None:
        meta["summary"] = summary
    return json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(value):
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


def _run_experiment(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative", "seed")
        cfg = cfg.with_seed(args.seed)
    want = SUBCOMMANDS[args.command]
    if cfg.experiment != want:
        raise ConfigError(f"config experiment {cfg.experiment!r} does not match "
                          f"subcommand {args.command!r}", "experiment")
    _prepare_out(args.out)
    log.info("running %s with seed %d", cfg.experiment, cfg.seed)
    output = run_experiment(cfg)
    for name, text in output.files.items():
        _write(args.out, name, text)
    _write(args.out, "meta.json", _meta(args.command, cfg.to_dict(), cfg.seed, output.files,
                                        output.summary))
    errors = sorted({r.status for r in output.records if getattr(r, "status", "ok") != "ok"})
    for status in errors:
        log.warning("some cells ended with %s", status)
    for key, value in output.summary.items():
        print(f"{key}: {json.dumps(value, default=_jsonable, sort_keys=True)}")
    return EXIT_OK


def _run_check(args):
    _prepare_out(args.out)
    results = run_checks(inject_fault=args.inject_fault)
    _write(args.out, "checks.csv", checks_csv(results))
    failures = [r for r in results if not r.passed]
    config = {"inject_fault": args.inject_fault}
    _write(args.out, "meta.json", _meta("check", config, args.seed, ["checks.csv"],
                                        {"checks": len(results), "failures": len(failures)}))
    for r in results:
        if args.verbose or not r.passed:
            print(f"{r.verdict.upper():4} {r.name}  observed={r.observed:.3g}  tol={r.tolerance:.3g}")
    print(f"{len(results)} checks, {len(failures)} failures")
    return EXIT_OK if not failures else EXIT_NUMERIC


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"natgeo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "check":
            return _run_check(args)
        return _run_experiment(args)
    except ConfigError as exc:
        print(f"natgeo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NatGeoError, ArithmeticError, ValueError) as exc:
        print(f"natgeo: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"natgeo: I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
