"""Command-line entry point: ``supg-dlr {run,converge,ranks,diagnose}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, NumericalError, SupgDlrError, ValidationError
from .experiments import (ExperimentConfig, convergence_study, diagnose, parse_int_list,
                          rank_study, read_config_file, single_run)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

GNUPLOT_TEMPLATE = """\
set datafile separator ','
set logscale xy
set key top left
set xlabel 'h'
set ylabel 'error'
plot '{csv}' using 1:7 skip 1 with linespoints title 'err\\_combined', \\
     '{csv}' using 1:8 skip 1 with linespoints title 'trunc\\_err'
"""

# CLI flag -> ExperimentConfig field
_FLAG_FIELDS = {
    "degree": "degree", "rank": "rank", "ranks": "ranks", "levels": "levels",
    "tfinal": "t_final", "dt_coeff": "dt_coeff", "dt_exp": "dt_exponent",
    "delta_safety": "delta_safety", "nc": "n_collocation", "ic": "ic_mode",
    "strict_stability": "strict_stability", "out": "out", "coupling": "coupling",
    "jobs": "jobs", "inject_exact": "inject_exact",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="supg-dlr", description="SUPG dynamical low-rank solver for random 1D ADR problems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [("run", "single configuration (finest listed level)"),
                           ("converge", "h-sweep at fixed rank"),
                           ("ranks", "rank sweep against best truncation"),
                           ("diagnose", "assumption and stabilization report only")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, help="key = value configuration file")
        p.add_argument("--degree", type=int, choices=(1, 2))
        p.add_argument("--rank", type=int)
        p.add_argument("--ranks", type=parse_int_list, help="e.g. 1,2,3")
        p.add_argument("--levels", type=parse_int_list, help="e.g. 3..6 (h = 2^-i)")
        p.add_argument("--tfinal", type=float)
        p.add_argument("--dt-coeff", type=float)
        p.add_argument("--dt-exp", type=float)
        p.add_argument("--delta-safety", type=float)
        p.add_argument("--nc", type=int)
        p.add_argument("--ic", choices=("svd", "interp"))
        p.add_argument("--coupling", choices=("implicit", "splitting"))
        p.add_argument("--jobs", type=int)
        p.add_argument("--strict-stability", action="store_true", default=None)
        p.add_argument("--inject-exact", action="store_true", default=None,
                       help="skip the solver and score the projected exact solution")
        p.add_argument("--out", type=str, help="CSV path (summary goes next to it as .txt)")
        p.add_argument("--gnuplot", action="store_true",
                       help="also write a gnuplot script next to the CSV")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args):
    values = read_config_file(args.config) if args.config else {}
    for flag, name in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[name] = val
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        if args.command == "diagnose":
            print(diagnose(config))
            return EXIT_OK
        driver = {"run": single_run, "converge": convergence_study, "ranks": rank_study}
        report = driver[args.command](config)
        print(report.summary())
        if config.out and args.gnuplot:
            out = Path(config.out)
            out.with_suffix(".gp").write_text(GNUPLOT_TEMPLATE.format(csv=out.name))
        elif not config.out:
            print(report.to_csv(), end="")
    except (ConfigurationError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SupgDlrError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
