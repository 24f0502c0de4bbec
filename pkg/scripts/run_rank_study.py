"""Rank sweep R = 1, 2, 3 against the best rank-R truncation of the exact
solution at the final time, plus the ratio err_l2_final / trunc_err."""
import argparse
import logging
from pathlib import Path

from supg_dlr.experiments import ExperimentConfig, parse_int_list, rank_study


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--degree", type=int, default=2, choices=(1, 2))
    parser.add_argument("--levels", type=parse_int_list, default=(6, 7))
    parser.add_argument("--ranks", type=parse_int_list, default=(1, 2, 3))
    parser.add_argument("--outdir", type=Path, default=Path("results"))
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = args.outdir / f"ranks_k{args.degree}.csv"
    report = rank_study(ExperimentConfig(degree=args.degree, ranks=args.ranks,
                                         levels=args.levels, out=str(out), jobs=args.jobs))
    print(report.summary())


if __name__ == "__main__":
    main()
