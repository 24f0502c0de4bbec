"""h-convergence for k = 1 and k = 2 at rank 6; writes CSV, summary and a
gnuplot script per degree into results/."""
import argparse
import logging
from pathlib import Path

from supg_dlr.cli import GNUPLOT_TEMPLATE
from supg_dlr.experiments import ExperimentConfig, convergence_study, parse_int_list


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--levels", type=parse_int_list, default=(3, 4, 5, 6))
    parser.add_argument("--rank", type=int, default=6)
    parser.add_argument("--outdir", type=Path, default=Path("results"))
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    for k in (1, 2):
        out = args.outdir / f"convergence_k{k}.csv"
        cfg = ExperimentConfig(degree=k, rank=args.rank, levels=args.levels, out=str(out),
                               jobs=args.jobs)
        report = convergence_study(cfg)
        out.with_suffix(".gp").write_text(GNUPLOT_TEMPLATE.format(csv=out.name))
        print(f"--- degree {k} (expected order {2 * (k + 1) / 3:.3f})")
        print(report.summary())


if __name__ == "__main__":
    main()
