"""Upsampling-timing sweep in the two-stage setting, with and without noise injection.

    python3 scripts/timing_sweep.py [--runs 200] [--c 0.25] [--out timing_sweep.csv]
"""

import argparse

from ralu import fileio
from ralu.config import RunConfig
from ralu.pipeline import run_timing_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--c", type=float, default=0.25)
    ap.add_argument("--size", type=int, default=16, help="base grid side")
    ap.add_argument("--timings", type=float, nargs="+", default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    ap.add_argument("--out", default="timing_sweep.csv")
    args = ap.parse_args()

    cfg = RunConfig(base_height=args.size, base_width=args.size, c=args.c)
    rows = []
    print(f"{'tau':>5} {'inject':>6} {'s':>6} {'mean err':>9} {'var/s2':>7} {'corr':>7} {'corr exact':>10}")
    for inject in (True, False):
        for r in run_timing_sweep(cfg, args.timings, n_runs=args.runs, inject=inject):
            print(f"{r.timing:5.2f} {str(r.inject):>6} {r.s_next:6.3f} {r.mean_rel_error:9.4f} "
                  f"{r.var_ratio:7.3f} {r.within_block_corr:7.3f} {r.within_block_corr_expected:10.3f}")
            rows.append((r.timing, int(r.inject), r.s_next, r.c, r.mean_rel_error, r.var_ratio,
                         r.within_block_corr, r.within_block_corr_expected))
    fileio.write_csv(args.out, ["timing", "inject", "s_next", "c", "mean_rel_error", "var_ratio",
                                "within_block_corr", "within_block_corr_exact"], rows)


if __name__ == "__main__":
    main()
