"""Solve shifts and noise strength for every preset and compare with the reference values.

    python3 scripts/shift_table.py [--h-ori 3] [--out shift_table.csv]
"""

import argparse

from ralu import fileio
from ralu.config import PRESETS
from ralu.schedule import plan_jsd, solve_ntdm


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h-ori", type=float, default=3.0)
    ap.add_argument("--out", default="shift_table.csv")
    args = ap.parse_args()

    rows = []
    print(f"{'preset':8} {'h (solved)':>24} {'c':>8} {'jsd':>10} | {'h (reference)':>24} {'c':>8} {'jsd':>10}")
    for name, p in PRESETS.items():
        configs = list(zip(p.steps, p.ends))
        plan = solve_ntdm(configs, args.h_ori)
        ref = plan_jsd(configs, p.reference_shifts, p.reference_c, args.h_ori)
        hs = " ".join(f"{h:.2f}" for h in plan.shifts)
        hr = " ".join(f"{h:.2f}" for h in p.reference_shifts)
        print(f"{name:8} {hs:>24} {plan.c:8.4f} {plan.jsd:10.3e} | {hr:>24} {p.reference_c:8.4f} {ref:10.3e}")
        rows.append((name, *plan.shifts, plan.c, plan.jsd, *p.reference_shifts, p.reference_c, ref))
    fileio.write_csv(args.out, ["preset", "h1", "h2", "h3", "c", "jsd", "ref_h1", "ref_h2", "ref_h3", "ref_c",
                                "ref_jsd"], rows)


if __name__ == "__main__":
    main()
