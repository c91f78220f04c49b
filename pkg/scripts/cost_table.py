"""Token-step accounting for each preset, with and without caching, plus the decoder share.

    python3 scripts/cost_table.py [--ratio 0.3] [--caching 0.4] [--beta 0]
"""

import argparse

from ralu.config import PRESETS
from ralu.cost import CostModel, TokenCounts, estimate_cost, token_counts, token_steps


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ratio", type=float, default=0.3)
    ap.add_argument("--caching", type=float, default=0.4)
    ap.add_argument("--beta", type=float, default=0.0, help="quadratic (attention) cost weight")
    args = ap.parse_args()

    model = CostModel(alpha=1.0, beta=args.beta)
    print(f"{'preset':8} {'steps':>10} {'tokens':>16} {'token-steps':>11} {'x':>6} {'cached':>8} {'x':>6}"
          f" {'cost x':>7}")
    for name, p in PRESETS.items():
        tc = token_counts((32, 32), args.ratio, args.caching)
        plain, red = token_steps(p.steps, tc, None, p.baseline_steps)
        cached, red_c = token_steps(p.steps, tc, args.caching, p.baseline_steps)
        base = estimate_cost((p.baseline_steps,), TokenCounts((tc.full[-1],), (None,)), model).total
        ours = estimate_cost(p.steps, tc, model).total
        print(f"{name:8} {'/'.join(map(str, p.steps)):>10} {'/'.join(map(str, tc.full)):>16} {plain:11d} "
              f"{red:6.2f} {cached:8d} {red_c:6.2f} {base / ours:7.2f}")

    share = estimate_cost((1,), TokenCounts((1,), (None,)), CostModel(alpha=2990.96, decoder_cost=2.48))
    print(f"decoder share at 2.48 / 2990.96: {100 * share.decoder_share:.4f}%")


if __name__ == "__main__":
    main()
