"""Terminal variance of explicit Euler on the Gaussian flow versus step count.

The velocity is affine in x, so the Euler map is affine and the terminal
variance follows from a scalar recursion, with no sampling. Shows how far the
sampler's variance sits from sigma^2 for the step counts in use.

    python3 scripts/euler_variance.py [--sigma 0.5]
"""

import argparse

from ralu.config import PRESETS
from ralu.flow import euler_moments
from ralu.schedule import discretize_timesteps, solve_ntdm


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--h-ori", type=float, default=3.0)
    args = ap.parse_args()
    s2 = args.sigma**2

    print("single stage, base shift")
    for n in (10, 18, 28, 50, 100, 200, 1000):
        _, v = euler_moments(0.0, 1.0, discretize_timesteps(0, 1, args.h_ori, n), 1.0, args.sigma)
        print(f"  N={n:5d}  var/sigma^2 = {v / s2:.4f}")

    print("three stages, injection between stages (cell promoted at the first transition)")
    for name, p in PRESETS.items():
        plan = solve_ntdm(list(zip(p.steps, p.ends)), args.h_ori)
        v = 1.0
        for i, st in enumerate(plan.stages):
            _, v = euler_moments(0.0, v, st.timesteps, 1.0, args.sigma)
            if i < len(plan.stages) - 1:
                tr = plan.transitions[i]
                v = tr.a**2 * v + tr.b**2 * (1 - plan.c)
        print(f"  {name:7} N={sum(p.steps):3d}  var/sigma^2 = {v / s2:.4f}")


if __name__ == "__main__":
    main()
