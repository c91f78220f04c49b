"""Command-line front end: ``ralu {schedule,run,verify,cost,edges}``.

Exit codes: 0 success, 1 verification or solve failure, 2 config error,
3 IO error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import PRESETS, RunConfig, from_dict, from_preset, load_config
from .cost import CostModel, estimate_cost, token_counts, token_steps
from .errors import DomainError, RaluError, ScheduleSolveError, ShapeError
from .flow import MixedVelocityAdapter, GaussianModel, euler_integrate
from .latent_grid import LatentGrid, Level, TokenSet
from .noise import MIN_SAMPLES, rng_for, verify_injection
from .pipeline import default_mu, make_target, resolve_plan, run_fullres_baseline, run_ralu, select_edge_patches
from .schedule import realized_distribution, target_distribution
from .verify import flow_checks, schedule_checks

log = logging.getLogger("ralu")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
DEFAULT_OUT = "ralu_out"
# Noise strength used by ``verify`` when the config leaves c to the solver.
VERIFY_C = 0.0251


def _seed_default():
    raw = os.environ.get("RALU_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"RALU_SEED must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int, help="default: $RALU_SEED, else the config seed")
    common.add_argument("--ratio", type=float, help="fraction of patches promoted at the first transition")
    common.add_argument("--c", type=float, help="fix the noise strength instead of solving for it")
    common.add_argument("--h-ori", dest="h_ori", type=float)
    common.add_argument("--out", help=f"output directory (default {DEFAULT_OUT})")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="ralu", description="Region-adaptive latent upsampling toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("schedule", parents=[common], help="solve shifts and noise strength")
    run = sub.add_parser("run", parents=[common], help="sample with the Gaussian backend")
    run.add_argument("--baseline", action="store_true", help="single full-resolution stage instead")
    run.add_argument("--caching", type=float, help="cache ratio for stages 2 and 3")
    run.add_argument("--skip-injection", dest="skip_injection", action="store_true")
    ver = sub.add_parser("verify", parents=[common], help="statistical and property checks")
    ver.add_argument("--samples", type=int, default=100_000)
    ver.add_argument("--skip-injection", dest="skip_injection", action="store_true")
    cost = sub.add_parser("cost", parents=[common], help="token and cost accounting")
    cost.add_argument("--caching", type=float)
    sub.add_parser("edges", parents=[common], help="decode, detect edges and score patches")
    return p


def resolve_config(args) -> RunConfig:
    if args.config:
        doc = fileio.read_json(args.config) if args.preset else None
        if doc is None:
            cfg = load_config(args.config)
        elif not isinstance(doc, dict):
            raise DomainError("config must be a JSON object")
        else:
            # Keys in the file override the preset's stage layout.
            cfg = from_dict({**doc, "preset": args.preset})
    else:
        cfg = from_preset(args.preset) if args.preset else RunConfig()
    seed = args.seed if args.seed is not None else _seed_default()
    return cfg.replace(seed=seed, ratio=args.ratio, c=args.c, h_ori=args.h_ori, out=args.out,
                       caching=getattr(args, "caching", None),
                       skip_injection=getattr(args, "skip_injection", None) or None)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    log.info("writing outputs to %s", out)
    return out


def _fmt(xs):
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


def cmd_schedule(cfg: RunConfig) -> int:
    plan = resolve_plan(cfg)
    log.info("solver: %s", plan.meta)
    out = _outdir(cfg)
    doc = plan.to_dict()
    doc["config"] = {"steps": list(cfg.steps), "ends": list(cfg.ends)}
    fileio.write_json(out / "schedule.json", doc)
    p_t = target_distribution(cfg.stage_configs, plan.c, plan.h_ori)
    p_r = realized_distribution(plan)
    fileio.write_csv(out / "p_target.csv", ["t", "p"], zip(p_t.grid, p_t.values))
    fileio.write_csv(out / "p_realized.csv", ["t", "p"], zip(p_r.grid, p_r.values))
    print(f"schedule h={_fmt(plan.shifts)} c={plan.c:.4g} jsd={plan.jsd:.4g}")
    return EXIT_OK


def cmd_run(cfg: RunConfig, baseline: bool = False) -> int:
    out = _outdir(cfg)
    if baseline:
        final, report = run_fullres_baseline(cfg)
    else:
        final, report = run_ralu(cfg, keep_previews=True)
        if report.previews:
            fileio.write_pgm(out / "decoded.pgm", report.previews["decoded"])
            fileio.write_pgm(out / "edges.pgm", report.previews["edges"])
    fileio.write_lat1(out / "latent.lat1", final)
    fileio.write_json(out / "report.json", report.to_dict())
    counts = "/".join(str(t) for t in report.token_counts)
    print(f"{report.mode} seed={cfg.seed} tokens={counts} token_steps={report.token_steps} "
          f"reduction={report.baseline_token_steps / report.token_steps:.4g}x")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, samples: int) -> int:
    if samples < MIN_SAMPLES:
        print(f"error: --samples {samples} is below the power floor of {MIN_SAMPLES}", file=sys.stderr)
        return EXIT_CONFIG
    out = _outdir(cfg)
    c = cfg.c if cfg.c is not None else VERIFY_C
    x1_low = default_mu(1, 8, 8)[0]
    inj = verify_injection(x1_low, cfg.ends[0], c, n_samples=samples, seed=cfg.seed,
                           skip_injection=cfg.skip_injection)
    rows = inj.rows + schedule_checks(cfg.seed) + flow_checks(cfg.seed)
    fileio.write_csv(out / "verify.csv",
                     ["arm", "statistic", "expected", "observed", "z_score", "threshold", "status"],
                     [(r.arm, r.statistic, r.expected, r.observed, r.z_score, r.threshold, r.status)
                      for r in rows])
    bad = [r for r in rows if r.status in ("fail", "xpass")]
    if bad:
        for r in bad:
            print(f"FAIL {r.arm}:{r.statistic} observed={r.observed!r} threshold {r.threshold}")
        return EXIT_VERIFY
    xfail = sum(r.status == "xfail" for r in rows)
    print(f"PASS verify checks={len(rows)} xfail={xfail} s_next={inj.s_next:.6f} n={samples}")
    return EXIT_OK


def cmd_cost(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    counts = token_counts((cfg.base_height, cfg.base_width), cfg.ratio, cfg.caching, len(cfg.steps))
    total, reduction = token_steps(cfg.steps, counts, cfg.caching, cfg.baseline_steps)
    br = estimate_cost(cfg.steps, counts, CostModel(), cfg.caching)
    fileio.write_csv(out / "cost.csv", ["stage", "steps", "tokens", "cost", "share"], br.rows())
    cached = "/".join("-" if t is None else str(t) for t in counts.cached)
    print(f"cost tokens={'/'.join(map(str, counts.full))} cached={cached} "
          f"token_steps={total} reduction={reduction:.4g}x")
    return EXIT_OK


def cmd_edges(cfg: RunConfig) -> int:
    if len(cfg.steps) != 3:
        print("error: edge selection needs a three-stage config", file=sys.stderr)
        return EXIT_CONFIG
    out = _outdir(cfg)
    plan = resolve_plan(cfg)
    adapter = MixedVelocityAdapter(GaussianModel(make_target(cfg)))
    x0 = rng_for(cfg.seed, "init").standard_normal((cfg.channels, cfg.base_height, cfg.base_width))
    tokens = euler_integrate(TokenSet.from_grid(LatentGrid(x0, Level.LOW)), adapter, plan.stages[0].timesteps)
    scores, image, edges = select_edge_patches(tokens, adapter, plan.stages[0].e, cfg)
    fileio.write_pgm(out / "decoded.pgm", image)
    fileio.write_pgm(out / "edges.pgm", edges)
    chosen = set(scores.selected)
    flat = np.asarray(scores.scores).ravel()
    fileio.write_csv(out / "scores.csv", ["row", "col", "score", "selected"],
                     [(i // cfg.base_width, i % cfg.base_width, float(flat[i]), int(i in chosen))
                      for i in range(flat.size)])
    print(f"edges pixels={int(np.asarray(edges).sum())} selected={len(chosen)}/{flat.size}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "schedule":
            return cmd_schedule(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.baseline)
        if args.command == "verify":
            return cmd_verify(cfg, args.samples)
        if args.command == "cost":
            return cmd_cost(cfg)
        return cmd_edges(cfg)
    except ScheduleSolveError as exc:
        print(f"error: schedule solve failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ShapeError as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RaluError, ValueError, TypeError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
