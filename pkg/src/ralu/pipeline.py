"""Three-stage mixed-resolution sampler, the full-resolution baseline and the
upsampling-timing sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import fileio
from .caching import CachePolicy, CachedStepper
from .config import RunConfig
from .errors import DomainError
from .flow import GaussianModel, GaussianTarget, MixedVelocityAdapter, euler_integrate
from .latent_grid import LatentGrid, Level, TokenSet
from .noise import InjectionSpec, inject_tokens, rng_for
from .region_select import AffineDecoder, NormDecoder, canny, patch_scores, select_topk, tweedie_terminal
from .schedule import SchedulePlan, build_plan, discretize_timesteps, solve_ntdm


def default_mu(channels: int, height: int, width: int) -> np.ndarray:
    """Smooth positive mean field: gentle waves plus a soft-edged disk."""
    y, x = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width, indexing="ij")
    waves = 0.3 * np.sin(2 * np.pi * x) * np.cos(np.pi * y)
    r = np.hypot(x - 0.55, y - 0.45)
    disk = 1.0 / (1.0 + np.exp((r - 0.28) / 0.03))
    base = 2.0 + waves + disk
    return np.stack([base + 0.1 * k for k in range(channels)])


def make_target(cfg: RunConfig) -> GaussianTarget:
    shape = (cfg.channels, 2 * cfg.base_height, 2 * cfg.base_width)
    if cfg.target:
        grid = fileio.read_lat1(cfg.target)
        if grid.level != Level.HIGH or grid.shape != shape:
            raise DomainError(f"target field must be a HIGH grid of shape {shape}, got {grid.shape}")
        return GaussianTarget(grid.values, cfg.sigma)
    return GaussianTarget(default_mu(*shape), cfg.sigma)


def make_decoder(cfg: RunConfig):
    if cfg.decoder == "norm":
        return NormDecoder(cfg.footprint)
    return AffineDecoder.from_file(cfg.decoder, cfg.footprint)


def resolve_plan(cfg: RunConfig) -> SchedulePlan:
    configs = cfg.stage_configs
    if cfg.shifts is not None:
        return build_plan(configs, cfg.shifts, cfg.c, cfg.h_ori, meta={"solver": "fixed"})
    return solve_ntdm(configs, cfg.h_ori, c=cfg.c)


@dataclass
class StageRecord:
    stage: int
    N: int
    s: float
    e: float
    h: float
    timesteps: list[float]
    tokens: int
    computed_per_step: list[int]
    cache_note: str = ""

    @property
    def token_steps(self) -> int:
        return sum(self.computed_per_step)


@dataclass
class RunReport:
    mode: str
    config: dict
    seed: int
    stages: list[StageRecord]
    plan: dict | None = None
    selected: list[tuple[int, int, float]] = field(default_factory=list)
    tweedie_tokens: int = 0
    baseline_token_steps: int = 0
    previews: dict = field(default_factory=dict, repr=False)

    @property
    def token_counts(self) -> list[int]:
        return [s.tokens for s in self.stages]

    @property
    def token_steps(self) -> int:
        return sum(s.token_steps for s in self.stages)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config": self.config,
            "plan": self.plan,
            "stages": [
                {"stage": s.stage, "N": s.N, "s": s.s, "e": s.e, "h": s.h, "timesteps": s.timesteps,
                 "tokens": s.tokens, "computed_per_step": s.computed_per_step,
                 "token_steps": s.token_steps, "cache_note": s.cache_note}
                for s in self.stages
            ],
            "token_counts": self.token_counts,
            "token_steps": self.token_steps,
            "tweedie_tokens": self.tweedie_tokens,
            "baseline_token_steps": self.baseline_token_steps,
            "token_step_reduction": (self.baseline_token_steps / self.token_steps
                                     if self.token_steps and self.baseline_token_steps else None),
            "selected": [list(r) for r in self.selected],
        }


def _run_config(cfg: RunConfig) -> dict:
    # The output location is not part of the run, so reports omit it.
    d = cfg.to_dict()
    d.pop("out")
    return d


def _run_stage(tokens, adapter, timesteps, stage, n_stages, cache: CachePolicy | None):
    stepper = None
    if cache is not None:
        stepper = CachedStepper(cache, stage, len(timesteps) - 1, len(tokens), final_stage=stage == n_stages)
    n_tok = len(tokens)
    if stepper is None:
        out = euler_integrate(tokens, adapter, timesteps)
        return out, [n_tok] * (len(timesteps) - 1), ""
    out = euler_integrate(tokens, adapter, timesteps, stepper=stepper)
    return out, stepper.report.computed_per_step, stepper.report.note


def select_edge_patches(tokens: TokenSet, adapter, t: float, cfg: RunConfig, decoder=None):
    """Tweedie estimate at ``t``, decode, Canny, score patches, take top-k."""
    v = adapter.predict(tokens, t)
    x_hat = tokens.with_values(tweedie_terminal(tokens.values, t, v)).to_low_grid()
    image = (decoder or make_decoder(cfg)).decode(x_hat)
    edges = canny(image, cfg.canny_low, cfg.canny_high, cfg.blur_sigma)
    scores = select_topk(patch_scores(edges, (cfg.base_height, cfg.base_width), cfg.footprint), cfg.ratio)
    return scores, image, edges


def run_ralu(cfg: RunConfig, model=None, plan: SchedulePlan | None = None,
             keep_previews: bool = False) -> tuple[LatentGrid, RunReport]:
    """Mixed-resolution sampling: LOW, then edge patches HIGH, then all HIGH.

    ``model`` is a cellwise HIGH-grid model (defaults to the Gaussian
    backend built from ``cfg``). With two stages the edge stage is skipped
    and everything is promoted at the first transition.
    """
    plan = plan or resolve_plan(cfg)
    model = model or GaussianModel(make_target(cfg))
    adapter = MixedVelocityAdapter(model)
    cache = CachePolicy(cfg.caching) if cfg.caching is not None else None
    k = len(plan.stages)

    x0 = rng_for(cfg.seed, "init").standard_normal((cfg.channels, cfg.base_height, cfg.base_width))
    tokens = TokenSet.from_grid(LatentGrid(x0, Level.LOW))
    report = RunReport("ralu", _run_config(cfg), cfg.seed, [], plan.to_dict())

    start = plan.stages[0].s
    for i, st in enumerate(plan.stages, start=1):
        ts = np.asarray(st.timesteps)
        if i > 1 and cfg.skip_injection:
            ts = discretize_timesteps(start, st.e, st.h, st.N)
        tokens, computed, note = _run_stage(tokens, adapter, ts, i, k, cache)
        report.stages.append(StageRecord(i, st.N, float(ts[0]), st.e, st.h, ts.tolist(),
                                         len(tokens), list(computed), note))
        if i == k:
            break
        if i == 1 and k == 3:
            scores, image, edges = select_edge_patches(tokens, adapter, st.e, cfg)
            report.tweedie_tokens = len(tokens)
            report.selected = scores.rows()
            promote = scores.selected
            if keep_previews:
                report.previews.update(decoded=image, edges=edges, scores=scores)
        else:
            promote = np.unique(tokens.patch_index()[tokens.low_mask])
        tr = plan.transitions[i - 1]
        spec = InjectionSpec.from_transition(tr.e, plan.c)
        tokens = inject_tokens(tokens, promote, spec, rng_for(cfg.seed, "noise", i), skip=cfg.skip_injection)
        start = st.e if cfg.skip_injection else tr.s_next

    report.baseline_token_steps = cfg.baseline_steps * 4 * cfg.n_patches
    return tokens.to_grid(), report


def run_fullres_baseline(cfg: RunConfig, model=None) -> tuple[LatentGrid, RunReport]:
    """Single HIGH stage on [0, 1] with ``baseline_steps`` steps under the base shift."""
    model = model or GaussianModel(make_target(cfg))
    adapter = MixedVelocityAdapter(model)
    shape = (cfg.channels, 2 * cfg.base_height, 2 * cfg.base_width)
    x0 = rng_for(cfg.seed, "init").standard_normal(shape)
    tokens = TokenSet.from_grid(LatentGrid(x0, Level.HIGH))
    ts = discretize_timesteps(0.0, 1.0, cfg.h_ori, cfg.baseline_steps)
    out = euler_integrate(tokens, adapter, ts)
    n = len(tokens)
    rec = StageRecord(1, cfg.baseline_steps, 0.0, 1.0, cfg.h_ori, ts.tolist(), n, [n] * cfg.baseline_steps)
    report = RunReport("baseline", _run_config(cfg), cfg.seed, [rec])
    report.baseline_token_steps = rec.token_steps
    return out.to_grid(), report


@dataclass
class TimingResult:
    timing: float
    inject: bool
    s_next: float
    shifts: list[float]
    c: float | None
    mean_rel_error: float
    var_ratio: float
    within_block_corr: float
    within_block_corr_expected: float

    def to_dict(self):
        return dict(self.__dict__)


def _sibling_corr(samples: np.ndarray) -> float:
    """Mean correlation over sibling pairs of a (runs, C, H, W) HIGH sample set."""
    d = samples - samples.mean(axis=0)
    n, ch, h, w = d.shape
    blocks = d.reshape(n, ch, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, -1, 4)
    var = (blocks**2).mean(axis=0)
    corrs = []
    for i in range(4):
        for j in range(i + 1, 4):
            cov = (blocks[:, :, i] * blocks[:, :, j]).mean(axis=0)
            corrs.append(cov / np.sqrt(var[:, i] * var[:, j]))
    return float(np.mean(corrs))


def run_timing_sweep(cfg: RunConfig, upsample_timesteps, n_runs: int = 200, low_steps: int = 6,
                     high_steps: int = 12, inject: bool = True, model=None) -> list[TimingResult]:
    """Two-stage sampling with every latent promoted at each sweep timestep.

    Reports terminal moment errors against the Gaussian target and the mean
    within-block correlation across runs at the start of the HIGH stage. The
    expected correlation under exact flow is ``s^2 sigma^2 / (s^2 sigma^2 +
    (1-s)^2)`` with injection and 1 without.

    The noise strength is held fixed across timings (``cfg.c``, else 1/4);
    left free, the schedule solve drifts to tiny ``c`` for late timings and
    restarts the HIGH stage from near-pure noise.
    """
    c = cfg.c if cfg.c is not None else 0.25
    target = make_target(cfg)
    model = model or GaussianModel(target)
    adapter = MixedVelocityAdapter(model)
    sigma = target.sigma
    results = []
    for tau in upsample_timesteps:
        tau = float(tau)
        if not 0.0 <= tau < 1.0:
            raise DomainError("sweep timesteps must lie in [0, 1)")
        if tau == 0.0:
            s, a, b, shifts = 0.0, math.sqrt(c), 1.0, [cfg.h_ori]
            high_ts = discretize_timesteps(0.0, 1.0, cfg.h_ori, high_steps)
            low_ts = None
        else:
            plan = solve_ntdm([(low_steps, tau), (high_steps, 1.0)], cfg.h_ori, c=c)
            shifts = plan.shifts
            tr = plan.transitions[0]
            s, a, b = tr.s_next, tr.a, tr.b
            low_ts = np.asarray(plan.stages[0].timesteps)
            high_ts = (np.asarray(plan.stages[1].timesteps) if inject
                       else discretize_timesteps(tau, 1.0, plan.stages[1].h, high_steps))
        starts, finals = [], []
        for run in range(n_runs):
            seed = cfg.seed * 1_000_003 + run
            x0 = rng_for(seed, "init").standard_normal((cfg.channels, cfg.base_height, cfg.base_width))
            tokens = TokenSet.from_grid(LatentGrid(x0, Level.LOW))
            if low_ts is not None:
                tokens = euler_integrate(tokens, adapter, low_ts)
            all_patches = np.arange(tokens.n_low_patches)
            if tau == 0.0:
                # s = 0 limit of the injection: a = sqrt(c), b = 1 gives iid N(0, I).
                spec = SimpleNamespace(c=c, a=a, b=b)
            else:
                spec = InjectionSpec.from_transition(tau, c)
            tokens = inject_tokens(tokens, all_patches, spec, rng_for(seed, "noise", 1), skip=not inject)
            starts.append(tokens.to_grid().values)
            finals.append(euler_integrate(tokens, adapter, high_ts).to_grid().values)
        starts_a, finals_a = np.stack(starts), np.stack(finals)
        mean = finals_a.mean(axis=0)
        var = finals_a.var(axis=0, ddof=1)
        s_eff = s if inject else tau
        expected = 1.0 if not inject else (s_eff**2 * sigma**2) / (s_eff**2 * sigma**2 + (1 - s_eff) ** 2)
        results.append(TimingResult(
            tau, inject, s_eff, [float(h) for h in shifts], c,
            float(np.linalg.norm(mean - target.mu) / np.linalg.norm(target.mu)),
            float(var.mean() / sigma**2),
            _sibling_corr(starts_a), float(expected),
        ))
    return results

