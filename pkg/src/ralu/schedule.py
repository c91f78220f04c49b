"""Timestep densities, distribution matching and per-stage discretisation.

Convention: t = 0 is pure noise, t = 1 is data. A shift ``h > 1`` concentrates
sampling toward the noise end.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import ConsistencyError, DomainError, ScheduleSolveError, ShapeError

GRID_SIZE = 4096
DENSITY_FLOOR = 1e-12
H_BOUNDS = (1.0, 16.0)
C_BOUNDS = (1e-4, 0.25)


def _check_h(h):
    if np.any(np.asarray(h) <= 0):
        raise DomainError(f"shift parameter must be positive, got {h}")


def pdf_shift(t, h):
    _check_h(h)
    t = np.asarray(t, dtype=np.float64)
    return h / (1.0 + (h - 1.0) * t) ** 2


def cdf_shift(t, h):
    _check_h(h)
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)):
        raise DomainError("t must lie in [0, 1]")
    return h * t / (1.0 + (h - 1.0) * t)


def inv_cdf_shift(u, h):
    _check_h(h)
    u = np.asarray(u, dtype=np.float64)
    if np.any((u < 0) | (u > 1)):
        raise DomainError("u must lie in [0, 1]")
    return u / (h - (h - 1.0) * u)


def pdf_truncated(t, h, s, e):
    if not s < e:
        raise DomainError(f"empty interval [{s}, {e}]")
    t = np.asarray(t, dtype=np.float64)
    mass = cdf_shift(e, h) - cdf_shift(s, h)
    inside = (t >= s) & (t <= e)
    return np.where(inside, pdf_shift(np.clip(t, 0.0, 1.0), h) / mass, 0.0)


def injection_coefficients(e, c):
    """Restart timestep and mixing weights after a 2x nearest-neighbour upsample.

    Returns ``(s_next, a, b)`` such that ``a * Up(x_e) + b * z`` with
    ``z ~ N(0, I - c*Sigma)`` has the conditional law of ``x_{s_next}``.
    """
    if not 0.0 < c <= 0.25:
        raise DomainError(f"noise strength c must lie in (0, 1/4], got {c}")
    if not 0.0 < e <= 1.0:
        raise DomainError(f"transition timestep must lie in (0, 1], got {e}")
    z = (1.0 - e) / math.sqrt(c)
    denom = z + e
    return e / denom, 1.0 / denom, z / denom


@dataclass(frozen=True)
class StageConfig:
    N: int
    e: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"stage step count must be a positive integer, got {self.N}")
        if not 0.0 < self.e <= 1.0:
            raise DomainError(f"stage end must lie in (0, 1], got {self.e}")


def validate_stages(configs) -> list[StageConfig]:
    configs = [c if isinstance(c, StageConfig) else StageConfig(*c) for c in configs]
    if not configs:
        raise DomainError("at least one stage is required")
    ends = [c.e for c in configs]
    if any(b <= a for a, b in zip(ends, ends[1:])):
        raise DomainError(f"stage ends must be strictly increasing, got {ends}")
    if ends[-1] != 1.0:
        raise DomainError("the last stage must end at t = 1")
    return configs


def stage_starts(ends, c) -> list[float]:
    starts = [0.0]
    for e in ends[:-1]:
        starts.append(injection_coefficients(e, c)[0])
    for s, e in zip(starts, ends):
        if not s < e:
            raise ConsistencyError(f"stage start {s} is not before its end {e}")
    return starts


@dataclass(frozen=True)
class Density:
    grid: np.ndarray
    values: np.ndarray

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def normalized(self) -> "Density":
        return Density(self.grid, self.values / self.integral())


def uniform_grid(m: int = GRID_SIZE) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


def target_pdf(t, ends, c, h_ori):
    """Weighted sum of the base density and its truncations to each overlap."""
    t = np.asarray(t, dtype=np.float64)
    starts = stage_starts(ends, c)
    total = pdf_shift(t, h_ori)
    norm = 1.0
    for e, s in zip(ends[:-1], starts[1:]):
        w = e - s
        total = total + w * pdf_truncated(t, h_ori, s, e)
        norm += w
    return total / norm


def realized_pdf(t, steps, shifts, ends, c):
    t = np.asarray(t, dtype=np.float64)
    starts = stage_starts(ends, c)
    total = np.zeros_like(t)
    for n, h, s, e in zip(steps, shifts, starts, ends):
        total = total + n * pdf_truncated(t, h, s, e)
    return total / sum(steps)


def target_distribution(configs, c, h_ori, grid=None) -> Density:
    configs = validate_stages(configs)
    grid = uniform_grid() if grid is None else grid
    return Density(grid, target_pdf(grid, [s.e for s in configs], c, h_ori))


def realized_distribution(plan: "SchedulePlan", grid=None) -> Density:
    grid = uniform_grid() if grid is None else grid
    return Density(
        grid,
        realized_pdf(grid, [s.N for s in plan.stages], [s.h for s in plan.stages],
                     [s.e for s in plan.stages], plan.c),
    )


def jsd(p: Density, q: Density) -> float:
    """Jensen-Shannon divergence (natural log) between two gridded densities.

    Both densities are renormalised under trapezoidal quadrature first.
    """
    if p.grid.shape != q.grid.shape or not np.array_equal(p.grid, q.grid):
        raise ShapeError("densities must share an evaluation grid")
    return _jsd_values(p.grid, p.values, q.values)


def _jsd_values(grid, p, q) -> float:
    p = p / np.trapezoid(p, grid)
    q = q / np.trapezoid(q, grid)
    m = 0.5 * (p + q)
    lm = np.log(np.maximum(m, DENSITY_FLOOR))
    kl_p = np.trapezoid(p * (np.log(np.maximum(p, DENSITY_FLOOR)) - lm), grid)
    kl_q = np.trapezoid(q * (np.log(np.maximum(q, DENSITY_FLOOR)) - lm), grid)
    return float(max(0.0, 0.5 * kl_p + 0.5 * kl_q))


def discretize_timesteps(s, e, h, N) -> np.ndarray:
    """N+1 timesteps on [s, e] at equal probability mass under f_h."""
    if not 0.0 <= s < e <= 1.0:
        raise DomainError(f"invalid interval [{s}, {e}]")
    if N < 1:
        raise DomainError("need at least one step")
    lo, hi = cdf_shift(s, h), cdf_shift(e, h)
    u = lo + (np.arange(N + 1) / N) * (hi - lo)
    t = inv_cdf_shift(np.clip(u, 0.0, 1.0), h)
    t[0], t[-1] = s, e
    if np.any(np.diff(t) <= 0):
        raise DomainError("timesteps collapsed; interval too narrow for N steps")
    return t


@dataclass(frozen=True)
class StagePlan:
    N: int
    s: float
    e: float
    h: float
    timesteps: tuple[float, ...]


@dataclass(frozen=True)
class Transition:
    e: float
    s_next: float
    a: float
    b: float


@dataclass(frozen=True)
class SchedulePlan:
    stages: tuple[StagePlan, ...]
    c: float
    transitions: tuple[Transition, ...]
    jsd: float
    h_ori: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def shifts(self) -> list[float]:
        return [s.h for s in self.stages]

    @property
    def total_steps(self) -> int:
        return sum(s.N for s in self.stages)

    def to_dict(self) -> dict:
        return {
            "h_ori": self.h_ori,
            "c": self.c,
            "jsd": self.jsd,
            "stages": [
                {"N": s.N, "s": s.s, "e": s.e, "h": s.h, "timesteps": list(s.timesteps)}
                for s in self.stages
            ],
            "coefficients": [
                {"e": tr.e, "s_next": tr.s_next, "a": tr.a, "b": tr.b} for tr in self.transitions
            ],
            "config": {"N": [s.N for s in self.stages], "e": [s.e for s in self.stages]},
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchedulePlan":
        return cls(
            stages=tuple(
                StagePlan(int(s["N"]), float(s["s"]), float(s["e"]), float(s["h"]),
                          tuple(float(t) for t in s["timesteps"]))
                for s in d["stages"]
            ),
            c=float(d["c"]),
            transitions=tuple(
                Transition(float(t["e"]), float(t["s_next"]), float(t["a"]), float(t["b"]))
                for t in d["coefficients"]
            ),
            jsd=float(d["jsd"]),
            h_ori=float(d["h_ori"]),
            meta=dict(d.get("meta", {})),
        )


def plan_jsd(configs, shifts, c, h_ori, grid=None) -> float:
    configs = validate_stages(configs)
    grid = uniform_grid() if grid is None else grid
    ends = [s.e for s in configs]
    return _jsd_values(
        grid,
        target_pdf(grid, ends, c, h_ori),
        realized_pdf(grid, [s.N for s in configs], shifts, ends, c),
    )


def build_plan(configs, shifts, c, h_ori, meta=None) -> SchedulePlan:
    """Assemble a plan from explicit shifts and noise strength."""
    configs = validate_stages(configs)
    if len(shifts) != len(configs):
        raise DomainError("one shift per stage is required")
    ends = [s.e for s in configs]
    starts = stage_starts(ends, c) if len(configs) > 1 else [0.0]
    stages = tuple(
        StagePlan(cfg.N, s, cfg.e, float(h), tuple(discretize_timesteps(s, cfg.e, h, cfg.N).tolist()))
        for cfg, s, h in zip(configs, starts, shifts)
    )
    transitions = tuple(Transition(e, *injection_coefficients(e, c)) for e in ends[:-1])
    value = plan_jsd(configs, shifts, c, h_ori) if len(configs) > 1 else _single_stage_jsd(shifts[0], h_ori)
    return SchedulePlan(stages, float(c), transitions, value, float(h_ori), dict(meta or {}))


def _single_stage_jsd(h, h_ori) -> float:
    g = uniform_grid()
    return _jsd_values(g, pdf_shift(g, h_ori), pdf_shift(g, h))


def _pack(shifts, c):
    return np.log(np.r_[shifts, c])


def _unpack(x):
    x = np.exp(x)
    return x[:-1], x[-1]


def solve_ntdm(configs, h_ori: float = 3.0, *, c: float | None = None,
               grid_points: int = 7, maxiter: int = 4000) -> SchedulePlan:
    """Choose per-stage shifts (and c unless fixed) minimising the JSD.

    A coarse log-spaced grid seeds a bounded Nelder-Mead refinement in log
    coordinates. Ties resolve to the smaller c, then the smaller shifts.
    """
    configs = validate_stages(configs)
    if len(configs) < 2:
        raise DomainError("nothing to reschedule: need at least two stages")
    return _solve_cached(tuple(configs), float(h_ori), None if c is None else float(c),
                         grid_points, maxiter)


@functools.lru_cache(maxsize=64)
def _solve_cached(configs, h_ori, c_fixed, grid_points, maxiter) -> SchedulePlan:
    k = len(configs)
    grid = uniform_grid()
    ends = [s.e for s in configs]
    steps = [s.N for s in configs]
    _, c_hi = C_BOUNDS
    if c_fixed is not None and not 0.0 < c_fixed <= c_hi:
        raise DomainError(f"noise strength c must lie in (0, 1/4], got {c_fixed}")

    target_cache: dict[float, np.ndarray] = {}

    def objective(shifts, c):
        if c not in target_cache:
            target_cache[c] = target_pdf(grid, ends, c, h_ori)
        return _jsd_values(grid, target_cache[c], realized_pdf(grid, steps, shifts, ends, c))

    h_grid = np.geomspace(*H_BOUNDS, grid_points)
    c_grid = [c_fixed] if c_fixed is not None else np.geomspace(*C_BOUNDS, grid_points + 1).tolist()
    candidates = []
    for cv in c_grid:
        for hs in itertools.product(h_grid, repeat=k):
            candidates.append((objective(np.array(hs), cv), cv, hs))
    candidates.sort(key=lambda r: (r[0], r[1], r[2]))

    lo = np.log([H_BOUNDS[0]] * k + [C_BOUNDS[0]])
    hi = np.log([H_BOUNDS[1]] * k + [C_BOUNDS[1]])
    if c_fixed is not None:
        lo, hi = lo[:-1], hi[:-1]

    def f(x):
        x = np.clip(x, lo, hi)
        if c_fixed is None:
            hs, cv = _unpack(x)
        else:
            hs, cv = np.exp(x), c_fixed
        return objective(hs, float(cv))

    results = []
    for val, cv, hs in candidates[:3]:
        x0 = _pack(hs, cv) if c_fixed is None else np.log(hs)
        res = minimize(f, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"xatol": 1e-7, "fatol": 1e-13, "maxiter": maxiter,
                                "maxfev": 4 * maxiter, "adaptive": True})
        x = np.clip(res.x, lo, hi)
        hs_opt, cv_opt = (_unpack(x) if c_fixed is None else (np.exp(x), c_fixed))
        results.append((float(res.fun), float(cv_opt), tuple(hs_opt.tolist()), bool(res.success)))
    results.sort(key=lambda r: (round(r[0], 14), r[1], r[2]))
    best_val, best_c, best_h, ok = results[0]
    plan = build_plan(configs, best_h, best_c, h_ori,
                      meta={"solver": "grid+nelder-mead", "converged": ok})
    if not ok:
        raise ScheduleSolveError("Nelder-Mead did not converge within the iteration budget", best=plan)
    return plan
