"""Token and compute accounting for mixed-resolution sampling."""

from __future__ import annotations

from dataclasses import dataclass

from .caching import cached_token_steps, computed_count
from .errors import DomainError
from .region_select import topk_count


@dataclass(frozen=True)
class TokenCounts:
    full: tuple[int, ...]
    cached: tuple[int | None, ...]


def token_counts(base_shape, ratio: float, caching_ratio: float | None = None, n_stages: int = 3) -> TokenCounts:
    """Tokens per stage: ``P``, ``P + 3 * ceil(ratio * P)``, ``4P``.

    ``cached`` holds the per-step count on cached steps (``None`` for
    stage 1, which is never cached, or when caching is off).
    """
    p = int(base_shape[0]) * int(base_shape[1])
    if n_stages == 3:
        full = (p, p + 3 * topk_count(ratio, p), 4 * p)
    elif n_stages == 2:
        full = (p, 4 * p)
    else:
        raise DomainError("token accounting supports two or three stages")
    cached = tuple(None if (i == 0 or caching_ratio is None) else computed_count(t, caching_ratio)
                   for i, t in enumerate(full))
    return TokenCounts(full, cached)


def token_steps(step_counts, counts: TokenCounts, caching_ratio: float | None = None,
                baseline_steps: int = 50) -> tuple[int, float]:
    """Total token evaluations and the reduction factor vs. a full-res run."""
    if len(step_counts) != len(counts.full):
        raise DomainError("one step count per stage is required")
    if caching_ratio is None:
        per_stage = [n * t for n, t in zip(step_counts, counts.full)]
    else:
        per_stage = cached_token_steps(step_counts, counts.full, caching_ratio)
    total = sum(per_stage)
    base = baseline_steps * counts.full[-1]
    return total, (base / total if total else float("inf"))


@dataclass(frozen=True)
class CostModel:
    alpha: float = 1.0
    beta: float = 0.0
    t_aux: int = 0
    decoder_cost: float = 0.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.t_aux, self.decoder_cost) < 0:
            raise DomainError("cost model parameters must be nonnegative")

    def step_cost(self, n_tokens: int) -> float:
        n = n_tokens + self.t_aux
        return self.alpha * n + self.beta * n * n


@dataclass(frozen=True)
class StageCost:
    stage: int
    steps: int
    tokens: int
    cost: float
    share: float


@dataclass(frozen=True)
class CostBreakdown:
    stages: tuple[StageCost, ...]
    decoder_cost: float
    total: float

    @property
    def denoise_total(self) -> float:
        return self.total - self.decoder_cost

    @property
    def decoder_share(self) -> float:
        return self.decoder_cost / self.total if self.total else 0.0

    def rows(self):
        out = [(s.stage, s.steps, s.tokens, s.cost, s.share) for s in self.stages]
        out.append(("decoder", 1 if self.decoder_cost else 0, 0, self.decoder_cost, self.decoder_share))
        return out


def estimate_cost(step_counts, counts: TokenCounts, model: CostModel,
                  caching_ratio: float | None = None) -> CostBreakdown:
    """Per-stage cost from per-step token counts, plus the decoder once."""
    k = len(step_counts)
    costs = []
    for i, (n, t) in enumerate(zip(step_counts, counts.full), start=1):
        c = n * model.step_cost(t)
        if caching_ratio is not None and i > 1 and n >= 3:
            cached_steps = n - 2 - (1 if i == k else 0)
            tc = computed_count(t, caching_ratio)
            c = (n - cached_steps) * model.step_cost(t) + cached_steps * model.step_cost(tc)
        costs.append((i, n, t, c))
    total = sum(c for *_, c in costs) + model.decoder_cost
    stages = tuple(StageCost(i, n, t, c, c / total if total else 0.0) for i, n, t, c in costs)
    return CostBreakdown(stages, model.decoder_cost, total)
