"""Similarity-based velocity caching within a stage.

The first two steps of a cached stage run in full. Tokens are then ranked by
the cosine similarity of those two predictions; the most similar ones hold
their step-2 velocity for the rest of the stage while the others are
recomputed. The last step of the final stage always recomputes everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

MIN_STEPS = 3


def computed_count(n_tokens: int, ratio: float) -> int:
    """Tokens recomputed on a cached step: ``floor((1 - ratio) * T)``."""
    if not 0.0 <= ratio < 1.0:
        raise DomainError(f"caching ratio must lie in [0, 1), got {ratio}")
    return int(math.floor(round((1.0 - ratio) * n_tokens, 9)))


def cosine_similarity(v_first, v_second) -> np.ndarray:
    a = np.asarray(v_first, dtype=np.float64)
    b = np.asarray(v_second, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    out = np.full(len(a), -1.0)
    out[ok] = (a[ok] * b[ok]).sum(axis=1) / (na[ok] * nb[ok])
    return out


def similarity_rank(v_first, v_second) -> np.ndarray:
    """Token indices by descending cosine similarity, ties by ascending index."""
    sim = cosine_similarity(v_first, v_second)
    return np.lexsort((np.arange(len(sim)), -sim))


@dataclass(frozen=True)
class CachePolicy:
    ratio: float = 0.4
    stages_enabled: frozenset = frozenset({2, 3})

    def __post_init__(self):
        computed_count(1, self.ratio)
        if 1 in self.stages_enabled:
            raise DomainError("stage 1 is never cached")


@dataclass
class StageCacheReport:
    stage: int
    enabled: bool
    n_tokens: int
    computed_per_step: list[int] = field(default_factory=list)
    note: str = ""

    @property
    def computed_total(self) -> int:
        return sum(self.computed_per_step)


class CachedStepper:
    """Stepper for :func:`ralu.flow.euler_integrate` applying the cache policy."""

    def __init__(self, policy: CachePolicy, stage: int, n_steps: int, n_tokens: int, final_stage: bool):
        self.policy = policy
        self.final_stage = final_stage
        self.n_steps = n_steps
        enabled = stage in policy.stages_enabled
        note = ""
        if enabled and n_steps < MIN_STEPS:
            enabled, note = False, f"stage has {n_steps} steps; caching needs at least {MIN_STEPS}"
        self.report = StageCacheReport(stage, enabled, n_tokens, note=note)
        self._history: list[np.ndarray] = []
        self._frozen: np.ndarray | None = None
        self._active: np.ndarray | None = None
        self._held: np.ndarray | None = None

    def _full_step(self, j):
        return (not self.report.enabled or j < 2
                or (self.final_stage and j == self.n_steps - 1))

    def __call__(self, j, tokens, t, model):
        if self._full_step(j):
            v = model.predict(tokens, t)
            self.report.computed_per_step.append(len(tokens))
            if self.report.enabled and j < 2:
                self._history.append(v)
                if j == 1:
                    self._decide(v)
            return v
        v = self._held.copy()
        if self._active.size:
            v[self._active] = model.predict(tokens, t, active=self._active)
        self.report.computed_per_step.append(int(self._active.size))
        return v

    def _decide(self, v_second):
        n = len(v_second)
        order = similarity_rank(self._history[0], v_second)
        n_cached = n - computed_count(n, self.policy.ratio)
        frozen = np.zeros(n, dtype=bool)
        frozen[order[:n_cached]] = True
        self._frozen = frozen
        self._active = np.flatnonzero(~frozen)
        self._held = v_second.copy()


def cached_token_steps(step_counts, token_counts, ratio: float, stages_enabled=frozenset({2, 3})):
    """Token evaluations per stage under the cache policy, from counts alone."""
    k = len(step_counts)
    out = []
    for i, (n, t) in enumerate(zip(step_counts, token_counts), start=1):
        if i not in stages_enabled or n < MIN_STEPS or ratio is None:
            out.append(n * t)
            continue
        cached_steps = n - 2 - (1 if i == k else 0)
        out.append((n - cached_steps) * t + cached_steps * computed_count(t, ratio))
    return out
