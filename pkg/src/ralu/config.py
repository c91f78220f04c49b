"""Run configuration, named presets and config-file parsing."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DomainError
from .schedule import StageConfig, validate_stages


@dataclass(frozen=True)
class Preset:
    name: str
    steps: tuple[int, ...]
    ends: tuple[float, ...]
    baseline_steps: int
    # Shift and noise-strength values reported alongside these stage choices.
    reference_shifts: tuple[float, ...]
    reference_c: float


PRESETS = {
    "flux4x": Preset("flux4x", (5, 6, 7), (0.3, 0.45, 1.0), 50, (5.02, 2.59, 2.23), 0.0251),
    "flux7x": Preset("flux7x", (2, 3, 5), (0.2, 0.3, 1.0), 50, (8.14, 2.86, 2.19), 0.0255),
    "sd3-2x": Preset("sd3-2x", (5, 6, 9), (0.2, 0.3, 1.0), 28, (6.21, 2.23, 1.97), 0.0586),
    "sd3-3x": Preset("sd3-3x", (3, 3, 6), (0.25, 0.3, 1.0), 28, (6.40, 2.60, 2.23), 0.0255),
}


@dataclass(frozen=True)
class RunConfig:
    base_height: int = 32
    base_width: int = 32
    channels: int = 4
    steps: tuple[int, ...] = (5, 6, 7)
    ends: tuple[float, ...] = (0.3, 0.45, 1.0)
    ratio: float = 0.3
    h_ori: float = 3.0
    c: float | None = None
    shifts: tuple[float, ...] | None = None
    seed: int = 0
    decoder: str = "norm"
    footprint: int = 8
    canny_low: float = 0.1
    canny_high: float = 0.2
    blur_sigma: float = 1.4
    caching: float | None = None
    baseline_steps: int = 50
    sigma: float = 0.5
    target: str | None = None
    skip_injection: bool = False
    out: str | None = None

    def __post_init__(self):
        for name in ("steps", "ends", "shifts"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))
        if self.base_height < 1 or self.base_width < 1 or self.channels < 1:
            raise DomainError("grid dimensions and channels must be positive")
        if len(self.steps) != len(self.ends):
            raise DomainError("steps and ends must have the same length")
        validate_stages(self.stage_configs)
        if len(self.steps) == 1:
            raise DomainError("nothing to reschedule: a single stage is plain sampling")
        if len(self.steps) not in (2, 3):
            raise DomainError("the sampler supports two or three stages")
        if not 0.0 <= self.ratio <= 1.0:
            raise DomainError(f"ratio must lie in [0, 1], got {self.ratio}")
        if self.h_ori <= 0:
            raise DomainError("h_ori must be positive")
        if self.c is not None and not 0.0 < self.c <= 0.25:
            raise DomainError(f"c must lie in (0, 1/4], got {self.c}")
        if self.shifts is not None:
            if len(self.shifts) != len(self.steps) or min(self.shifts) <= 0:
                raise DomainError("shifts need one positive value per stage")
            if self.c is None:
                raise DomainError("explicit shifts require an explicit c")
        if self.caching is not None and not 0.0 <= self.caching < 1.0:
            raise DomainError(f"caching ratio must lie in [0, 1), got {self.caching}")
        if not 0 < self.canny_low < self.canny_high:
            raise DomainError("need 0 < canny_low < canny_high")
        if self.footprint < 1 or self.baseline_steps < 1 or self.sigma <= 0 or self.blur_sigma < 0:
            raise DomainError("footprint, baseline_steps, sigma must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def stage_configs(self) -> list[StageConfig]:
        return [StageConfig(n, e) for n, e in zip(self.steps, self.ends)]

    @property
    def n_patches(self) -> int:
        return self.base_height * self.base_width

    def replace(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("steps", "ends", "shifts"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def from_preset(name: str, **overrides) -> RunConfig:
    try:
        p = PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    cfg = RunConfig(steps=p.steps, ends=p.ends, baseline_steps=p.baseline_steps)
    return cfg.replace(**overrides)


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    preset = d.pop("preset", None)
    unknown = set(d) - _FIELDS
    if unknown:
        raise DomainError(f"unknown config keys: {sorted(unknown)}")
    base = from_preset(preset) if preset else RunConfig()
    return dataclasses.replace(base, **d)


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise DomainError("config must be a JSON object")
    return from_dict(d)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
