"""Region-adaptive latent upsampling for mixed-resolution rectified-flow sampling."""

from .config import PRESETS, RunConfig, from_preset, load_config
from .cost import CostModel, estimate_cost, token_counts, token_steps
from .flow import GaussianModel, GaussianTarget, MixedVelocityAdapter, euler_integrate, euler_moments
from .latent_grid import LatentGrid, Level, TokenSet, upsample_nn, upsample_selected
from .noise import InjectionSpec, inject_tokens, verify_injection
from .pipeline import RunReport, run_fullres_baseline, run_ralu, run_timing_sweep
from .schedule import SchedulePlan, StageConfig, injection_coefficients, jsd, solve_ntdm

__all__ = [
    "PRESETS", "RunConfig", "from_preset", "load_config",
    "CostModel", "estimate_cost", "token_counts", "token_steps",
    "GaussianModel", "GaussianTarget", "MixedVelocityAdapter", "euler_integrate", "euler_moments",
    "LatentGrid", "Level", "TokenSet", "upsample_nn", "upsample_selected",
    "InjectionSpec", "inject_tokens", "verify_injection",
    "RunReport", "run_fullres_baseline", "run_ralu", "run_timing_sweep",
    "SchedulePlan", "StageConfig", "injection_coefficients", "jsd", "solve_ntdm",
]
