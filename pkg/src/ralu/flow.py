"""Rectified-flow integration and the analytic Gaussian backend.

The backend treats every high-res latent cell as an independent scalar flow
from ``x0 ~ N(0, 1)`` to ``x1 ~ N(mu, sigma^2)``, so the exact velocity and
the conditional laws are available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import DomainError, ShapeError
from .latent_grid import _DC, _DR, LatentGrid, Level, TokenSet


class VelocityModel(Protocol):
    def predict(self, tokens: TokenSet, t: float, active: np.ndarray | None = None) -> np.ndarray:
        """Velocities ``(len(active) or T, channels)`` for the requested tokens."""
        ...


class CellwiseModel(Protocol):
    """A model over full HIGH grids whose output at a cell depends only on that cell."""

    def velocity_cells(self, values: np.ndarray, t: float, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True, eq=False)
class GaussianTarget:
    mu: np.ndarray  # (channels, H, W) at high resolution
    sigma: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise DomainError("sigma must be positive")
        mu = np.array(self.mu, dtype=np.float64)
        if mu.ndim == 2:
            mu = mu[None]
        if mu.ndim != 3:
            raise ShapeError("mu must be (channels, H, W)")
        mu.flags.writeable = False
        object.__setattr__(self, "mu", mu)

    @property
    def shape(self):
        return self.mu.shape


def _gain(t, sigma):
    return (t * sigma**2 - (1.0 - t)) / ((1.0 - t) ** 2 + t**2 * sigma**2)


def gaussian_velocity(x, t: float, target_or_mu, sigma: float | None = None):
    """Exact ``E[x1 - x0 | x_t = x]`` per cell.

    ``target_or_mu`` is a :class:`GaussianTarget` or a mean array
    broadcastable against ``x`` (then ``sigma`` is required).
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    if isinstance(target_or_mu, GaussianTarget):
        mu, sigma = target_or_mu.mu, target_or_mu.sigma
    else:
        mu = np.asarray(target_or_mu, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return mu + _gain(t, sigma) * (x - t * mu)


def gaussian_posterior_mean(x, t: float, mu, sigma: float):
    """Closed-form ``E[x1 | x_t = x]``."""
    d = (1.0 - t) ** 2 + t**2 * sigma**2
    return mu + t * sigma**2 * (np.asarray(x, dtype=np.float64) - t * mu) / d


def gaussian_conditional_law(t: float, x1):
    """Mean and variance of ``x_t | x1``: ``N(t*x1, (1-t)^2 I)``."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return t * np.asarray(x1, dtype=np.float64), (1.0 - t) ** 2


def gaussian_marginal_law(t: float, target: GaussianTarget):
    """Mean and variance of ``x_t`` with ``x1`` drawn from the target."""
    return t * target.mu, (1.0 - t) ** 2 + t**2 * target.sigma**2


class GaussianModel:
    """Cellwise exact velocity for a :class:`GaussianTarget`."""

    def __init__(self, target: GaussianTarget):
        self.target = target

    def velocity_cells(self, values, t, rows, cols):
        mu = self.target.mu[:, rows, cols].T
        return gaussian_velocity(values, t, mu, self.target.sigma)

    def velocity_grid(self, grid: LatentGrid, t: float) -> np.ndarray:
        if grid.shape != self.target.shape:
            raise ShapeError(f"grid {grid.shape} does not match target {self.target.shape}")
        return gaussian_velocity(grid.values, t, self.target)


class MixedVelocityAdapter:
    """Evaluate a cellwise HIGH-grid model on a mixed-resolution token set.

    A LOW token is evaluated as four replicated children and receives the
    mean of their velocities; a HIGH token receives its own cell's velocity.
    Only ``active`` tokens are evaluated, so skipping tokens changes nothing
    about the values returned for the others.
    """

    def __init__(self, model: CellwiseModel):
        self.model = model
        self.tokens_evaluated = 0

    def predict(self, tokens: TokenSet, t: float, active=None) -> np.ndarray:
        idx = np.arange(len(tokens)) if active is None else np.asarray(active, dtype=np.int64)
        self.tokens_evaluated += idx.size
        out = np.empty((idx.size, tokens.channels))
        low = tokens.levels[idx] == Level.LOW
        li, hi = idx[low], idx[~low]
        if li.size:
            rows = (2 * tokens.rows[li, None] + _DR).ravel()
            cols = (2 * tokens.cols[li, None] + _DC).ravel()
            vals = np.repeat(tokens.values[li], 4, axis=0)
            v = self.model.velocity_cells(vals, t, rows, cols)
            out[low] = v.reshape(li.size, 4, -1).mean(axis=1)
        if hi.size:
            out[~low] = self.model.velocity_cells(tokens.values[hi], t, tokens.rows[hi], tokens.cols[hi])
        return out


def mixed_velocity_adapter(model: CellwiseModel) -> MixedVelocityAdapter:
    return MixedVelocityAdapter(model)


class ConstantVelocity:
    """Same velocity for every token; handy for integrator checks."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=np.float64)

    def predict(self, tokens, t, active=None):
        n = len(tokens) if active is None else len(active)
        return np.broadcast_to(self.v, (n, tokens.channels)).copy()


Stepper = Callable[[int, TokenSet, float, VelocityModel], np.ndarray]


def euler_integrate(x: TokenSet, model: VelocityModel, timesteps, stepper: Stepper | None = None,
                    on_step: Callable[[int, float, TokenSet], None] | None = None) -> TokenSet:
    """Explicit Euler: ``x_{j+1} = x_j + (t_{j+1} - t_j) * v(x_j, t_j)``.

    ``stepper(j, x, t, model)`` may replace the plain ``model.predict`` call
    (the caching policy uses this hook).
    """
    ts = np.asarray(timesteps, dtype=np.float64)
    if ts.ndim != 1 or ts.size == 0:
        raise DomainError("need a non-empty 1-D timestep sequence")
    if np.any(np.diff(ts) <= 0):
        raise DomainError("timesteps must be strictly increasing")
    for j in range(ts.size - 1):
        t0, t1 = float(ts[j]), float(ts[j + 1])
        v = stepper(j, x, t0, model) if stepper is not None else model.predict(x, t0)
        x = x.with_values(x.values + (t1 - t0) * v)
        if on_step is not None:
            on_step(j, t1, x)
    return x


def euler_moments(mean0, var0, timesteps, mu, sigma):
    """Propagate mean and variance through Euler steps of the Gaussian flow.

    The Gaussian velocity is affine in ``x``, so the Euler map is affine and
    moments propagate exactly. Used as the discrete-time oracle for sampler
    outputs.
    """
    m, v = np.asarray(mean0, dtype=np.float64), np.asarray(var0, dtype=np.float64)
    ts = np.asarray(timesteps, dtype=np.float64)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        k = _gain(t0, sigma)
        dt = t1 - t0
        m = (1.0 + dt * k) * m + dt * mu * (1.0 - k * t0)
        v = (1.0 + dt * k) ** 2 * v
    return m, v
