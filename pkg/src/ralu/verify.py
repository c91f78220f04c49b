"""Deterministic property checks and small Monte-Carlo oracles for ``ralu verify``.

Each check returns :class:`~ralu.noise.CheckRow` entries so the CLI can write
one CSV with injection, schedule and flow rows together.
"""

from __future__ import annotations

import math

import numpy as np

from .flow import (GaussianModel, GaussianTarget, MixedVelocityAdapter, euler_integrate, euler_moments,
                   gaussian_marginal_law, gaussian_posterior_mean, gaussian_velocity)
from .latent_grid import LatentGrid, Level, TokenSet
from .noise import CheckRow, rng_for
from .schedule import (Density, cdf_shift, discretize_timesteps, injection_coefficients, inv_cdf_shift,
                       jsd, pdf_shift, pdf_truncated, uniform_grid)


def _row(arm, stat, expected, observed, tol, ok=None):
    err = abs(observed - expected)
    ok = err <= tol if ok is None else ok
    return CheckRow(arm, stat, float(expected), float(observed), float("nan"), f"<= {tol:g}",
                    "pass" if ok else "fail")


def schedule_checks(seed: int = 0) -> list[CheckRow]:
    rows = []
    es = np.linspace(0.05, 0.95, 10)
    cs = np.linspace(0.025, 0.25, 10)
    worst_s = worst_b = 0.0
    strict = True
    for e in es:
        for c in cs:
            s, a, b = injection_coefficients(e, c)
            worst_s = max(worst_s, abs(a * e - s))
            worst_b = max(worst_b, abs(b - (1 - s)))
            strict &= s < e
    rows.append(_row("schedule", "coef_a_e_minus_s_max", 0.0, worst_s, 1e-12))
    rows.append(_row("schedule", "coef_b_minus_1_minus_s_max", 0.0, worst_b, 1e-12))
    rows.append(_row("schedule", "coef_s_below_e", 1.0, float(strict), 0.0))

    t = uniform_grid(200_001)
    worst = 0.0
    for h in (0.5, 1.0, 2.0, 5.0, 10.0):
        worst = max(worst, abs(np.trapezoid(pdf_shift(t, h), t) - 1.0))
        for s, e in ((0.0, 1.0), (0.0, 0.3), (0.2, 0.45), (0.4, 0.8), (0.7, 1.0)):
            tt = np.linspace(s, e, 200_001)
            worst = max(worst, abs(np.trapezoid(pdf_truncated(tt, h, s, e), tt) - 1.0))
    rows.append(_row("schedule", "pdf_normalization_max", 0.0, worst, 1e-6))

    u = np.linspace(0.0, 1.0, 1001)
    rt = max(float(np.abs(cdf_shift(inv_cdf_shift(u, h), h) - u).max()) for h in (0.5, 1.0, 3.0, 16.0))
    rows.append(_row("schedule", "cdf_roundtrip_max", 0.0, rt, 1e-12))

    rng = rng_for(seed, "verify", 2)
    grid = uniform_grid()
    asym = selfd = over = 0.0
    for _ in range(20):
        p = Density(grid, np.exp(rng.normal(size=grid.size).cumsum() / 40)).normalized()
        q = Density(grid, np.exp(rng.normal(size=grid.size).cumsum() / 40)).normalized()
        asym = max(asym, abs(jsd(p, q) - jsd(q, p)))
        selfd = max(selfd, abs(jsd(p, p)))
        over = max(over, jsd(p, q) - math.log(2))
    rows.append(_row("schedule", "jsd_asymmetry_max", 0.0, asym, 1e-12))
    rows.append(_row("schedule", "jsd_self_max", 0.0, selfd, 1e-12))
    rows.append(_row("schedule", "jsd_excess_over_ln2", 0.0, over, 0.0, ok=over <= 0.0))
    return rows


def flow_checks(seed: int = 0, n_samples: int = 4000) -> list[CheckRow]:
    rows = []
    sigma = 0.5
    mu = np.linspace(1.0, 3.0, 16).reshape(1, 4, 4)
    rng = rng_for(seed, "verify", 3)

    # Tweedie identity: x + (1 - t) v == E[x1 | x_t].
    worst = 0.0
    for t in (0.1, 0.3, 0.6, 0.9):
        x = rng.normal(size=mu.shape)
        v = gaussian_velocity(x, t, mu, sigma)
        worst = max(worst, float(np.abs(x + (1 - t) * v - gaussian_posterior_mean(x, t, mu, sigma)).max()))
    rows.append(_row("flow", "tweedie_identity_max", 0.0, worst, 1e-12))

    # The marginal law is transported by the velocity: d var / dt = 2 k var.
    target = GaussianTarget(mu, sigma)
    worst = 0.0
    dt = 1e-6
    for t in np.linspace(0.05, 0.95, 10):
        _, vm = gaussian_marginal_law(t, target)
        _, vp = gaussian_marginal_law(t + dt, target)
        _, vn = gaussian_marginal_law(t - dt, target)
        k = float(gaussian_velocity(1.0, t, 0.0, sigma))
        worst = max(worst, abs((vp - vn) / (2 * dt) - 2 * k * vm))
    rows.append(_row("flow", "transport_variance_max", 0.0, worst, 1e-6))

    # Euler output vs the exact discrete moment recursion.
    adapter = MixedVelocityAdapter(GaussianModel(target))
    ts = discretize_timesteps(0.0, 1.0, 3.0, 10)
    finals = []
    for i in range(n_samples):
        x0 = rng_for(seed, "verify", 4, i).standard_normal(mu.shape)
        out = euler_integrate(TokenSet.from_grid(LatentGrid(x0, Level.HIGH)), adapter, ts)
        finals.append(out.to_grid().values)
    finals = np.stack(finals)
    m_exp, v_exp = euler_moments(np.zeros_like(mu), np.ones_like(mu), ts, mu, sigma)
    z_mean = float(np.abs((finals.mean(0) - m_exp) / np.sqrt(v_exp / n_samples)).max())
    rel_var = float(np.abs(finals.var(0, ddof=1) / v_exp - 1).max())
    rows.append(CheckRow("flow", "euler_mean_z_max", 0.0, z_mean, z_mean, "<= 4.5",
                         "pass" if z_mean <= 4.5 else "fail"))
    tol = 5 * math.sqrt(2.0 / n_samples)
    rows.append(CheckRow("flow", "euler_var_rel_max", 0.0, rel_var, rel_var / math.sqrt(2.0 / n_samples),
                         f"<= {tol:.4g}", "pass" if rel_var <= tol else "fail"))
    return rows
