import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.spatial.distance import jensenshannon

from ralu.errors import ConsistencyError, DomainError, ShapeError
from ralu.schedule import (Density, SchedulePlan, build_plan, cdf_shift, discretize_timesteps,
                           injection_coefficients, inv_cdf_shift, jsd, pdf_shift, pdf_truncated, plan_jsd,
                           realized_pdf, solve_ntdm, stage_starts, target_pdf, uniform_grid, validate_stages)

shifts = st.floats(0.2, 20.0)
unit = st.floats(0.0, 1.0)


def test_coefficients_frozen_value():
    s, a, b = injection_coefficients(0.3, 0.25)
    assert s == pytest.approx(3 / 17, abs=1e-15)
    assert a == pytest.approx(10 / 17, abs=1e-15)
    assert b == pytest.approx(14 / 17, abs=1e-15)


@given(st.floats(1e-3, 1.0), st.floats(1e-4, 0.25))
def test_coefficient_identities(e, c):
    s, a, b = injection_coefficients(e, c)
    assert abs(a * e - s) <= 1e-12
    assert abs(b - (1 - s)) <= 1e-12
    # The mixed noise has the variance of x_s: b^2 c / a^2 == (1-e)^2.
    assert b * b * c == pytest.approx(a * a * (1 - e) ** 2, rel=1e-9, abs=1e-15)
    if e < 1:
        assert s < e


def test_coefficients_domain():
    for e, c in ((0.3, 0.0), (0.3, 0.3), (0.0, 0.1), (1.2, 0.1)):
        with pytest.raises(DomainError):
            injection_coefficients(e, c)
    assert injection_coefficients(1.0, 0.1) == (1.0, 1.0, 0.0)


@given(shifts)
def test_pdf_normalizes_quad(h):
    val, _ = integrate.quad(lambda t: float(pdf_shift(t, h)), 0, 1, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-9)


@given(shifts, unit, unit)
def test_truncated_normalizes(h, a, b):
    s, e = sorted((a, b))
    if e - s < 1e-3:
        return
    val, _ = integrate.quad(lambda t: float(pdf_truncated(t, h, s, e)), s, e, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-8)


@given(shifts, unit)
def test_cdf_roundtrip(h, u):
    assert abs(cdf_shift(inv_cdf_shift(u, h), h) - u) <= 1e-12
    assert abs(inv_cdf_shift(cdf_shift(u, h), h) - u) <= 1e-12


def test_cdf_is_integral_of_pdf():
    for h in (0.5, 3.0, 9.0):
        for t in (0.1, 0.5, 0.9):
            val, _ = integrate.quad(lambda x: float(pdf_shift(x, h)), 0, t)
            assert float(cdf_shift(t, h)) == pytest.approx(val, abs=1e-12)


def test_h_one_is_uniform():
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(pdf_shift(t, 1.0), 1.0)
    np.testing.assert_allclose(cdf_shift(t, 1.0), t)


def test_bad_inputs():
    with pytest.raises(DomainError):
        pdf_shift(0.5, 0.0)
    with pytest.raises(DomainError):
        cdf_shift(1.5, 2.0)
    with pytest.raises(DomainError):
        pdf_truncated(0.5, 2.0, 0.6, 0.6)


def _random_density(seed):
    g = uniform_grid(512)
    r = np.random.default_rng(seed)
    return Density(g, np.exp(r.normal(size=g.size).cumsum() / 20)).normalized()


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_jsd_properties(s1, s2):
    p, q = _random_density(s1), _random_density(s2)
    assert jsd(p, q) == pytest.approx(jsd(q, p), abs=1e-15)
    assert jsd(p, p) == 0.0
    assert 0.0 <= jsd(p, q) <= math.log(2)


def test_jsd_matches_scipy():
    p, q = _random_density(1), _random_density(2)
    w = np.full(p.grid.size, p.grid[1] - p.grid[0])
    w[[0, -1]] /= 2
    ref = jensenshannon(p.values * w, q.values * w) ** 2
    assert jsd(p, q) == pytest.approx(ref, rel=1e-9)


def test_jsd_disjoint_is_ln2():
    g = uniform_grid(4001)
    p = Density(g, (g < 0.5).astype(float))
    q = Density(g, (g > 0.5).astype(float))
    assert jsd(p, q) == pytest.approx(math.log(2), abs=1e-3)


def test_jsd_grid_mismatch():
    with pytest.raises(ShapeError):
        jsd(_random_density(0), Density(uniform_grid(100), np.ones(100)))


@given(shifts, unit, unit, st.integers(1, 40))
def test_discretize_equal_mass(h, a, b, n):
    s, e = sorted((a, b))
    if e - s < 0.05:
        return
    t = discretize_timesteps(s, e, h, n)
    assert t[0] == s and t[-1] == e and len(t) == n + 1
    assert np.all(np.diff(t) > 0)
    np.testing.assert_allclose(np.diff(cdf_shift(t, h)), (cdf_shift(e, h) - cdf_shift(s, h)) / n, atol=1e-12)


def test_larger_shift_front_loads_steps():
    t1 = discretize_timesteps(0, 1, 1.0, 10)
    t5 = discretize_timesteps(0, 1, 5.0, 10)
    assert np.all(t5[1:-1] < t1[1:-1])


def test_validate_stages():
    with pytest.raises(DomainError):
        validate_stages([(5, 0.5), (5, 0.4), (5, 1.0)])
    with pytest.raises(DomainError):
        validate_stages([(5, 0.5), (5, 0.9)])
    with pytest.raises(DomainError):
        validate_stages([(0, 1.0)])
    with pytest.raises(DomainError):
        validate_stages([])


def test_stage_starts_uses_coefficients():
    starts = stage_starts([0.3, 0.45, 1.0], 0.25)
    assert starts[0] == 0.0
    assert starts[1] == pytest.approx(3 / 17)
    assert starts[2] == injection_coefficients(0.45, 0.25)[0]
    # Unvalidated ends where a restart lands past its own stage end.
    with pytest.raises(ConsistencyError):
        stage_starts([0.9, 0.2, 1.0], 0.25)


def test_target_and_realized_are_densities():
    g = uniform_grid()
    ends = [0.3, 0.45, 1.0]
    assert np.trapezoid(target_pdf(g, ends, 0.05, 3.0), g) == pytest.approx(1.0, abs=1e-3)
    assert np.trapezoid(realized_pdf(g, [5, 6, 7], [4, 2, 2], ends, 0.05), g) == pytest.approx(1.0, abs=1e-3)


def test_plan_roundtrip():
    plan = build_plan([(5, 0.3), (6, 0.45), (7, 1.0)], [5.02, 2.59, 2.23], 0.0251, 3.0)
    again = SchedulePlan.from_dict(plan.to_dict())
    assert again == plan
    assert plan.total_steps == 18
    assert plan.stages[1].s == plan.transitions[0].s_next
    assert np.isfinite(plan.jsd)
    assert plan.jsd == plan_jsd([(5, 0.3), (6, 0.45), (7, 1.0)], [5.02, 2.59, 2.23], 0.0251, 3.0)


def test_solve_rejects_single_stage():
    with pytest.raises(DomainError, match="nothing to reschedule"):
        solve_ntdm([(10, 1.0)])


def test_solve_two_stage_improves_on_grid_start():
    configs = [(4, 0.4), (8, 1.0)]
    plan = solve_ntdm(configs, 3.0)
    assert plan.meta["converged"]
    assert plan.jsd <= plan_jsd(configs, [3.0, 3.0], 0.1, 3.0)
    assert 1e-4 <= plan.c <= 0.25
    assert all(1.0 <= h <= 16.0 for h in plan.shifts)


def test_solve_fixed_c_keeps_c():
    plan = solve_ntdm([(4, 0.4), (8, 1.0)], 3.0, c=0.2)
    assert plan.c == 0.2
