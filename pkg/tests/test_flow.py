import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from ralu.errors import DomainError, ShapeError
from ralu.flow import (ConstantVelocity, GaussianModel, GaussianTarget, MixedVelocityAdapter, euler_integrate,
                       euler_moments, gaussian_conditional_law, gaussian_marginal_law, gaussian_posterior_mean,
                       gaussian_velocity)
from ralu.latent_grid import LatentGrid, Level, TokenSet, upsample_selected
from ralu.schedule import discretize_timesteps


def _regression_velocity(x, t, mu, sigma):
    # E[v | x_t] from the joint Gaussian of (x_t, v) with x0 ~ N(0,1), x1 ~ N(mu, sigma^2).
    cov_v_xt = t * sigma**2 - (1 - t)
    var_xt = t**2 * sigma**2 + (1 - t) ** 2
    return mu + cov_v_xt / var_xt * (x - t * mu)


@given(st.floats(-5, 5), st.floats(0.0, 0.999), st.floats(-3, 3), st.floats(0.1, 3))
def test_velocity_matches_joint_gaussian_regression(x, t, mu, sigma):
    assert gaussian_velocity(x, t, mu, sigma) == pytest.approx(_regression_velocity(x, t, mu, sigma),
                                                               rel=1e-10, abs=1e-10)


@given(st.floats(-3, 3), st.floats(0.0, 0.99), st.floats(-2, 2), st.floats(0.1, 2))
def test_tweedie_identity(x, t, mu, sigma):
    v = gaussian_velocity(x, t, mu, sigma)
    assert x + (1 - t) * v == pytest.approx(gaussian_posterior_mean(x, t, mu, sigma), abs=1e-10)


@pytest.mark.parametrize("sigma", [0.3, 0.5, 1.7])
def test_exact_flow_maps_noise_to_target(sigma):
    mu = 2.0
    for x0 in (-1.5, 0.0, 0.7):
        sol = solve_ivp(lambda t, y: gaussian_velocity(y, t, mu, sigma), (0, 1), [x0], rtol=1e-11, atol=1e-12)
        assert sol.y[0, -1] == pytest.approx(mu + sigma * x0, abs=1e-7)


def test_laws():
    target = GaussianTarget(np.ones((1, 2, 2)), 0.5)
    m, v = gaussian_marginal_law(0.4, target)
    np.testing.assert_allclose(m, 0.4)
    assert v == pytest.approx(0.36 + 0.16 * 0.25)
    m, v = gaussian_conditional_law(0.25, np.array([2.0]))
    assert m[0] == 0.5 and v == 0.5625
    with pytest.raises(DomainError):
        gaussian_conditional_law(1.5, 0.0)


def test_target_validation():
    with pytest.raises(DomainError):
        GaussianTarget(np.zeros((1, 2, 2)), 0.0)
    with pytest.raises(ShapeError):
        GaussianTarget(np.zeros(3))
    assert GaussianTarget(np.zeros((4, 6))).shape == (1, 4, 6)


def test_euler_matches_moment_recursion_pointwise():
    mu = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    target = GaussianTarget(mu, 0.5)
    x0 = np.array([[[0.3, -1.0], [2.0, 0.1]]])
    ts = discretize_timesteps(0, 1, 3.0, 12)
    out = euler_integrate(TokenSet.from_grid(LatentGrid(x0, Level.HIGH)),
                          MixedVelocityAdapter(GaussianModel(target)), ts)
    # Zero initial variance turns the moment recursion into the Euler map itself.
    m, v = euler_moments(x0, np.zeros_like(x0), ts, mu, 0.5)
    np.testing.assert_allclose(out.to_grid().values, m, atol=1e-12)
    assert np.all(v == 0)


def test_euler_moments_converge_to_target():
    ts = np.linspace(0, 1, 20001)
    m, v = euler_moments(0.0, 1.0, ts, 2.0, 0.5)
    assert m == pytest.approx(2.0, abs=1e-3)
    assert v == pytest.approx(0.25, rel=1e-3)


def test_euler_is_first_order():
    errs = []
    for n in (50, 100, 200):
        _, v = euler_moments(0.0, 1.0, np.linspace(0, 1, n + 1), 2.0, 0.5)
        errs.append(abs(v - 0.25))
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)


def test_adapter_averages_children():
    mu = np.arange(16.0).reshape(1, 4, 4)
    model = GaussianModel(GaussianTarget(mu, 0.5))
    adapter = MixedVelocityAdapter(model)
    low = LatentGrid(np.full((1, 2, 2), 0.3), Level.LOW)
    tokens = upsample_selected(TokenSet.from_grid(low), [1])
    v = adapter.predict(tokens, 0.4)
    full = model.velocity_grid(tokens.to_grid(), 0.4)
    # Token 0 is LOW patch (0, 0); children of patch 1 are the last four.
    assert v[0, 0] == pytest.approx(full[0, :2, :2].mean())
    np.testing.assert_allclose(v[-4:, 0], full[0, :2, 2:].ravel())
    sub = adapter.predict(tokens, 0.4, active=np.array([4, 0]))
    np.testing.assert_array_equal(sub, v[[4, 0]])
    assert adapter.tokens_evaluated == len(tokens) + 2


def test_velocity_grid_shape_check():
    model = GaussianModel(GaussianTarget(np.zeros((1, 4, 4))))
    with pytest.raises(ShapeError):
        model.velocity_grid(LatentGrid(np.zeros((1, 2, 2)), Level.HIGH), 0.5)


def test_euler_integrate_contract():
    tokens = TokenSet.from_grid(LatentGrid(np.zeros((2, 1, 1)), Level.LOW))
    out = euler_integrate(tokens, ConstantVelocity([1.0, -2.0]), [0.0, 0.25, 0.5])
    np.testing.assert_allclose(out.values, [[0.5, -1.0]])
    assert euler_integrate(tokens, ConstantVelocity([1.0, 1.0]), [0.3]) is tokens
    with pytest.raises(DomainError):
        euler_integrate(tokens, ConstantVelocity([1.0, 1.0]), [0.5, 0.5])
    seen = []
    euler_integrate(tokens, ConstantVelocity([1.0, 1.0]), [0, 0.5, 1], on_step=lambda j, t, x: seen.append((j, t)))
    assert seen == [(0, 0.5), (1, 1.0)]
