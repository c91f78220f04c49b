import numpy as np
import pytest
from hypothesis import given, strategies as st

from ralu.errors import DomainError, ShapeError
from ralu.latent_grid import BlockCovariance, LatentGrid, Level, TokenSet
from ralu.noise import (InjectionSpec, block_alpha, correlate_blocks, inject, inject_tokens, rng_for,
                        sample_correlated, verify_injection)
from ralu.schedule import injection_coefficients


@given(st.floats(0.0, 0.25))
def test_alpha_squares_to_target_covariance(c):
    sigma = BlockCovariance.contiguous(4).dense()
    m = np.eye(4) + block_alpha(c) * sigma
    np.testing.assert_allclose(m @ m, np.eye(4) - c * sigma, atol=1e-12)


def test_alpha_domain():
    with pytest.raises(DomainError):
        block_alpha(0.26)
    with pytest.raises(DomainError):
        block_alpha(-0.01)


def test_correlated_covariance_monte_carlo():
    c = 0.2
    eps = rng_for(0, "noise").standard_normal((200_000, 4))
    z = correlate_blocks(eps, c, axis=1)
    cov = np.cov(z.T)
    expected = np.eye(4) - c * np.ones((4, 4))
    np.testing.assert_allclose(cov, expected, atol=0.01)
    # c = 1/4 makes each block sum exactly zero (Sigma' is singular there).
    z = correlate_blocks(eps[:10], 0.25, axis=1)
    np.testing.assert_allclose(z.sum(axis=1), 0.0, atol=1e-12)


def test_sample_correlated_layouts_agree():
    a = sample_correlated((2, 4, 6), 0.1, seed=3)
    assert a.shape == (2, 4, 6)
    np.testing.assert_array_equal(a, sample_correlated((2, 4, 6), 0.1, seed=3))
    cov = BlockCovariance.for_grid(4, 6)
    b = sample_correlated((2, 24), 0.1, seed=3, cov=cov)
    # Same draws, same transform, different memory layout.
    np.testing.assert_allclose(a.reshape(2, 24), b, atol=1e-12)
    with pytest.raises(ShapeError):
        sample_correlated((2, 3, 4), 0.1, seed=0)


def test_streams_are_distinct_and_repeatable():
    a = rng_for(5, "noise", 1).standard_normal(4)
    np.testing.assert_array_equal(a, rng_for(5, "noise", 1).standard_normal(4))
    assert not np.allclose(a, rng_for(5, "noise", 2).standard_normal(4))
    assert not np.allclose(a, rng_for(5, "init", 1).standard_normal(4))
    assert not np.allclose(a, rng_for(6, "noise", 1).standard_normal(4))


def test_spec_consistency():
    spec = InjectionSpec.from_transition(0.3, 0.25)
    assert (spec.s_next, spec.a, spec.b) == injection_coefficients(0.3, 0.25)
    with pytest.raises(DomainError):
        InjectionSpec(0.3, 0.25, 0.2, spec.a, spec.b)


@given(st.floats(0.05, 0.95), st.floats(1e-4, 0.25))
def test_isotropic_renoise_lands_on_trajectory(e, c):
    # Variance of a token already isotropic at e after a*x + b*sqrt(1-c)*eps.
    s, a, b = injection_coefficients(e, c)
    assert a * a * (1 - e) ** 2 + b * b * (1 - c) == pytest.approx((1 - s) ** 2, rel=1e-10)


def test_inject_grid_shapes():
    spec = InjectionSpec.from_transition(0.4, 0.1)
    up = np.zeros((2, 4, 4))
    out, s = inject(up, spec)
    assert out.shape == up.shape and s == spec.s_next


def test_inject_tokens_moments():
    # Constant data point, so every patch is an independent replicate.
    e, c, x1, side = 0.4, 0.1, 1.5, 120
    spec = InjectionSpec.from_transition(e, c)
    s = spec.s_next
    x = e * x1 + (1 - e) * np.random.default_rng(0).normal(size=(1, side, side))
    tokens = TokenSet.from_grid(LatentGrid(x, Level.LOW))
    promote = np.arange(0, side * side, 2)
    out = inject_tokens(tokens, promote, spec, rng_for(0, "noise"))
    stay = out.values[: side * side - promote.size, 0]
    children = out.values[side * side - promote.size:, 0].reshape(-1, 4)
    m = len(children)
    tol = 5 * np.sqrt(2 / m)
    assert abs(stay.var() / (1 - s) ** 2 - 1) < tol
    assert abs(children.var(axis=0).mean() / (1 - s) ** 2 - 1) < tol
    assert abs(children.mean() - s * x1) < 5 * (1 - s) / np.sqrt(m)
    corr = np.corrcoef(children.T)
    assert np.abs(corr[np.triu_indices(4, 1)]).max() < 5 / np.sqrt(m)


def test_inject_tokens_skip_leaves_values():
    tokens = TokenSet.from_grid(LatentGrid(np.arange(4.0).reshape(1, 2, 2), Level.LOW))
    out = inject_tokens(tokens, [2], InjectionSpec.from_transition(0.5, 0.2), rng_for(0, "noise"), skip=True)
    np.testing.assert_array_equal(out.values[:, 0], [0, 1, 3, 2, 2, 2, 2])


def test_verify_injection_small_run():
    x1 = np.linspace(0, 1, 16).reshape(4, 4)
    rep = verify_injection(x1, 0.3, 0.0251, n_samples=5000, seed=1)
    assert rep.passed, rep.summary_line()
    assert rep.row("injected", "within_block_corr_max").status == "pass"
    assert rep.row("skipped", "within_block_corr_max").status == "xfail"
    assert rep.row("skipped", "within_block_corr_mean").observed > 0.95
    assert rep.summary_line().startswith("PASS")


def test_verify_injection_skip_mode_and_floor():
    x1 = np.zeros((2, 2))
    rep = verify_injection(x1, 0.3, 0.1, n_samples=2000, skip_injection=True)
    assert {r.arm for r in rep.rows} == {"skipped"}
    with pytest.raises(DomainError, match="power"):
        verify_injection(x1, 0.3, 0.1, n_samples=100)
    with pytest.raises(ShapeError):
        verify_injection(np.zeros((1, 2, 2)), 0.3, 0.1, n_samples=2000)


def test_unknown_stream_rejected():
    with pytest.raises(DomainError):
        rng_for(0, "edges")
