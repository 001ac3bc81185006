import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from misspec.errors import AbsoluteContinuityError, InvalidMixingError, SamplingError
from misspec.measures import (
    DensityHandle,
    MixingDistribution,
    convex_combination,
    check_absolute_continuity,
    default_grid,
    gauss_legendre_grid,
    integrate,
    laplace_density,
    mc_expectation,
    mixture_density,
    mixture_envelopes,
    normal_density,
    normal_location_family,
    normal_sampler,
    q_of_p,
    scaled_density,
    support_grid,
    trapezoid_grid,
)


def test_gauss_legendre_integrates_normal_to_one(grid):
    total = integrate(normal_density(0.3, 1.7), grid)
    assert abs(total - 1.0) < 1e-12, f"total mass {total!r}"


def test_breakpoints_become_panel_edges():
    grid = gauss_legendre_grid(-2.0, 2.0, order=8)
    refined = grid.with_breakpoints([0.37, 5.0])
    assert 0.37 in refined.edges
    assert 5.0 not in refined.edges
    assert abs(refined.weights.sum() - 4.0) < 1e-12


def test_trapezoid_weights_sum_to_length():
    grid = trapezoid_grid(-1.0, 3.0, 101, breakpoints=[0.123])
    assert abs(grid.weights.sum() - 4.0) < 1e-12
    assert 0.123 in grid.nodes


def test_grid_rejects_empty_interval():
    with pytest.raises(ValueError):
        gauss_legendre_grid(1.0, 1.0)


def test_convex_combination_is_probability(grid):
    mixed = convex_combination([normal_density(-1.0, 1.0), normal_density(2.0, 0.5)], [0.3, 0.7])
    assert mixed.is_probability
    assert abs(integrate(mixed, grid) - 1.0) < 1e-12


def test_scaled_density_is_finite_measure(grid):
    scaled = scaled_density(normal_density(0.0, 1.0), 2.5)
    assert not scaled.is_probability
    assert scaled.total_mass == pytest.approx(2.5)
    assert integrate(scaled, grid) == pytest.approx(2.5, abs=1e-12)


def test_absolute_continuity_violation_raises():
    uniform = DensityHandle.from_scipy(stats.uniform(0.0, 1.0), label='U(0,1)')
    with pytest.raises(AbsoluteContinuityError):
        check_absolute_continuity(normal_density(0.0, 1.0), uniform)
    check_absolute_continuity(uniform, normal_density(0.0, 1.0))


@pytest.mark.parametrize('theta', [1.0, 1.2, 1.5, 2.0])
def test_q_of_p_mass_for_normal_locations(theta, standard_normal, shifted_normal):
    # P0(p_θ/p*) = exp(1 - θ) for N(0,1) data and p* = N(1,1)
    q = q_of_p(normal_density(theta, 1.0), standard_normal, shifted_normal)
    assert not q.is_probability
    assert abs(q.total_mass - np.exp(1.0 - theta)) < 1e-10, f"mass {q.total_mass!r} at θ={theta}"


def test_q_of_p_at_pstar_is_p0(standard_normal, shifted_normal):
    q = q_of_p(shifted_normal, standard_normal, shifted_normal)
    x = np.linspace(-4.0, 4.0, 17)
    assert np.allclose(q(x), standard_normal(x), rtol=1e-12)


def test_mixing_distribution_validation():
    with pytest.raises(InvalidMixingError):
        MixingDistribution(support=np.array([0.0, 3.0]), weights=np.array([0.5, 0.5]), M=2.0)
    with pytest.raises(InvalidMixingError):
        MixingDistribution(support=np.array([0.0, 1.0]), weights=np.array([1.5, -0.5]), M=2.0)
    unnormalized = MixingDistribution(support=np.array([0.0, 1.0]), weights=np.array([0.5, 0.6]),
                                      M=2.0)
    assert not unnormalized.is_normalized()
    with pytest.raises(InvalidMixingError):
        mixture_density(unnormalized)


def test_mixture_density_integrates_to_one(grid):
    F = MixingDistribution.from_weights(support_grid(2.0, 9), np.arange(1, 10), M=2.0)
    assert F.is_normalized()
    assert abs(integrate(mixture_density(F), grid) - 1.0) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5).filter(lambda w: sum(w) > 0.1))
def test_mixture_envelopes_sandwich_density(weights):
    F = MixingDistribution.from_weights(support_grid(2.0, 5), weights, M=2.0)
    upper, lower = mixture_envelopes(2.0)
    x = np.linspace(-8.0, 8.0, 321)
    dens = mixture_density(F)(x)
    assert np.all(lower(x) <= dens * (1.0 + 1e-12))
    assert np.all(dens <= upper(x) * (1.0 + 1e-12))


def test_sampler_is_deterministic_per_seed():
    sampler = normal_sampler(0.0, 2.0)
    assert np.array_equal(sampler.draw(7, 100), sampler.draw(7, 100))
    assert not np.array_equal(sampler.draw(7, 100), sampler.draw(8, 100))


def test_mc_expectation_of_mean():
    mean, stderr = mc_expectation(normal_sampler(0.0, 1.0), lambda x: x, 20_000, seed=3)
    assert abs(mean) <= 4.0 * stderr
    assert stderr == pytest.approx(1.0 / np.sqrt(20_000), rel=0.05)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 0.5), st.floats(0.0, 3.0),
       st.floats(-1.0, 1.0), st.floats(0.5, 2.0))
def test_quadrature_agrees_with_monte_carlo(a, b, c, omega, loc, scale):
    def f(x):
        return a + b * x + c * x * x + np.cos(omega * x)

    exact = integrate(lambda x: f(x) * normal_density(loc, scale)(x), default_grid())
    mean, stderr = mc_expectation(normal_sampler(loc, scale), f, 20_000, seed=17)
    assert abs(mean - exact) <= 4.0 * stderr + 1e-9, (mean, stderr, exact)


def test_transform_at_one_half_is_one_for_centered_pstar():
    p0 = normal_density(0.0, np.sqrt(2.0))
    q = q_of_p(normal_density(1.5, 1.0), p0, normal_density(0.0, 1.0))
    mean, stderr = mc_expectation(normal_sampler(0.0, np.sqrt(2.0)),
                                  lambda x: np.exp(0.5 * (q.logpdf(x) - p0.logpdf(x))), 100_000,
                                  seed=4)
    assert abs(mean - 1.0) <= 4.0 * stderr
    exact = integrate(lambda x: np.sqrt(p0(x) * q(x)), default_grid())
    assert exact == pytest.approx(1.0, abs=1e-8)


def test_laplace_density_matches_scipy():
    handle = laplace_density(0.5, 2.0)
    x = np.linspace(-6.0, 6.0, 25)
    assert np.allclose(handle(x), stats.laplace(loc=0.5, scale=2.0).pdf(x), rtol=1e-12)
    assert handle.is_probability and handle.label == 'Laplace(0.5,2)'
    kinked = gauss_legendre_grid(-40.0, 40.0, edges=[0.5])
    assert integrate(handle, kinked) == pytest.approx(1.0, abs=1e-8)


def test_mc_expectation_rejects_non_finite_values():
    with pytest.raises(SamplingError):
        mc_expectation(normal_sampler(), lambda x: np.full_like(x, np.inf), 10, seed=0)


def test_location_family_likelihood_matches_density():
    family = normal_location_family(-3.0, 3.0)
    data = normal_sampler(0.5, 1.0).draw(11, 40)
    thetas = np.array([-0.4, 0.3, 1.2])
    expected = [normal_density(t, 1.0).logpdf(data).sum() for t in thetas]
    assert np.allclose(family.log_likelihood(thetas, data), expected, rtol=1e-12)
    assert family.contains(3.0) and not family.contains(3.1)


def test_default_grid_is_symmetric():
    grid = default_grid()
    assert grid.lower == -grid.upper
    assert np.allclose(grid.nodes, -grid.nodes[::-1])
