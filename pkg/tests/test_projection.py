import numpy as np
import pytest

from misspec.errors import InvalidMixingError, ProjectionError
from misspec.measures import (
    MixingDistribution,
    gauss_legendre_grid,
    grid_sum,
    normal_density,
    normal_location_family,
    support_grid,
)
from misspec.projection import (
    ErrorLaw,
    PiecewiseConstantClass,
    RegressionSpec,
    assert_phi_curvature,
    discretize_mixing,
    kl_semicontinuity_gap,
    mixture_certificate,
    mixture_gap,
    mixture_objective,
    phi_laplace,
    phi_prime,
    project_mixture,
    project_parametric,
    project_regression,
    pythagoras_check,
    regression_kl,
)
from misspec.scenarios import step_function

F0 = (1.0, -0.5, 0.25)


def _regression_spec(likelihood, error):
    return RegressionSpec(f0=step_function(F0), error=error,
                          function_class=PiecewiseConstantClass(n_bins=3, bound=10.0),
                          likelihood=likelihood)


def test_parametric_projection_on_the_boundary(standard_normal):
    theta_star, kl_min = project_parametric(normal_location_family(1.0, 2.0), standard_normal)
    assert theta_star == 1.0
    assert abs(kl_min - 0.5) < 1e-10


def test_parametric_projection_in_the_interior():
    p0 = normal_density(0.0, np.sqrt(2.0))
    theta_star, kl_min = project_parametric(normal_location_family(-3.0, 3.0), p0)
    assert abs(theta_star) < 1e-6
    assert abs(kl_min - 0.5 * (1.0 - np.log(2.0))) < 1e-10


@pytest.fixture(scope='module')
def projected_mixture():
    p0 = normal_density(0.0, 1.5)
    return p0, project_mixture(p0, support_grid(2.0, 21), M=2.0)


def test_mixture_projection_certificate(projected_mixture):
    p0, F = projected_mixture
    assert F.is_normalized(1e-10)
    assert mixture_certificate(p0, F) <= 1.0 + 1e-6
    assert mixture_gap(p0, F) <= 1e-6


def test_mixture_projection_beats_uniform(projected_mixture):
    p0, F = projected_mixture
    uniform = MixingDistribution.uniform(F.support, M=2.0)
    assert mixture_objective(p0, F) < mixture_objective(p0, uniform)


def test_discretized_mixing_keeps_mass_and_mean():
    F = MixingDistribution(support=np.array([-1.37, 0.05, 1.91]), weights=np.array([0.2, 0.5, 0.3]),
                           M=2.0)
    for n_points in (3, 9, 65):
        G = discretize_mixing(F, n_points)
        assert G.is_normalized(1e-12)
        assert np.dot(G.weights, G.support) == pytest.approx(np.dot(F.weights, F.support), abs=1e-12)
        assert set(G.support) <= set(support_grid(2.0, n_points))
    with pytest.raises(ValueError):
        discretize_mixing(F, 1)


def test_discretized_mixing_keeps_atoms_on_the_grid():
    F = MixingDistribution.uniform(support_grid(2.0, 5), M=2.0)
    G = discretize_mixing(F, 9)
    assert np.allclose(G.support, F.support)
    assert np.allclose(G.weights, F.weights)


def test_kl_lower_semicontinuous_along_discretization(projected_mixture):
    p0, F = projected_mixture
    assert kl_semicontinuity_gap(p0, F) >= -1e-6
    off_grid = MixingDistribution(support=np.array([-0.731, 0.4142]), weights=np.array([0.35, 0.65]),
                                  M=2.0)
    assert kl_semicontinuity_gap(p0, off_grid) >= -1e-6
    with pytest.raises(ValueError):
        kl_semicontinuity_gap(p0, F, levels=(5, 9), tail=3)


def test_mixture_projection_rejects_bad_initial_weights():
    with pytest.raises(InvalidMixingError):
        project_mixture(normal_density(0.0, 1.5), support_grid(2.0, 5), init=[1, 0, 1, 1, 1])


def test_mixture_projection_reports_unreached_tolerance():
    with pytest.raises(ProjectionError):
        project_mixture(normal_density(0.0, 1.5), support_grid(2.0, 21), tol=1e-14,
                        max_iters=3, polish=False)


@pytest.mark.parametrize('error', [ErrorLaw.normal(0.5, 1.0), ErrorLaw.laplace(0.3, 0.8)])
@pytest.mark.parametrize('nu', [-1.5, -0.2, 0.0, 0.4, 2.0])
def test_phi_closed_form_matches_quadrature(error, nu):
    lo, hi = float(error.dist.ppf(1e-15)), float(error.dist.ppf(1.0 - 1e-15))
    grid = gauss_legendre_grid(lo, hi, order=32, edges=(0.0, nu, error.median))
    e = grid.points
    expected = grid_sum((np.abs(e - nu) - np.abs(e)) * error.dist.pdf(e), grid)
    assert abs(phi_laplace(nu, error) - expected) < 1e-9


def test_phi_is_minimized_at_the_median():
    error = ErrorLaw.normal(0.5, 1.0)
    assert phi_prime(0.5, error) == pytest.approx(0.0, abs=1e-15)
    assert phi_laplace(0.0, error) == 0.0
    assert phi_laplace(0.5, error) < phi_laplace(0.4, error)
    assert_phi_curvature(error)


def test_normal_likelihood_projects_onto_mean_shift():
    spec = _regression_spec('normal', ErrorLaw.laplace(0.0, 1.0 / np.sqrt(2.0)))
    coefficients = project_regression(spec, n_mc=5000, seed=1)
    assert np.allclose(coefficients, np.array(F0) + spec.error_mean, atol=1e-6)
    assert pythagoras_check(coefficients, spec.f0, spec.error_mean, spec.function_class,
                            n_mc=5000, seed=2) < 1e-8


def test_laplace_likelihood_projects_onto_median_shift():
    spec = _regression_spec('laplace', ErrorLaw.normal(0.5, 1.0))
    coefficients = project_regression(spec, n_mc=5000, seed=1)
    assert np.allclose(coefficients, np.array(F0) + 0.5, atol=1e-4)


def test_regression_kl_vanishes_at_f0():
    spec = _regression_spec('normal', ErrorLaw.normal(0.0, 1.0))
    kl, stderr = regression_kl(spec, F0, n_mc=2000, seed=3)
    assert kl == 0.0 and stderr == 0.0


def test_regression_spec_rejects_unknown_likelihood():
    with pytest.raises(ValueError):
        _regression_spec('cauchy', ErrorLaw.normal())


def test_step_class_geometry():
    cls = PiecewiseConstantClass(n_bins=3, bound=2.0)
    assert cls.vertices().shape == (8, 3)
    assert cls.contains([2.0, -2.0, 0.0]) and not cls.contains([2.5, 0.0, 0.0])
    assert list(cls.bin_index([0.0, 0.34, 0.99, 1.0])) == [0, 1, 2, 2]
