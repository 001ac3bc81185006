import numpy as np
import pytest

from misspec.errors import PriorMassError, RateFitError
from misspec.measures import (
    MixingDistribution,
    mixture_density,
    mixture_sampler,
    normal_density,
    normal_location_family,
    normal_sampler,
    support_grid,
)
from misspec.posterior import (
    PRIOR_RECOVERY_Z,
    McmcConfig,
    PosteriorSummary,
    ThetaGrid,
    allowed_inversions,
    batch_means_stderr,
    boundary_mass_mills,
    boundary_posterior_mass,
    evidence_bound_check,
    grid_posterior,
    log_evidence,
    median_radii,
    mixture_distances,
    mixture_log_evidence,
    mixture_posterior,
    mixture_prior_recovery,
    posterior_quantile_radius,
    posterior_tail_mass,
    radius_inversions,
    rate_fit,
    regression_posterior,
    targeting_ratios,
)
from misspec.projection import project_mixture
from misspec.scenarios import REGRESSION_F0, build_scenario
from utils.seeding import make_rng


def _summary(n, radius, rep=0):
    return PosteriorSummary(n=n, tail_mass=0.0, quantile_radius=radius, evidence=1.0, seed=0,
                            rep=rep)


def test_uniform_theta_grid_uses_midpoints():
    grid = ThetaGrid.uniform(1.0, 2.0, 4)
    assert np.allclose(grid.thetas, [1.125, 1.375, 1.625, 1.875])
    assert grid.prior.sum() == pytest.approx(1.0)


def test_theta_grid_rejects_bad_prior():
    with pytest.raises(ValueError):
        ThetaGrid(thetas=np.array([0.0, 1.0]), prior=np.array([0.7, 0.7]))


def test_grid_posterior_without_data_is_prior():
    grid = ThetaGrid.uniform(-1.0, 1.0, 11)
    family = normal_location_family(-1.0, 1.0)
    assert np.array_equal(grid_posterior(grid, family, []), grid.prior)
    assert log_evidence(grid, family, [], 0.0) == 0.0


def test_grid_posterior_concentrates_near_sample_mean():
    grid = ThetaGrid.uniform(-3.0, 3.0, 6001)
    family = normal_location_family(-3.0, 3.0)
    data = normal_sampler(0.4, 1.0).draw(2, 400)
    weights = grid_posterior(grid, family, data)
    assert weights.sum() == pytest.approx(1.0)
    assert abs(weights @ grid.thetas - data.mean()) < 1e-3


def test_tail_mass_and_quantile_radius():
    distances = np.array([0.0, 1.0, 2.0, 3.0])
    weights = np.array([0.1, 0.2, 0.3, 0.4])
    assert posterior_tail_mass(distances, weights, 2.0) == pytest.approx(0.7)
    assert posterior_quantile_radius(distances, weights) == 3.0
    assert posterior_quantile_radius(distances, weights, level=0.3) == 1.0


def test_boundary_mass_endpoints_and_domain():
    assert boundary_posterior_mass(100, 0.5, 1.0) == 1.0
    assert boundary_posterior_mass(100, 0.5, 2.0) == 0.0
    with pytest.raises(ValueError):
        boundary_posterior_mass(100, 0.5, 2.5)
    with pytest.raises(ValueError):
        boundary_posterior_mass(0, 0.5, 1.5)


def test_boundary_mass_decreases_in_c():
    masses = [boundary_posterior_mass(200, -0.3, c) for c in np.linspace(1.0, 1.05, 11)]
    assert all(a >= b for a, b in zip(masses, masses[1:]))


def test_boundary_mass_matches_grid_posterior():
    n, zn, points = 80, 0.7, 20001
    grid = ThetaGrid.uniform(1.0, 2.0, points)
    c = 1.0 + 7.0 / points
    weights = grid_posterior(grid, normal_location_family(1.0, 2.0), np.full(n, zn / np.sqrt(n)))
    numeric = float(weights[grid.thetas > c].sum())
    assert abs(numeric - boundary_posterior_mass(n, zn, c)) < 1e-4


def test_mills_approximation_for_large_n():
    n = 400
    exact = boundary_posterior_mass(n, 0.0, 1.0 + 1.0 / n)
    assert boundary_mass_mills(n, 0.0, 1.0 + 1.0 / n) == pytest.approx(exact, rel=1e-2)


def test_mcmc_config_validation():
    with pytest.raises(ValueError):
        McmcConfig(steps=100, burnin=200)
    with pytest.raises(ValueError):
        McmcConfig(proposal_scale=0.0)


def test_mixture_sampler_is_reproducible():
    support = support_grid(2.0, 9)
    data = normal_sampler(0.0, 1.5).draw(4, 60)
    config = McmcConfig(steps=3000, burnin=1000, thin=5)
    first = mixture_posterior(data, support, np.ones(9), config, seed=17)
    second = mixture_posterior(data, support, np.ones(9), config, seed=17)
    assert np.array_equal(first.weights, second.weights)
    assert first.weights.shape == (400, 9)
    assert np.allclose(first.weights.sum(axis=1), 1.0)
    assert 0.02 <= first.acceptance <= 0.95
    assert len(first.draws) == 400
    assert first.stderr().shape == (9,)


def test_mixture_sampler_rejects_bad_prior():
    with pytest.raises(ValueError):
        mixture_posterior([0.1], support_grid(2.0, 3), [1.0, 0.0, 1.0])


def test_batch_means():
    chain = np.tile([1.0, 2.0], 50)
    assert np.allclose(batch_means_stderr(chain, n_batches=10), 0.0)
    with pytest.raises(ValueError):
        batch_means_stderr(np.ones(5), n_batches=10)


def test_rate_fit_recovers_exponent():
    summaries = [_summary(n, n ** -0.5, rep) for n in (100, 200, 400, 800) for rep in range(3)]
    fit = rate_fit(summaries)
    assert fit.beta == pytest.approx(-0.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.n_values == (100, 200, 400, 800)
    assert median_radii(summaries)[400] == pytest.approx(0.05)


def test_rate_fit_mixture_ratios():
    ns = (100, 200, 400, 800)
    fit = rate_fit([_summary(n, np.log(n) / np.sqrt(n)) for n in ns], mixture=True)
    assert np.allclose(fit.ratios, 1.0)


def test_rate_fit_needs_four_sizes():
    with pytest.raises(RateFitError):
        rate_fit([_summary(n, 0.1) for n in (100, 200, 400)])
    with pytest.raises(RateFitError):
        rate_fit([_summary(n, 0.0) for n in (100, 200, 400, 800)])


def test_summary_validation():
    with pytest.raises(ValueError):
        PosteriorSummary(n=10, tail_mass=1.5, quantile_radius=0.1, evidence=1.0, seed=0)


def test_evidence_bound_well_specified():
    family = normal_location_family(-3.0, 3.0)
    check = evidence_bound_check(family, normal_sampler(0.0, 1.0), 0.0, n=50, eps=0.3, C=2.0,
                                 reps=50, seed=8, prior_draws=20_000, moment_points=101)
    assert check.bound == pytest.approx(1.0 / (4.0 * 50 * 0.09))
    assert 0.0 < check.prior_mass < 1.0
    assert check.passed


def test_evidence_bound_needs_prior_mass():
    family = normal_location_family(-3.0, 3.0)
    with pytest.raises(PriorMassError):
        evidence_bound_check(family, normal_sampler(0.0, 1.0), 0.0, n=50, eps=0.001, C=2.0,
                             reps=5, seed=8, prior_draws=20_000, moment_points=101)


def test_radius_inversions():
    assert radius_inversions([0.4, 0.3, 0.2, 0.1]) == 0
    assert radius_inversions([0.4, 0.3, 0.31, 0.2, 0.1]) == 1
    assert radius_inversions([0.1, 0.2, 0.3]) == 2
    assert allowed_inversions(4) == 0
    assert allowed_inversions(5) == 1


def test_targeting_ratios_use_median_over_replications():
    summaries = [PosteriorSummary(n=n, tail_mass=0.0, quantile_radius=0.1, evidence=1.0, seed=0,
                                  rep=rep, diagnostics={'mode': mode, 'sd': 0.05})
                 for n in (200, 400, 800) for rep, mode in enumerate((0.01, -0.02, 0.4))]
    ratios = targeting_ratios(summaries, theta_star=0.0)
    assert list(ratios) == [400, 800]
    assert ratios[400] == pytest.approx(0.4)


def test_mixture_sampler_recovers_prior_without_data():
    alpha = np.array([0.5, 1.0, 2.0, 1.0, 0.5])
    z = mixture_prior_recovery(support_grid(2.0, 5), alpha, McmcConfig(steps=6000, burnin=1000),
                               seed=5)
    assert z.shape == (5,)
    assert np.sum(z > PRIOR_RECOVERY_Z) <= 1


@pytest.mark.slow
def test_mixture_posterior_concentrates_as_n_grows():
    support = support_grid(2.0, 11)
    F0 = MixingDistribution(support=support[[2, 8]], weights=np.array([0.4, 0.6]), M=2.0)
    truth = mixture_density(F0)
    config = McmcConfig(steps=8000, burnin=3000, thin=5)
    medians = {}
    for n in (100, 800):
        data = mixture_sampler(F0).draw(31, n)
        posterior = mixture_posterior(data, support, np.ones(11), config, seed=n)
        medians[n] = float(np.median(mixture_distances(posterior.weights, support, F0, truth,
                                                       truth)))
    assert medians[800] < medians[100]


@pytest.mark.slow
def test_misspecified_mixture_posterior_targets_the_projection():
    M = 3.0
    support = support_grid(M, 25)
    truth = normal_density(0.0, 1.5)
    F_star = project_mixture(truth, support, M=M)
    pstar = mixture_density(F_star)
    data = normal_sampler(0.0, 1.5).draw(41, 800)
    posterior = mixture_posterior(data, support, np.ones(25), seed=43)
    to_star = mixture_distances(posterior.weights, support, F_star, truth, pstar)
    to_uniform = mixture_distances(posterior.weights, support,
                                   MixingDistribution.uniform(support, M), truth, pstar)
    assert np.median(to_uniform) >= 2.0 * np.median(to_star)


@pytest.mark.slow
def test_regression_posterior_mean_near_f0_with_laplace_errors():
    spec = build_scenario('regression_normal').truth
    x, y = spec.simulate(make_rng(11), 1600)
    posterior = regression_posterior(spec, x, y)
    assert np.all(np.abs(posterior.mean() - np.array(REGRESSION_F0)) <= 3.0 * posterior.sd())


def test_mixture_evidence_of_a_degenerate_model():
    # every F gives N(0.5, 1), so each prior draw has likelihood ratio one
    data = normal_sampler(0.0, 1.0).draw(3, 40)
    log_ev, rel_stderr = mixture_log_evidence(data, [0.5, 0.5], [1.0, 2.0], normal_density(0.5, 1.0),
                                              draws=50, seed=1)
    assert log_ev == pytest.approx(0.0, abs=1e-9)
    assert rel_stderr == pytest.approx(0.0, abs=1e-9)
    assert mixture_log_evidence([], [0.5, 0.5], [1.0, 2.0], normal_density(0.5, 1.0)) == (0.0, 0.0)


def test_mixture_evidence_is_reproducible_and_below_the_best_fit():
    support = support_grid(2.0, 7)
    data = normal_sampler(0.0, 1.5).draw(5, 100)
    pstar = mixture_density(project_mixture(normal_density(0.0, 1.5), support, M=2.0))
    first = mixture_log_evidence(data, support, np.ones(7), pstar, draws=500, seed=9)
    assert first == mixture_log_evidence(data, support, np.ones(7), pstar, draws=500, seed=9)
    assert first[0] < 10.0
    assert 0.0 < first[1] and np.isfinite(first[1])
