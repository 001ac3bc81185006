import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from misspec.entropy import (
    DiscreteModel,
    GreedyPermutation,
    brute_force_cover,
    covering_number,
    euclidean_metric,
    greedy_permutation,
    cover_radius_factor,
    local_cover_for_testing,
    mixture_entropy_curve,
    random_mixtures,
    sup_metric,
)
from misspec.errors import RateFitError
from misspec.measures import (
    mixture_density,
    normal_density,
    normal_location_family,
    root_metric,
    support_grid,
)
from misspec.projection import project_mixture


def test_eleven_point_example():
    points = np.linspace(0.0, 1.0, 11)
    assert covering_number(points, eps=0.05).n_balls == 11
    assert brute_force_cover(points, 0.05) == 6


def test_greedy_centers_cover_every_point():
    points = np.random.default_rng(4).uniform(-1.0, 1.0, (200, 2))
    report = covering_number(points, eps=0.25)
    centers = np.array(report.centers)
    nearest = np.min([euclidean_metric(points, c) for c in centers], axis=0)
    assert report.n_balls == len(centers)
    assert nearest.max() <= 0.25 + 1e-12


@settings(max_examples=60, deadline=None)
@given(points=st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=10),
       eps=st.floats(0.01, 0.5))
def test_greedy_within_factor_two_on_the_line(points, eps):
    points = np.array(points)
    greedy = covering_number(points, eps=eps).n_balls
    optimum = brute_force_cover(points, eps)
    assert optimum <= greedy <= 2 * optimum, f"greedy {greedy}, optimum {optimum}"


def test_brute_force_is_limited():
    with pytest.raises(ValueError):
        brute_force_cover(np.linspace(0.0, 1.0, 13), 0.1)


def test_greedy_radii_decrease():
    points = np.random.default_rng(9).normal(size=(100, 3))
    perm = greedy_permutation(points)
    assert np.isinf(perm.radii[0])
    assert np.all(np.diff(perm.radii[1:]) <= 1e-12)
    assert sorted(perm.order.tolist()) == list(range(100))


def test_stopped_permutation_refuses_smaller_radius():
    perm = greedy_permutation(np.linspace(0.0, 1.0, 101), stop_radius=0.1)
    assert isinstance(perm, GreedyPermutation)
    perm.n_centers(0.2)
    with pytest.raises(ValueError):
        perm.n_centers(0.05)


def test_sup_metric():
    rows = np.array([[0.0, 1.0], [2.0, -1.0]])
    assert np.allclose(sup_metric(rows, [0.0, 0.0]), [1.0, 2.0])


@pytest.mark.parametrize('C,c,expected', [(1.0, 1.0, 1.0 / 8.0), (16.0, 1.0, 1.0 / 16.0),
                                          (1.0, 0.1, 0.05)])
def test_cover_radius_factor(C, c, expected):
    assert cover_radius_factor(C, c) == pytest.approx(expected)


def test_local_cover_of_boundary_family():
    family = normal_location_family(1.0, 2.0, metric=root_metric)
    report = local_cover_for_testing(family, normal_density(0.0, 1.0), family.density(1.0), 0.3,
                                     theta_star=1.0, seed=2, n_combinations=20)
    assert report.certified
    assert report.n_balls >= 1
    assert report.radius_used == pytest.approx(0.3 / 8.0)
    assert all(m >= 0.3 ** 2 / 4.0 for m in report.margins)
    assert all(0.3 < np.sqrt(center - 1.0) < 0.6 for center in report.centers)


def test_local_cover_needs_theta_star():
    family = normal_location_family(1.0, 2.0)
    with pytest.raises(ValueError):
        local_cover_for_testing(family, normal_density(0.0, 1.0), family.density(1.0), 0.3)


def test_empty_annulus_is_trivially_certified():
    family = normal_location_family(1.0, 2.0)
    report = local_cover_for_testing(family, normal_density(0.0, 1.0), family.density(1.0), 2.0,
                                     theta_star=1.0)
    assert report.certified and report.n_balls == 0


def test_mixture_model_distance():
    support = support_grid(2.0, 5)
    p0 = normal_density(0.0, 1.5)
    F = project_mixture(p0, support, M=2.0)
    mixings = [F] + random_mixtures(support, 2.0, 12, seed=5)
    model = DiscreteModel.from_mixtures(mixings, p0, mixture_density(F))
    index = np.arange(len(model))
    assert model.distance(index, 0)[0] == pytest.approx(0.0, abs=1e-12)
    forward = model.distance(index, 3)
    backward = np.array([model.distance(np.array([3]), i)[0] for i in index])
    assert np.allclose(forward, backward, rtol=1e-10, atol=1e-14)
    assert model.key(2) == 2


def test_random_mixtures_start_with_point_masses():
    support = support_grid(2.0, 7)
    mixings = random_mixtures(support, 2.0, 20, seed=1)
    assert len(mixings) == 20
    assert [F.support[0] for F in mixings[:7]] == support.tolist()
    assert all(F.is_normalized(1e-12) for F in mixings)


def test_entropy_curve_is_monotone():
    curve = mixture_entropy_curve(2.0, [0.2, 0.1, 0.05], n_probe=300, seed=3)
    ordered = sorted(curve.points)
    assert [e for e, _ in ordered] == [0.05, 0.1, 0.2]
    assert all(a[1] >= b[1] for a, b in zip(ordered, ordered[1:]))
    assert curve.n_probe == 300


def test_entropy_curve_rejects_large_eps():
    with pytest.raises(ValueError):
        mixture_entropy_curve(2.0, [0.5, 0.1], n_probe=50)


def test_entropy_fit_needs_two_levels():
    with pytest.raises(RateFitError):
        mixture_entropy_curve(2.0, [0.3], n_probe=50, seed=0)
