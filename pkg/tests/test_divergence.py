import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.optimize import brentq

from misspec.divergence import (
    CALIBRATION_SEED,
    CALIBRATION_TUPLES,
    EXPANSION_CONSTANTS,
    KL_HELLINGER_CONSTANT,
    KL_HELLINGER_EPS,
    KLNeighborhoodSpec,
    TransformCurve,
    calibrate_constants,
    combination_inequality_gap,
    curve_value,
    epsilon_b,
    epsilon_double_prime,
    expansion_residual,
    hellinger_sq,
    hellinger_transform,
    in_kl_neighborhood,
    kl_divergence,
    kl_moments,
    l1_distance,
    kl_hellinger_check,
    margin_argmax,
    min_transform,
    misspec_margin,
    r_function,
    rounded_up_constants,
    transform_curve,
    weighted_hellinger_sq,
)
from misspec.errors import NonConvexTransformError, RegimeError
from misspec.measures import normal_density, scaled_density


def test_kl_between_unit_normals(standard_normal, shifted_normal):
    assert abs(kl_divergence(standard_normal, shifted_normal) - 0.5) < 1e-10


def test_hellinger_between_unit_normals(standard_normal, shifted_normal):
    expected = 1.0 - np.exp(-1.0 / 8.0)
    assert abs(hellinger_sq(standard_normal, shifted_normal) - expected) < 1e-10


def test_l1_with_breakpoint_at_crossing(grid, standard_normal, shifted_normal):
    expected = 2.0 * (2.0 * stats.norm.cdf(0.5) - 1.0)
    value = l1_distance(standard_normal, shifted_normal, grid.with_breakpoints([0.5]))
    assert abs(value - expected) < 1e-10, f"L1 {value!r}, expected {expected!r}"


@pytest.mark.parametrize('alpha', [0.1, 0.25, 0.5, 0.75, 0.9])
def test_transform_closed_form(alpha, standard_normal, shifted_normal):
    value = hellinger_transform(standard_normal, shifted_normal, alpha)
    assert abs(value - np.exp(-alpha * (1.0 - alpha) / 2.0)) < 1e-10


@pytest.mark.parametrize('alpha', [0.0, 1.0, -0.2, 1.5])
def test_transform_rejects_alpha_outside_unit_interval(alpha, standard_normal):
    with pytest.raises(ValueError):
        hellinger_transform(standard_normal, standard_normal, alpha)


def test_min_transform_of_symmetric_pair(standard_normal, shifted_normal):
    alpha, value = min_transform(standard_normal, shifted_normal)
    assert abs(alpha - 0.5) < 1e-5
    assert abs(value - np.exp(-1.0 / 8.0)) < 1e-10


def test_curve_of_identical_measures_is_flat(standard_normal):
    curve = transform_curve(standard_normal, standard_normal, n_alphas=17)
    assert np.allclose(curve.values, 1.0, atol=1e-12)
    assert curve.left_limit == pytest.approx(1.0, abs=1e-12)
    assert curve.right_limit == pytest.approx(1.0, abs=1e-12)
    assert abs(curve.slope_at_zero) < 1e-12


def test_curve_value_puts_exponent_on_q(standard_normal):
    q = scaled_density(normal_density(0.5, 1.2), 0.8)
    assert curve_value(standard_normal, q, 0.3) == pytest.approx(
        hellinger_transform(standard_normal, q, 0.7), rel=1e-14)


def test_non_convex_curve_is_rejected():
    alphas = np.linspace(0.1, 0.9, 9)
    with pytest.raises(NonConvexTransformError):
        TransformCurve(alphas=alphas, values=1.0 - (alphas - 0.5) ** 2, left_limit=1.0,
                       right_limit=1.0, slope_at_zero=0.0)


def test_curve_needs_enough_points(standard_normal):
    with pytest.raises(ValueError):
        transform_curve(standard_normal, standard_normal, n_alphas=4)


def test_margin_left_setting():
    # N(0,2) data, p = N(3/2,1), p* = N(0,1): minimum of exp(9β²/4 - 9β/8) at β = 1/4
    p0 = normal_density(0.0, np.sqrt(2.0))
    alpha, margin = margin_argmax(p0, normal_density(1.5, 1.0), normal_density(0.0, 1.0))
    assert abs(margin - 9.0 / 64.0) < 1e-8
    assert abs(alpha - 0.25) < 1e-5


def test_margin_right_setting_sits_at_the_edge():
    p0 = normal_density(0.0, np.sqrt(2.0))
    alpha, margin = margin_argmax(p0, normal_density(1.5, 1.0), normal_density(1.0, 1.0))
    assert abs(margin - 3.0 / 8.0) < 1e-6
    assert alpha > 0.999


def test_margin_of_pstar_itself_is_zero(standard_normal, shifted_normal):
    assert misspec_margin(standard_normal, shifted_normal, shifted_normal) == 0.0


@pytest.mark.parametrize('theta', [1.1, 1.5, 2.0])
def test_boundary_margin_equals_distance(theta, standard_normal, shifted_normal):
    margin = misspec_margin(standard_normal, normal_density(theta, 1.0), shifted_normal)
    assert abs(margin - (theta - 1.0)) < 1e-5


def test_weighted_hellinger_reduces_to_hellinger(standard_normal):
    p1, p2 = normal_density(0.2, 1.0), normal_density(-0.4, 1.1)
    weighted = weighted_hellinger_sq(p1, p2, standard_normal, standard_normal)
    assert weighted == pytest.approx(0.5 * hellinger_sq(p1, p2), rel=1e-12)
    doubled = weighted_hellinger_sq(p1, p2, standard_normal, standard_normal, factor=0.5)
    assert doubled == pytest.approx(2.0 * weighted, rel=1e-12)
    with pytest.raises(ValueError):
        weighted_hellinger_sq(p1, p2, standard_normal, standard_normal, factor=1.0)


@pytest.mark.parametrize('theta', [1.0, 1.3, 2.0])
def test_kl_moments_closed_form(theta, standard_normal, shifted_normal):
    first, second = kl_moments(standard_normal, normal_density(theta, 1.0), shifted_normal)
    a, b = theta - 1.0, (1.0 - theta * theta) / 2.0
    assert first == pytest.approx((theta * theta - 1.0) / 2.0, abs=1e-10)
    assert second == pytest.approx(a * a + b * b, abs=1e-10)


def test_kl_neighborhood_membership(standard_normal):
    spec = KLNeighborhoodSpec(epsilon=0.5, pstar=standard_normal, p0=standard_normal)
    assert in_kl_neighborhood(spec, normal_density(0.1, 1.0))
    assert not in_kl_neighborhood(spec, normal_density(2.0, 1.0))
    with pytest.raises(ValueError):
        KLNeighborhoodSpec(epsilon=0.0, pstar=standard_normal, p0=standard_normal)


@settings(max_examples=30, deadline=None)
@given(mu0=st.floats(-0.5, 0.5), s0=st.floats(0.8, 1.1), mu=st.floats(-0.5, 0.5),
       mq=st.floats(-1.0, 1.0), sq=st.floats(0.9, 1.1), alpha=st.floats(0.01, 1.0))
def test_expansion_residual_within_frozen_constants(mu0, s0, mu, mq, sq, alpha):
    p0, p, q = normal_density(mu0, s0), normal_density(mu, 1.0), normal_density(mq, sq)
    for form, constant in EXPANSION_CONSTANTS.items():
        lhs, envelope = expansion_residual(p0, p, q, alpha, form=form)
        assert lhs <= constant * envelope + 1e-12, f"{form}: {lhs!r} > {constant}·{envelope!r}"


@pytest.mark.parametrize('x', [1e-4, 0.01, 0.5, 0.9999999, 1.0, 1.0001, 2.0, 10.0])
def test_r_function_identity(x):
    t = np.sqrt(x) - 1.0
    assert np.log(x) == pytest.approx(2.0 * t - r_function(x) * t * t, abs=1e-12)


def test_epsilon_double_prime_for_large_b():
    assert epsilon_double_prime(1.0) == 1.0
    assert 0.0 < epsilon_double_prime(0.25) <= 1.0


def test_kl_hellinger_comparison_for_close_measures(standard_normal):
    kl, sqlog, rhs1, rhs2 = kl_hellinger_check(standard_normal, normal_density(0.05, 1.0), b=1.0)
    assert kl <= KL_HELLINGER_CONSTANT * rhs1
    assert sqlog <= KL_HELLINGER_CONSTANT * rhs2


def test_kl_hellinger_comparison_outside_regime(standard_normal):
    with pytest.raises(RegimeError):
        kl_hellinger_check(standard_normal, scaled_density(standard_normal, 4.0), b=1.0)


def test_kl_hellinger_regime_edge_uses_half_epsilon_double_prime(standard_normal):
    b = 0.25
    edge = epsilon_b(b)
    assert 0.5 * epsilon_double_prime(b) < KL_HELLINGER_EPS
    assert edge == pytest.approx((0.5 * epsilon_double_prime(b)) ** b, rel=1e-12)
    assert edge < epsilon_double_prime(b) ** b
    assert epsilon_b(1.0) == pytest.approx(KL_HELLINGER_EPS)

    # for q = c·p the regime reads (√c - 1)²·c^b < ε_b
    def scale_at(level):
        return brentq(lambda c: (np.sqrt(c) - 1.0) ** 2 * c ** b - level, 1.0, 10.0)

    kl_hellinger_check(standard_normal, scaled_density(standard_normal, scale_at(0.9 * edge)), b)
    with pytest.raises(RegimeError):
        kl_hellinger_check(standard_normal, scaled_density(standard_normal, scale_at(1.1 * edge)), b)


def test_calibration_stays_below_frozen_constants():
    ratios = calibrate_constants(seed=1, n_tuples=20)
    for form, constant in EXPANSION_CONSTANTS.items():
        assert ratios[form] <= constant
        assert ratios[f"{form}_combination"] <= constant
    assert ratios['kl_ratio'] <= KL_HELLINGER_CONSTANT
    assert ratios['sqlog_ratio'] <= KL_HELLINGER_CONSTANT


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_combination_inequality_when_well_specified(seed, standard_normal):
    rng = np.random.default_rng(seed)
    components = [normal_density(rng.uniform(-1.5, 1.5), rng.uniform(0.8, 1.2)) for _ in range(3)]
    p = normal_density(rng.uniform(-1.0, 1.0), 1.0)
    gap = combination_inequality_gap(standard_normal, components, rng.dirichlet(np.ones(3)), p,
                                     standard_normal)
    assert gap >= -1e-10


def test_combination_inequality_with_a_single_component(standard_normal, shifted_normal):
    # m = 1 and P_1 = P reduces to margin ≥ d²(P, P*)/4
    gap = combination_inequality_gap(standard_normal, [shifted_normal], [1.0], shifted_normal,
                                     standard_normal)
    quarter = 0.25 * weighted_hellinger_sq(shifted_normal, standard_normal, standard_normal,
                                           standard_normal)
    assert gap == pytest.approx(misspec_margin(standard_normal, shifted_normal, standard_normal)
                                - quarter, abs=1e-12)
    assert gap > 0


def test_combination_inequality_rejects_bad_weights(standard_normal, shifted_normal):
    with pytest.raises(ValueError):
        combination_inequality_gap(standard_normal, [shifted_normal, standard_normal], [0.5, 0.6],
                                   shifted_normal, standard_normal)
    with pytest.raises(ValueError):
        combination_inequality_gap(standard_normal, [shifted_normal], [0.5, 0.5],
                                   shifted_normal, standard_normal)


def test_rounded_up_constants_take_the_worst_ratio_per_form():
    ratios = {'hellinger': 1.2, 'hellinger_combination': 1.9, 'logarithmic': 0.31,
              'logarithmic_combination': 0.2, 'kl_ratio': 3.0, 'sqlog_ratio': 41.5, 'skipped': 7.0}
    assert rounded_up_constants(ratios) == {'hellinger': 2.0, 'logarithmic': 1.0,
                                            'kl_hellinger': 42.0}


@pytest.mark.slow
def test_calibration_run_is_dominated_by_hard_coded_constants():
    calibrated = rounded_up_constants(calibrate_constants(CALIBRATION_SEED, CALIBRATION_TUPLES))
    assert calibrated['hellinger'] <= EXPANSION_CONSTANTS['hellinger']
    assert calibrated['logarithmic'] <= EXPANSION_CONSTANTS['logarithmic']
    assert calibrated['kl_hellinger'] <= KL_HELLINGER_CONSTANT
