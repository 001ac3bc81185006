"""
Verification Suite
Property contracts behind the verify command; every check returns a result dict
{'name', 'status', 'detail'} and the store, when given, receives the evidence table
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from configs.status import ContractStatus, contract_result
from misspec.divergence import (
    CALIBRATION_SEED,
    CALIBRATION_TUPLES,
    EXPANSION_CONSTANTS,
    KL_HELLINGER_CONSTANT,
    TransformCurve,
    calibrate_constants,
    combination_inequality_gap,
    curve_value,
    kl_divergence,
    rounded_up_constants,
    transform_curve,
    weighted_hellinger_sq,
)
from misspec.entropy import (
    DiscreteModel,
    EntropyCurve,
    brute_force_cover,
    covering_number,
    local_cover_for_testing,
    mixture_entropy_curve,
    random_mixtures,
)
from misspec.errors import MisspecError
from misspec.measures import (
    DensityHandle,
    mixture_density,
    normal_density,
    normal_location_family,
    normal_sampler,
    q_of_p,
    root_metric,
    scaled_density,
    support_grid,
)
from misspec.posterior import ThetaGrid, boundary_posterior_mass, grid_posterior
from misspec.projection import kl_semicontinuity_gap, mixture_certificate, project_mixture
from misspec.testing import (
    factorization_check,
    iid_power_bound,
    kl_minimality_check,
    sandwich_check,
)
from services.experiments import EvidenceService
from utils.record_store import RecordStore
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Built-in settings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurveSetting:
    """P0 = N(0, 2) against Q(P) for P = N(3/2, 1) and a fixed P*"""
    name: str
    pstar_loc: float
    quadratic: float
    linear: float

    def measures(self) -> Tuple[DensityHandle, DensityHandle]:
        p0 = normal_density(0.0, np.sqrt(2.0))
        q = q_of_p(normal_density(1.5, 1.0), p0, normal_density(self.pstar_loc, 1.0))
        return p0, q

    def oracle(self, beta):
        """Closed form of the transform at exponent beta on q"""
        beta = np.asarray(beta, dtype=float)
        return np.exp(self.quadratic * beta * beta + self.linear * beta)

    @property
    def right_limit(self) -> float:
        return float(self.oracle(1.0))

    @property
    def margin(self) -> float:
        """-log of the smallest closed-form value over β in [0, 1]"""
        beta = float(np.clip(-self.linear / (2.0 * self.quadratic), 0.0, 1.0))
        return -float(np.log(self.oracle(beta)))


CURVE_SETTINGS = {
    'centered_pstar': CurveSetting('centered_pstar', pstar_loc=0.0, quadratic=9.0 / 4.0,
                                 linear=-9.0 / 8.0),
    'shifted_pstar': CurveSetting('shifted_pstar', pstar_loc=1.0, quadratic=1.0 / 4.0,
                                  linear=-5.0 / 8.0),
}


def boundary_margin(theta, alpha):
    """-log P0(p_θ/p*)^α for N(0,1) data, p_θ = N(θ,1) and p* = N(1,1)"""
    theta, alpha = np.asarray(theta, dtype=float), np.asarray(alpha, dtype=float)
    return 0.5 * alpha * (theta - 1.0) * (theta + 1.0 - alpha * (theta - 1.0))


def curve_contracts(setting: CurveSetting, curve: TransformCurve, tol: float = 1e-6) -> List[Dict]:
    """Pointwise, endpoint and slope agreement of a sampled curve with its closed form"""
    worst = float(np.max(np.abs(curve.values - setting.oracle(curve.alphas))))
    return [
        contract_result(f"{setting.name}_pointwise", worst <= tol, f"max deviation {worst:.3e}"),
        contract_result(f"{setting.name}_endpoints",
                        abs(curve.left_limit - 1.0) <= tol
                        and abs(curve.right_limit - setting.right_limit) <= tol,
                        f"left {curve.left_limit:.12g}, right {curve.right_limit:.12g} "
                        f"(expected {setting.right_limit:.12g})"),
        contract_result(f"{setting.name}_slope", abs(curve.slope_at_zero - setting.linear) <= tol,
                        f"slope {curve.slope_at_zero:.12g} (expected {setting.linear:g})"),
    ]


def greedy_factor_cases(seed: int, count: int = 40) -> List[Tuple[np.ndarray, float]]:
    """The 11-point example followed by random one-dimensional instances of ≤ 12 points"""
    rng = make_rng(derive_seed(seed, 'greedy-cases', 0))
    cases = [(np.linspace(0.0, 1.0, 11), 0.05)]
    for _ in range(count):
        size = int(rng.integers(2, 13))
        cases.append((np.sort(rng.uniform(0.0, 1.0, size)), float(rng.uniform(0.02, 0.3))))
    return cases


def mixture_local_model(M: float, n_support: int, count: int, seed: int,
                        truth_scale: float = 1.5) -> Tuple[DiscreteModel, DensityHandle, DensityHandle]:
    """F* of N(0, truth_scale²) on a small support grid, followed by random mixtures"""
    support = support_grid(M, n_support)
    p0 = normal_density(0.0, truth_scale)
    F = project_mixture(p0, support, M=M)
    pstar = mixture_density(F)
    mixings = [F] + random_mixtures(support, M, count, derive_seed(seed, 'local-mixtures', 0))
    return DiscreteModel.from_mixtures(mixings, p0, pstar), p0, pstar


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

class VerificationSuite:
    """Runs every property contract with seeds derived from one master seed"""

    def __init__(self, seed: int, store: Optional[RecordStore] = None, n_tuples: int = 500,
                 power_reps: int = 100_000, cover_eps: float = 0.3,
                 evidence: Optional[Dict] = None, entropy: Optional[Dict] = None):
        self.seed = seed
        self.store = store
        self.n_tuples = n_tuples
        self.power_reps = power_reps
        self.cover_eps = cover_eps
        self.evidence = evidence or {'n': 200, 'eps': 0.15, 'C': 2.0, 'reps': 400}
        self.entropy = entropy or {'M': 2.0, 'eps_list': (0.2, 0.1, 0.05, 0.02),
                                   'n_probe': 10_000}
        self.checks: List[Tuple[str, Callable[[], List[Dict]]]] = [
            ('closed_form_transform', self.check_closed_form),
            ('curve_settings', self.check_curves),
            ('transform_properties', self.check_transform_properties),
            ('lr_tests', self.check_lr_tests),
            ('factorization', self.check_factorization),
            ('convex_geometry', self.check_convex_geometry),
            ('expansion_constants', self.check_expansion_constants),
            ('kl_minimality', self.check_kl_minimality),
            ('evidence', self.check_evidence),
            ('greedy_factor', self.check_greedy_factor),
            ('local_covers', self.check_local_covers),
            ('mixture_entropy', self.check_mixture_entropy),
            ('boundary_consistency', self.check_boundary_consistency),
        ]

    def run(self, only: Optional[List[str]] = None) -> List[Dict]:
        results = []
        for name, check in self.checks:
            if only and name not in only:
                continue
            logger.info(f"📤 contract group {name}")
            try:
                group = check()
            except MisspecError as e:
                group = [{'name': name, 'status': ContractStatus.ERROR,
                          'detail': f"{type(e).__name__}: {e}"}]
            for result in group:
                if result['status'] == ContractStatus.PASSED:
                    logger.info(f"✅ {result['name']}: {result['detail']}")
                else:
                    logger.error(f"❌ {result['name']}: {result['detail']}")
            results.extend(group)
        return results

    # -- Hellinger transforms ------------------------------------------------

    def check_closed_form(self) -> List[Dict]:
        p0, pstar = normal_density(0.0, 1.0), normal_density(1.0, 1.0)
        alphas = np.round(np.arange(1, 10) / 10.0, 1)
        worst = 0.0
        for theta in (1.2, 1.5, 2.0):
            q = q_of_p(normal_density(theta, 1.0), p0, pstar)
            numeric = np.array([-np.log(curve_value(p0, q, a)) for a in alphas])
            worst = max(worst, float(np.max(np.abs(numeric - boundary_margin(theta, alphas)))))
        return [contract_result('closed_form_transform', worst <= 1e-8, f"max deviation {worst:.3e}")]

    def check_curves(self) -> List[Dict]:
        results = []
        for setting in CURVE_SETTINGS.values():
            p0, q = setting.measures()
            results.extend(curve_contracts(setting, transform_curve(p0, q)))
        return results

    def check_transform_properties(self, n_pairs: int = 50) -> List[Dict]:
        """Limits and slope at zero on random (p0, c·N(b, t)) pairs; convexity is enforced
        by TransformCurve itself"""
        rng = make_rng(derive_seed(self.seed, 'transform-pairs', 0))
        worst_limit, worst_slope = 0.0, 0.0
        for _ in range(n_pairs):
            p0 = normal_density(rng.uniform(-1.0, 1.0), rng.uniform(0.7, 1.5))
            base = normal_density(rng.uniform(-1.0, 1.0), rng.uniform(0.8, 1.3))
            c = float(rng.uniform(0.5, 1.5))
            curve = transform_curve(p0, scaled_density(base, c))
            worst_limit = max(worst_limit, abs(curve.left_limit - 1.0),
                              abs(curve.right_limit - c))
            expected = np.log(c) - kl_divergence(p0, base)
            worst_slope = max(worst_slope, abs(curve.slope_at_zero - expected))
        return [contract_result('transform_limits', worst_limit <= 1e-8, f"max deviation {worst_limit:.3e}"),
                contract_result('transform_slope', worst_slope <= 1e-6, f"max deviation {worst_slope:.3e}")]

    # -- tests ---------------------------------------------------------------

    def check_lr_tests(self) -> List[Dict]:
        p0, q = normal_density(0.0, 1.0), normal_density(1.0, 1.0)
        risk, rho = sandwich_check(p0, q)
        expected = 2.0 * (1.0 - stats.norm.cdf(0.5))
        results = [
            contract_result('lr_risk', abs(risk - expected) <= 1e-10,
                            f"risk {risk:.15g}, expected {expected:.15g}"),
            contract_result('lr_sandwich', risk <= rho + 1e-12 and rho <= np.exp(-0.125) + 1e-10,
                            f"risk {risk:.6g} <= min rho {rho:.6g} <= exp(-1/8)"),
        ]
        power = iid_power_bound(normal_sampler(0.0, 1.0), q, 20, self.power_reps,
                                derive_seed(self.seed, 'power-n20', 0))
        results.append(contract_result('iid_power_n20', power.total <= np.exp(-2.5) + 3.0 * power.stderr,
                                       f"type1+type2 {power.total:.6g}, bound {np.exp(-2.5):.6g}, "
                                       f"stderr {power.stderr:.3g}"))
        return results

    def check_factorization(self) -> List[Dict]:
        p0, q = normal_density(0.0, 1.0), normal_density(1.0, 1.0)
        lhs, rhs = factorization_check(p0, q, p0, q, 0.5)
        hull_lhs, hull_rhs = factorization_check(p0, q, p0, [normal_density(1.0, 1.0),
                                                             normal_density(-1.0, 1.0)], 0.5)
        return [contract_result('factorization_singletons', abs(lhs - rhs) <= 1e-8,
                                f"lhs {lhs:.15g}, rhs {rhs:.15g}"),
                contract_result('factorization_hull', hull_lhs <= hull_rhs + 1e-8,
                                f"lhs {hull_lhs:.15g}, rhs {hull_rhs:.15g}")]

    # -- convex models -------------------------------------------------------

    def check_convex_geometry(self, n_mixtures: int = 100, n_tuples: int = 100) -> List[Dict]:
        """
        F* certificate, P0(p/p*) ≤ 1, the weighted-Hellinger lower bound on the margin,
        the convex-combination inequality and lower semicontinuity of KL along a
        discretizing sequence
        """
        M = 2.0
        support = support_grid(M, 21)
        p0 = normal_density(0.0, 1.5)
        F = project_mixture(p0, support, M=M)
        pstar = mixture_density(F)
        certificate = mixture_certificate(p0, F)
        worst_mass, worst_gap = 0.0, np.inf
        pool = random_mixtures(support, M, n_mixtures, derive_seed(self.seed, 'geometry', 0))
        for G in pool:
            p = mixture_density(G)
            q = q_of_p(p, p0, pstar)
            worst_mass = max(worst_mass, q.total_mass)
            margin = -np.log(curve_value(p0, q, 0.5))
            worst_gap = min(worst_gap, margin - weighted_hellinger_sq(p, pstar, p0, pstar))

        rng = make_rng(derive_seed(self.seed, 'geometry', 1))
        worst_combination = np.inf
        for _ in range(n_tuples):
            m = int(rng.integers(2, 5))
            picks = rng.choice(len(pool), size=m + 1, replace=False)
            components = [mixture_density(pool[i]) for i in picks[:m]]
            gap = combination_inequality_gap(p0, components, rng.dirichlet(np.ones(m)),
                                             mixture_density(pool[picks[m]]), pstar)
            worst_combination = min(worst_combination, gap)
        semicontinuity = kl_semicontinuity_gap(p0, F)
        return [contract_result('mixture_certificate', certificate <= 1.0 + 1e-6,
                                f"max_j P0[phi(x - z_j)/p*] = {certificate:.12g}"),
                contract_result('mixture_ratio_mass', worst_mass <= 1.0 + 1e-6,
                                f"max P0(p/p*) = {worst_mass:.12g}"),
                contract_result('mixture_margin_vs_distance', worst_gap >= -1e-10,
                                f"min margin - d^2 = {worst_gap:.3e}"),
                contract_result('mixture_combination_inequality', worst_combination >= -1e-8,
                                f"min margin - [sum d^2(P_i,P*) - 6 sum d^2(P_i,P)] = "
                                f"{worst_combination:.3e} over {n_tuples} tuples"),
                contract_result('mixture_kl_semicontinuity', semicontinuity >= -1e-6,
                                f"liminf KL(p0, p_F_n) - KL(p0, p_F) = {semicontinuity:.3e}")]

    def check_expansion_constants(self) -> List[Dict]:
        """Frozen constants against the calibration run and a fresh randomized family"""
        calibrated = rounded_up_constants(calibrate_constants(CALIBRATION_SEED, CALIBRATION_TUPLES))
        frozen = {**EXPANSION_CONSTANTS, 'kl_hellinger': KL_HELLINGER_CONSTANT}
        results = [contract_result('constants_calibration',
                                   all(calibrated[k] <= frozen[k] for k in frozen),
                                   f"rounded-up calibration {calibrated} vs hard-coded {frozen}")]
        ratios = calibrate_constants(derive_seed(self.seed, 'constants-fresh', 0), self.n_tuples)
        for form in ('hellinger', 'logarithmic'):
            worst = max(ratios[form], ratios[f"{form}_combination"])
            results.append(contract_result(f"expansion_{form}", worst <= EXPANSION_CONSTANTS[form],
                                           f"max ratio {worst:.6g} <= {EXPANSION_CONSTANTS[form]:g}"))
        worst = max(ratios['kl_ratio'], ratios['sqlog_ratio'])
        results.append(contract_result('kl_hellinger_bound', worst <= KL_HELLINGER_CONSTANT,
                                       f"max ratio {worst:.6g} <= {KL_HELLINGER_CONSTANT:g} "
                                       f"({int(ratios['skipped'])} tuples outside the regime)"))
        return results

    def check_kl_minimality(self) -> List[Dict]:
        p0, pstar = normal_density(0.0, 1.0), normal_density(1.0, 1.0)
        probes = [normal_density(t, 1.0) for t in np.linspace(1.05, 2.0, 20)]
        positive, excess = kl_minimality_check(p0, pstar, probes)
        return [contract_result('kl_minimality', positive and excess <= 1e-12,
                                f"all margins positive: {positive}, KL excess {excess:.3e}")]

    # -- evidence ------------------------------------------------------------

    def check_evidence(self) -> List[Dict]:
        e = self.evidence
        checks = EvidenceService().run(e['n'], e['eps'], e['C'], e['reps'],
                                       derive_seed(self.seed, 'evidence', 0))
        if self.store is not None:
            EvidenceService.write(checks, self.store)
        return [contract_result(f"evidence_{label}", c.passed,
                                f"violations {c.violation_freq:.4g} vs 1/(C^2 n eps^2) = {c.bound:.4g} "
                                f"(stderr {c.stderr:.3g})")
                for label, c in checks.items()]

    # -- covers --------------------------------------------------------------

    def check_greedy_factor(self) -> List[Dict]:
        worst = 0.0
        for points, eps in greedy_factor_cases(self.seed):
            greedy = covering_number(points, eps=eps).n_balls
            optimum = brute_force_cover(points, eps)
            worst = max(worst, greedy / optimum)
        return [contract_result('greedy_factor', worst <= 2.0, f"max greedy/optimum {worst:.4g}")]

    def check_local_covers(self) -> List[Dict]:
        family = normal_location_family(1.0, 2.0, metric=root_metric)
        p0, pstar = normal_density(0.0, 1.0), normal_density(1.0, 1.0)
        report = local_cover_for_testing(family, p0, pstar, self.cover_eps, theta_star=1.0,
                                         seed=derive_seed(self.seed, 'local-parametric', 0))
        model, p0m, pstarm = mixture_local_model(2.0, 9, 200, self.seed)
        to_star = model.distance(np.arange(len(model)), 0)
        eps = 0.5 * float(np.median(to_star[1:]))
        mixture_report = local_cover_for_testing(model, p0m, pstarm, eps, star=0, C=6.0, c=1.0,
                                                 seed=derive_seed(self.seed, 'local-mixture', 0))
        return [contract_result('local_cover_parametric', report.certified,
                                f"{report.n_balls} balls of radius {report.radius_used:.4g}"),
                contract_result('local_cover_mixture', mixture_report.certified,
                                f"{mixture_report.n_balls} balls at eps {eps:.4g}")]

    def check_mixture_entropy(self) -> List[Dict]:
        curve: EntropyCurve = mixture_entropy_curve(
            self.entropy['M'], self.entropy['eps_list'], n_probe=self.entropy['n_probe'],
            seed=derive_seed(self.seed, 'entropy', 0))
        ordered = sorted(curve.points)
        monotone = all(a[1] >= b[1] for a, b in zip(ordered, ordered[1:]))
        return [contract_result('entropy_exponent', 1.3 <= curve.gamma <= 2.7,
                                f"gamma {curve.gamma:.4f}"),
                contract_result('entropy_monotone', monotone, f"log covers {ordered}")]

    # -- boundary example ----------------------------------------------------

    def check_boundary_consistency(self, n_triples: int = 50, grid_points: int = 20001) -> List[Dict]:
        """Closed-form boundary mass against the grid posterior, c on cell edges"""
        rng = make_rng(derive_seed(self.seed, 'boundary-triples', 0))
        family = normal_location_family(1.0, 2.0)
        grid = ThetaGrid.uniform(1.0, 2.0, grid_points)
        h = 1.0 / grid_points
        worst = 0.0
        for _ in range(n_triples):
            n = int(rng.integers(10, 201))
            zn = float(rng.uniform(-2.0, 2.0))
            k = int(rng.integers(1, max(2, int(3.0 / (n * h)))))
            c = 1.0 + k * h
            weights = grid_posterior(grid, family, np.full(n, zn / np.sqrt(n)))
            numeric = float(weights[grid.thetas > c].sum())
            worst = max(worst, abs(numeric - boundary_posterior_mass(n, zn, c)))
        return [contract_result('boundary_consistency', worst <= 1e-4, f"max deviation {worst:.3e}")]
