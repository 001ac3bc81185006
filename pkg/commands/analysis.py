"""
Analysis Commands
Deterministic numerical tables: transform curves, minimal-KL points, test bounds and covers
"""
import logging
from typing import Dict, List

import numpy as np

from commands.context import RUN_ARGUMENTS, RunContext
from configs.status import contract_result
from misspec.divergence import min_transform, transform_curve
from misspec.entropy import (
    brute_force_cover,
    covering_number,
    cover_radius_factor,
    local_cover_for_testing,
    mixture_entropy_curve,
)
from misspec.errors import MisspecError
from misspec.measures import (
    absolute_metric,
    envelope_ratio_bound,
    normal_density,
    normal_location_family,
    normal_sampler,
    root_metric,
)
from misspec.projection import (
    assert_phi_curvature,
    mixture_certificate,
    regression_kl,
)
from misspec.scenarios import build_scenario, resolve_target
from misspec.testing import (
    build_shell_cover,
    estimate_shell_errors,
    iid_power_bound,
    kl_minimality_check,
    power_decay_violations,
    sandwich_check,
    shell_test,
)
from services.verification import CURVE_SETTINGS, curve_contracts, greedy_factor_cases
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class AnalysisCommands:
    """Commands that evaluate closed-form settings and write their tables"""

    def __init__(self):
        self.commands = self._define_commands()

    def _define_commands(self) -> List[Dict]:
        return [
            {
                'name': 'curve',
                'description': 'Hellinger transform curve of a built-in setting with its '
                               'endpoints, slope at zero and minimum',
                'input_schema': RUN_ARGUMENTS
            },
            {
                'name': 'project',
                'description': 'Minimal-KL point of the configured scenario with its '
                               'optimality checks',
                'input_schema': RUN_ARGUMENTS
            },
            {
                'name': 'test-bounds',
                'description': 'Likelihood ratio test risks and n-sample error bounds against '
                               'Monte Carlo estimates',
                'input_schema': RUN_ARGUMENTS
            },
            {
                'name': 'cover',
                'description': 'Greedy covers, certified local covers and the mixture entropy curve',
                'input_schema': RUN_ARGUMENTS
            },
        ]

    def call_command(self, name: str, context: RunContext) -> Dict:
        """Execute a command"""
        method_map = {
            'curve': lambda: self._handle_curve(context),
            'project': lambda: self._handle_project(context),
            'test-bounds': lambda: self._handle_test_bounds(context),
            'cover': lambda: self._handle_cover(context),
        }

        if name not in method_map:
            return {'error': f'Command {name} not found'}

        try:
            return {'contracts': method_map[name]()}
        except MisspecError as e:
            return {'error': f"{type(e).__name__}: {e}"}

    # ============= CURVE =============

    def _handle_curve(self, context: RunContext) -> List[Dict]:
        setting = CURVE_SETTINGS[context.config.curve]
        p0, q = setting.measures()
        curve = transform_curve(p0, q, context.config.n_alphas)
        alpha, rho = min_transform(p0, q)
        context.store.write_table(f"curve_{setting.name}.csv", ('alpha', 'rho'), curve.to_rows())
        context.store.write_summary(f"curve_{setting.name}.txt", {
            'setting': setting.name,
            'left_limit': curve.left_limit,
            'right_limit': curve.right_limit,
            'slope_at_zero': curve.slope_at_zero,
            'beta_star': 1.0 - alpha,
            'min_rho': rho,
            'margin': -np.log(rho),
        })
        margin_gap = abs(-np.log(rho) - setting.margin)
        return curve_contracts(setting, curve) + [
            contract_result(f"{setting.name}_margin", margin_gap <= 1e-6,
                            f"-log min rho {-np.log(rho):.12g}, expected {setting.margin:.12g}")]

    # ============= PROJECT =============

    def _handle_project(self, context: RunContext) -> List[Dict]:
        cfg = context.config
        scenario = build_scenario(cfg.scenario, **cfg.scenario_options(context.seed))
        target = resolve_target(scenario)
        name = scenario.name
        context.store.write_summary(f"project_{name}.txt", {'scenario': name, **target.describe()})

        if scenario.model.startswith('parametric'):
            family = scenario.family
            context.store.write_table(f"project_{name}.csv", ('theta_star', 'kl_min'),
                                      [(target.theta_star, target.kl_min)])
            thetas = np.linspace(family.lower, family.upper, 41)
            probes = [family.density(float(t)) for t in thetas if abs(t - target.theta_star) > 1e-3]
            positive, excess = kl_minimality_check(scenario.truth, target.pstar, probes)
            return [contract_result(f"project_{name}_kl_minimality", positive and excess <= 1e-12,
                                    f"all margins positive: {positive}, KL excess {excess:.3e}")]

        if scenario.model == 'mixture':
            F = target.mixing
            context.store.write_table(f"project_{name}.csv", ('support', 'weight'),
                                      zip(F.support.tolist(), F.weights.tolist()))
            certificate = mixture_certificate(scenario.truth, F)
            ratio, bound = envelope_ratio_bound(scenario.truth, F.M)
            return [contract_result(f"project_{name}_certificate", certificate <= 1.0 + 1e-6,
                                    f"max_j P0[phi(x - z_j)/p*] = {certificate:.12g}"),
                    contract_result(f"project_{name}_envelope", ratio <= bound,
                                    f"P0(U/L) = {ratio:.6g} <= {bound:.6g}")]

        spec = scenario.truth
        bins = spec.function_class.n_bins
        edges = np.linspace(0.0, 1.0, bins + 1)
        f0 = np.asarray(spec.f0(0.5 * (edges[1:] + edges[:-1])), dtype=float)
        shift = spec.error_mean if spec.likelihood == 'normal' else spec.error_median
        coefficients = np.asarray(target.coefficients)
        context.store.write_table(f"project_{name}.csv", ('bin', 'coefficient', 'f0', 'shift'),
                                  [(b, coefficients[b], f0[b], shift) for b in range(bins)])
        gap = float(np.max(np.abs(coefficients - f0 - shift)))
        kl, stderr = regression_kl(spec, coefficients, seed=derive_seed(context.seed, 'kl', 0))
        results = [contract_result(f"project_{name}_location", gap <= 1e-4,
                                   f"max |f* - f0 - {shift:g}| = {gap:.3e}"),
                   contract_result(f"project_{name}_kl", kl <= 3.0 * stderr,
                                   f"-P0 log(p_f*/p_f0) = {kl:.6g} (stderr {stderr:.3g})")]
        if spec.likelihood == 'laplace':
            assert_phi_curvature(spec.error)
            results.append(contract_result(f"project_{name}_phi_curvature", True,
                                           f"Phi strictly convex for {spec.error.label}"))
        return results

    # ============= TEST BOUNDS =============

    def _handle_test_bounds(self, context: RunContext) -> List[Dict]:
        cfg = context.config
        store = context.store
        results = []

        normal_p0, normal_q = normal_density(0.0, 1.0), normal_density(1.0, 1.0)
        left_p0, left_q = CURVE_SETTINGS['centered_pstar'].measures()
        lr_rows = []
        for label, (p0, q) in (('normal', (normal_p0, normal_q)),
                               ('centered_pstar', (left_p0, left_q))):
            risk, rho = sandwich_check(p0, q)
            lr_rows.append((label, risk, rho))
            results.append(contract_result(f"lr_sandwich_{label}", risk <= rho + 1e-12,
                                           f"risk {risk:.10g} <= min rho {rho:.10g}"))
        store.write_table('test_bounds_lr.csv', ('setting', 'risk', 'min_rho'), lr_rows)

        power_rows = []
        normal_estimates = []
        runs = [('normal', normal_sampler(0.0, 1.0), normal_q, n) for n in cfg.power_n]
        runs.append(('centered_pstar', normal_sampler(0.0, np.sqrt(2.0)), left_q, 10))
        for label, sampler, q, n in runs:
            estimate = iid_power_bound(sampler, q, n, cfg.power_reps,
                                       derive_seed(context.seed, f"power-{label}-n{n}", 0))
            power_rows.append((label, n, estimate.type1_hat, estimate.type2_hat, estimate.total,
                               estimate.bound, estimate.stderr, estimate.ess))
            if label == 'normal':
                normal_estimates.append((n, estimate))
            results.append(contract_result(f"power_{label}_n{n}",
                                           estimate.total <= estimate.bound + 3.0 * estimate.stderr,
                                           f"type1+type2 {estimate.total:.6g}, bound {estimate.bound:.6g}"))
        ns = [n for n, _ in normal_estimates]
        violations = power_decay_violations(ns, [e for _, e in normal_estimates])
        results.append(contract_result('power_normal_decay', not violations,
                                       f"type1+type2 over n={ns}: "
                                       f"{[round(e.total, 6) for _, e in normal_estimates]}, "
                                       f"increases beyond 3 stderr at {violations}"))
        store.write_table('test_bounds_power.csv', ('setting', 'n', 'type1', 'type2', 'total',
                                                    'bound', 'stderr', 'ess'), power_rows)

        results.extend(self._shell_bounds(context))
        return results

    def _shell_bounds(self, context: RunContext) -> List[Dict]:
        """Shell tests around the boundary point of N(θ, 1), θ ∈ [1, 2], for N(0, 1) data"""
        cfg = context.config
        family = normal_location_family(1.0, 2.0)
        p0, pstar = normal_density(0.0, 1.0), family.density(1.0)
        eps, J = cfg.shell_eps, cfg.shell_J
        cover = build_shell_cover(family, p0, pstar, 1.0, eps, cfg.shell_jmax,
                                  seed=derive_seed(context.seed, 'shell-cover', 0))
        context.store.write_table('test_bounds_shell_cover.csv',
                                  ('j', 'lower', 'upper', 'worst', 'margin'), cover.to_rows())
        result = shell_test(cover, family, p0, pstar, cfg.shell_n, J)

        d = absolute_metric(np.linspace(1.0, 2.0, 21), 1.0)
        thetas = np.linspace(1.0, 2.0, 21)[(d > J * eps + 1e-9) & (d <= (cfg.shell_jmax + 1) * eps)]
        errors = estimate_shell_errors(result, normal_sampler(0.0, 1.0), family, pstar, thetas,
                                       cfg.shell_n, cfg.shell_reps,
                                       derive_seed(context.seed, 'shell-errors', 0))
        type1, type1_se = errors['type1']
        rows = [('type1', float('nan'), type1, type1_se, result.type1_bound,
                 result.type1_bound_monotone)]
        rows += [('type2', theta, value, se, result.type2_bound, float('nan'))
                 for theta, (value, se) in errors['type2'].items()]
        context.store.write_table('test_bounds_shell.csv',
                                  ('error', 'theta', 'estimate', 'stderr', 'bound',
                                   'monotone_bound'), rows)

        results = [contract_result('shell_type1', type1 <= result.type1_bound + 3.0 * type1_se,
                                   f"type1 {type1:.6g} <= {result.type1_bound:.6g}")]
        if errors['type2']:
            worst_theta, (worst, worst_se) = max(errors['type2'].items(), key=lambda kv: kv[1][0])
            results.append(contract_result('shell_type2', worst <= result.type2_bound + 3.0 * worst_se,
                                           f"worst type2 {worst:.6g} at theta {worst_theta:g} "
                                           f"<= {result.type2_bound:.6g}"))
        return results

    # ============= COVER =============

    def _handle_cover(self, context: RunContext) -> List[Dict]:
        cfg = context.config
        store = context.store
        results = []

        greedy_rows = []
        for points, eps in greedy_factor_cases(context.seed):
            greedy = covering_number(points, eps=eps).n_balls
            greedy_rows.append((len(points), eps, greedy, brute_force_cover(points, eps)))
        store.write_table('cover_greedy.csv', ('n_points', 'eps', 'greedy', 'brute_force'),
                          greedy_rows)
        worst = max(g / b for _, _, g, b in greedy_rows)
        results.append(contract_result('cover_greedy_factor', worst <= 2.0,
                                       f"max greedy/optimum {worst:.4g}"))

        # annulus ε < |θ - θ*| < 2ε in one dimension at radius Aε
        A = cover_radius_factor(1.0, 1.0)
        eps = cfg.cover_eps
        line = np.linspace(-3.0 * eps, 3.0 * eps, 6001)
        annulus = line[(np.abs(line) > eps) & (np.abs(line) < 2.0 * eps)]
        annulus_cover = covering_number(annulus, eps=A * eps)
        results.append(contract_result('cover_annulus', annulus_cover.n_balls <= 8.0 / A,
                                       f"{annulus_cover.n_balls} balls <= 8/A = {8.0 / A:g}"))

        family = normal_location_family(1.0, 2.0, metric=root_metric)
        report = local_cover_for_testing(family, normal_density(0.0, 1.0), family.density(1.0),
                                         eps, theta_star=1.0,
                                         seed=derive_seed(context.seed, 'local-parametric', 0))
        store.write_table('cover_local.csv', ('center', 'radius', 'margin'), report.to_rows())
        results.append(contract_result('cover_local_certified', report.certified,
                                       f"{report.n_balls} balls of radius {report.radius_used:.4g}"))

        curve = mixture_entropy_curve(cfg.M, cfg.entropy_eps, n_probe=cfg.entropy_probes,
                                      seed=derive_seed(context.seed, 'entropy', 0))
        store.write_table('cover_entropy.csv', ('eps', 'log_cover'), curve.to_rows())
        store.write_summary('cover_entropy.txt', {'M': cfg.M, 'n_probe': curve.n_probe,
                                                  'c': curve.c, 'gamma': curve.gamma})
        ordered = sorted(curve.points)
        results.append(contract_result('cover_entropy_exponent', 1.3 <= curve.gamma <= 2.7,
                                       f"gamma {curve.gamma:.4f}"))
        results.append(contract_result('cover_entropy_monotone',
                                       all(a[1] >= b[1] for a, b in zip(ordered, ordered[1:])),
                                       f"log covers {ordered}"))
        return results


# Global instance
analysis_commands = AnalysisCommands()
