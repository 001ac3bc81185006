"""
Built-in posterior scenarios and the per-replication engine dispatch
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from misspec.measures import (
    DensityHandle,
    MixingDistribution,
    mixture_density,
    normal_density,
    normal_location_family,
    normal_sampler,
    support_grid,
)
from misspec.posterior import (
    McmcConfig,
    PosteriorSummary,
    ScenarioSpec,
    ThetaGrid,
    grid_posterior,
    log_evidence,
    mixture_distances,
    mixture_log_evidence,
    mixture_posterior,
    posterior_quantile_radius,
    posterior_tail_mass,
    regression_posterior,
)
from misspec.projection import (
    ErrorLaw,
    PiecewiseConstantClass,
    RegressionSpec,
    project_mixture,
    project_parametric,
    project_regression,
)
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_N_LIST = {
    'parametric_interior': (100, 200, 400, 800, 1600, 3200, 6400),
    'parametric_boundary': (100, 200, 400, 800, 1600),
    'mixture': (100, 200, 400, 800, 1600),
    'regression_normal': (100, 200, 400, 800, 1600),
    'regression_laplace': (100, 200, 400, 800, 1600),
}

REGRESSION_F0 = (1.0, -0.5, 0.25)


def step_function(coefficients: Sequence[float]):
    coefficients = np.asarray(coefficients, dtype=float)
    cls = PiecewiseConstantClass(n_bins=coefficients.size, bound=np.inf)
    return lambda x: cls.evaluate(coefficients, x)


def parametric_interior(n_list=None, reps: int = 32, master_seed: int = 0,
                        truth_scale: float = np.sqrt(2.0), lower: float = -3.0,
                        upper: float = 3.0, grid_points: int = 6001,
                        tail_radius: float = 0.25) -> ScenarioSpec:
    """Truth N(0, truth_scale²), model N(θ, 1) with a flat prior on [lower, upper]"""
    return ScenarioSpec(name='parametric_interior', model='parametric_interior',
                        truth=normal_density(0.0, truth_scale),
                        prior=f"flat on [{lower:g}, {upper:g}], {grid_points} midpoints",
                        n_list=tuple(n_list or DEFAULT_N_LIST['parametric_interior']),
                        reps=reps, master_seed=master_seed, tail_radius=tail_radius,
                        sampler=normal_sampler(0.0, truth_scale),
                        family=normal_location_family(lower, upper),
                        theta_grid=ThetaGrid.uniform(lower, upper, grid_points))


def parametric_boundary(n_list=None, reps: int = 32, master_seed: int = 0,
                        grid_points: int = 20001, tail_radius: float = 0.05) -> ScenarioSpec:
    """Truth N(0, 1), model N(θ, 1) restricted to θ ∈ [1, 2]"""
    return ScenarioSpec(name='parametric_boundary', model='parametric_boundary',
                        truth=normal_density(0.0, 1.0),
                        prior=f"flat on [1, 2], {grid_points} midpoints",
                        n_list=tuple(n_list or DEFAULT_N_LIST['parametric_boundary']),
                        reps=reps, master_seed=master_seed, tail_radius=tail_radius,
                        sampler=normal_sampler(0.0, 1.0),
                        family=normal_location_family(1.0, 2.0),
                        theta_grid=ThetaGrid.uniform(1.0, 2.0, grid_points))


def mixture(n_list=None, reps: int = 8, master_seed: int = 0, truth_scale: float = 1.5,
            M: float = 2.0, support_points: int = 21, alpha_total: Optional[float] = None,
            mcmc: Optional[McmcConfig] = None, tail_radius: float = 0.1) -> ScenarioSpec:
    """
    Truth N(0, truth_scale²) fitted by location mixtures of N(z, 1) on a support grid

    The Dirichlet parameters are alpha_total times the cell masses of the uniform base
    measure on [-M, M] (alpha_total defaults to the number of support points).
    """
    support = support_grid(M, support_points)
    edges = np.concatenate([[-M], 0.5 * (support[1:] + support[:-1]), [M]])
    total = float(alpha_total) if alpha_total is not None else float(support_points)
    alpha = total * np.diff(edges) / (2.0 * M)
    return ScenarioSpec(name='mixture', model='mixture',
                        truth=normal_density(0.0, truth_scale),
                        prior=f"Dirichlet({total:g} x uniform cell masses) on {support_points} points",
                        n_list=tuple(n_list or DEFAULT_N_LIST['mixture']),
                        reps=reps, master_seed=master_seed, tail_radius=tail_radius,
                        sampler=normal_sampler(0.0, truth_scale), support=support,
                        dirichlet_alpha=alpha, mcmc=mcmc or McmcConfig())


def regression(likelihood: str = 'normal', n_list=None, reps: int = 16, master_seed: int = 0,
               f0_coefficients: Sequence[float] = REGRESSION_F0, bound: float = 10.0,
               error: Optional[ErrorLaw] = None, points_per_axis: int = 31,
               tail_radius: float = 0.25) -> ScenarioSpec:
    """
    Step-function regression on three bins of [0, 1]

    normal likelihood: Laplace errors scaled to unit variance;
    laplace likelihood: N(0.5, 1) errors, so the target shifts by the median.
    """
    if error is None:
        error = (ErrorLaw.laplace(0.0, 1.0 / np.sqrt(2.0)) if likelihood == 'normal'
                 else ErrorLaw.normal(0.5, 1.0))
    f0_coefficients = tuple(float(c) for c in f0_coefficients)
    spec = RegressionSpec(f0=step_function(f0_coefficients), error=error,
                          function_class=PiecewiseConstantClass(n_bins=len(f0_coefficients),
                                                                bound=bound),
                          likelihood=likelihood)
    name = f"regression_{likelihood}"
    return ScenarioSpec(name=name, model=name, truth=spec,
                        prior=f"uniform on [-{bound:g}, {bound:g}]^{len(f0_coefficients)}",
                        n_list=tuple(n_list or DEFAULT_N_LIST[name]), reps=reps,
                        master_seed=master_seed, tail_radius=tail_radius,
                        points_per_axis=points_per_axis)


BUILDERS = {
    'parametric_interior': parametric_interior,
    'parametric_boundary': parametric_boundary,
    'mixture': mixture,
    'regression_normal': lambda **kw: regression(likelihood='normal', **kw),
    'regression_laplace': lambda **kw: regression(likelihood='laplace', **kw),
}


def build_scenario(model: str, **options) -> ScenarioSpec:
    if model not in BUILDERS:
        raise ValueError(f"unknown scenario {model!r}; expected one of {sorted(BUILDERS)}")
    return BUILDERS[model](**options)


# ---------------------------------------------------------------------------
# Targets and replications
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioTarget:
    """The minimal-KL point of a scenario's model"""
    pstar: Optional[DensityHandle] = None
    theta_star: Optional[float] = None
    mixing: Optional[MixingDistribution] = None
    coefficients: Optional[np.ndarray] = None
    kl_min: float = float('nan')

    def describe(self) -> Dict[str, object]:
        if self.theta_star is not None:
            return {'theta_star': self.theta_star, 'kl_min': self.kl_min}
        if self.mixing is not None:
            return {'support': self.mixing.support.tolist(), 'weights': self.mixing.weights.tolist()}
        return {'coefficients': np.asarray(self.coefficients).tolist()}


def resolve_target(scenario: ScenarioSpec, n_mc: int = 200_000) -> ScenarioTarget:
    if scenario.model.startswith('parametric'):
        theta_star, kl_min = project_parametric(scenario.family, scenario.truth)
        return ScenarioTarget(pstar=scenario.family.density(theta_star), theta_star=theta_star,
                              kl_min=kl_min)
    if scenario.model == 'mixture':
        F = project_mixture(scenario.truth, scenario.support)
        return ScenarioTarget(pstar=mixture_density(F), mixing=F)
    coefficients = project_regression(scenario.truth, n_mc=n_mc, seed=scenario.master_seed)
    return ScenarioTarget(coefficients=coefficients)


def replicate(scenario: ScenarioSpec, target: ScenarioTarget, n: int, rep: int) -> PosteriorSummary:
    """Draw one dataset of size n and summarize the posterior around the target"""
    seed = scenario.seed_for(n, rep)
    rng = make_rng(seed)
    diagnostics: Dict[str, float] = {}

    if scenario.model.startswith('parametric'):
        data = scenario.sampler.draw_with(rng, n)
        grid = scenario.theta_grid
        weights = grid_posterior(grid, scenario.family, data)
        distances = np.abs(grid.thetas - target.theta_star)
        evidence = float(np.exp(log_evidence(grid, scenario.family, data, target.theta_star)))
        mean = float(weights @ grid.thetas)
        diagnostics.update(mode=float(grid.thetas[int(np.argmax(weights))]), mean=mean,
                           sd=float(np.sqrt(weights @ (grid.thetas - mean) ** 2)),
                           root_radius=posterior_quantile_radius(np.sqrt(distances), weights))

    elif scenario.model == 'mixture':
        data = scenario.sampler.draw_with(rng, n)
        posterior = mixture_posterior(data, scenario.support, scenario.dirichlet_alpha,
                                      scenario.mcmc, seed=int(rng.integers(2 ** 63)))
        distances = mixture_distances(posterior.weights, scenario.support, target.mixing,
                                      scenario.truth, target.pstar)
        weights = np.full(distances.size, 1.0 / distances.size)
        log_ev, rel_stderr = mixture_log_evidence(data, scenario.support, scenario.dirichlet_alpha,
                                                  target.pstar, seed=int(rng.integers(2 ** 63)))
        evidence = float(np.exp(log_ev))
        diagnostics.update(acceptance=posterior.acceptance, proposal_scale=posterior.proposal_scale,
                           median_distance=float(np.median(distances)),
                           evidence_rel_stderr=rel_stderr)

    else:
        spec: RegressionSpec = scenario.truth
        x, y = spec.simulate(rng, n)
        posterior = regression_posterior(spec, x, y, scenario.points_per_axis,
                                         reference=target.coefficients)
        weights = posterior.weights
        distances = spec.function_class.l2_distance(posterior.points, target.coefficients,
                                                    spec.covariate_law)
        evidence = float(np.exp(posterior.log_evidence))
        for b, (m, s) in enumerate(zip(posterior.mean(), posterior.sd())):
            diagnostics[f"mean_{b}"] = float(m)
            diagnostics[f"sd_{b}"] = float(s)

    return PosteriorSummary(n=n, rep=rep, seed=seed,
                            tail_mass=posterior_tail_mass(distances, weights, scenario.tail_radius),
                            quantile_radius=posterior_quantile_radius(distances, weights),
                            evidence=evidence, diagnostics=diagnostics)
