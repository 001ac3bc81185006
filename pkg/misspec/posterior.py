"""
Posterior engines and concentration summaries
Grid posteriors for one-parameter families, a Metropolis sampler for Dirichlet-weighted
mixtures and tensor grids for step-function regression
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import log_ndtr, logsumexp

from misspec.divergence import kl_moments
from misspec.errors import (
    DegeneratePosteriorError,
    PriorMassError,
    RateFitError,
    SamplerTuningError,
)
from misspec.measures import (
    DensityHandle,
    MixingDistribution,
    ParametricFamily,
    Sampler,
    default_grid,
    dirichlet_sampler,
    kernel_log_matrix,
    kernel_matrix,
    mc_expectation,
)
from misspec.projection import RegressionSpec
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

MODELS = ('parametric_interior', 'parametric_boundary', 'mixture',
          'regression_normal', 'regression_laplace')
QUANTILE_LEVEL = 0.9
ACCEPTANCE_LIMITS = (0.02, 0.95)
ACCEPTANCE_WINDOW = (0.1, 0.6)
MIN_PRIOR_HITS = 30
PRIOR_RECOVERY_Z = 3.0


@dataclass(frozen=True)
class PosteriorSummary:
    n: int
    tail_mass: float
    quantile_radius: float
    evidence: float
    seed: int
    rep: int = 0
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not -1e-12 <= self.tail_mass <= 1.0 + 1e-12:
            raise ValueError(f"tail mass {self.tail_mass!r} outside [0, 1]")
        if self.quantile_radius < 0:
            raise ValueError("quantile radius must be nonnegative")


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """
    One posterior experiment: truth, model, prior and the sample-size ladder

    truth is a DensityHandle for density models and a RegressionSpec for regression.
    Engine inputs that only some models use are optional.
    """
    name: str
    model: str
    truth: object
    prior: str
    n_list: Tuple[int, ...]
    reps: int
    master_seed: int
    tail_radius: float = 0.25
    sampler: Optional[Sampler] = None
    family: Optional[ParametricFamily] = None
    theta_grid: Optional['ThetaGrid'] = None
    support: Optional[np.ndarray] = None
    dirichlet_alpha: Optional[np.ndarray] = None
    mcmc: Optional['McmcConfig'] = None
    points_per_axis: int = 31

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list or n_list[0] < 0 or any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ValueError(f"n_list must be strictly increasing, got {n_list}")
        object.__setattr__(self, 'n_list', n_list)
        if self.reps < 8:
            raise ValueError(f"reps must be at least 8, got {self.reps}")

    def seed_for(self, n: int, rep: int) -> int:
        return derive_seed(self.master_seed, f"{self.name}-n{n}", rep)


# ---------------------------------------------------------------------------
# Grid posteriors
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ThetaGrid:
    """Midpoints of equal cells on [lower, upper] with prior weights"""
    thetas: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        if self.thetas.shape != self.prior.shape:
            raise ValueError("one prior weight per grid point is required")
        if np.any(self.prior < 0) or abs(float(self.prior.sum()) - 1.0) > 1e-10:
            raise ValueError("prior weights must lie on the simplex")

    @classmethod
    def uniform(cls, lower: float, upper: float, n_points: int) -> 'ThetaGrid':
        h = (upper - lower) / n_points
        thetas = lower + h * (np.arange(n_points) + 0.5)
        return cls(thetas=thetas, prior=np.full(n_points, 1.0 / n_points))

    @property
    def log_prior(self) -> np.ndarray:
        with np.errstate(divide='ignore'):
            return np.log(self.prior)


def _normalize_log(log_weights: np.ndarray) -> np.ndarray:
    top = np.max(log_weights)
    if not np.isfinite(top):
        raise DegeneratePosteriorError("every posterior weight is zero; data and model are incompatible")
    weights = np.exp(log_weights - top)
    total = weights.sum()
    if total == 0.0:
        raise DegeneratePosteriorError("posterior weights underflow to zero after normalization")
    return weights / total


def grid_posterior(grid: ThetaGrid, family: ParametricFamily, data) -> np.ndarray:
    """Posterior weights ∝ prior·Π p_θ(X_i), normalized in log space"""
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        return grid.prior.copy()
    return _normalize_log(grid.log_prior + family.log_likelihood(grid.thetas, data))


def log_evidence(grid: ThetaGrid, family: ParametricFamily, data, theta_star: float) -> float:
    """log ∫ Π (p_θ/p*)(X_i) dΠ(θ) on the grid"""
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        return 0.0
    ll = family.log_likelihood(grid.thetas, data)
    return float(logsumexp(grid.log_prior + ll) - family.log_likelihood([theta_star], data)[0])


def posterior_tail_mass(distances, weights, r: float) -> float:
    """Posterior mass of {d ≥ r}"""
    distances = np.asarray(distances, dtype=float)
    return float(np.clip(np.sum(np.asarray(weights)[distances >= r]), 0.0, 1.0))


def posterior_quantile_radius(distances, weights, level: float = QUANTILE_LEVEL) -> float:
    """Smallest r with posterior mass of {d ≤ r} at least level; ties keep the smallest index"""
    distances = np.asarray(distances, dtype=float)
    order = np.argsort(distances, kind='stable')
    cumulative = np.cumsum(np.asarray(weights, dtype=float)[order])
    index = int(np.searchsorted(cumulative, level - 1e-12))
    return float(distances[order[min(index, order.size - 1)]])


# ---------------------------------------------------------------------------
# Boundary example
# ---------------------------------------------------------------------------

def _log_ndtr_diff(a, b):
    """log(Φ(b) - Φ(a)) for a < b, through the upper tail when a > 0"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    with np.errstate(invalid='ignore', divide='ignore'):
        upper = log_ndtr(-a) + np.log1p(-np.exp(log_ndtr(-b) - log_ndtr(-a)))
        lower = log_ndtr(b) + np.log1p(-np.exp(log_ndtr(a) - log_ndtr(b)))
    return np.where(a > 0, upper, lower)


def boundary_posterior_mass(n: int, zn: float, c: float) -> float:
    """
    Posterior mass of [c, 2] under N(θ, 1), θ ∈ [1, 2], flat prior and Z_n = √n·X̄:
    (Φ(2√n - Z_n) - Φ(c√n - Z_n)) / (Φ(2√n - Z_n) - Φ(√n - Z_n))
    """
    if not 1.0 <= c <= 2.0:
        raise ValueError(f"c must lie in [1, 2], got {c!r}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if c == 1.0:
        return 1.0
    if c == 2.0:
        return 0.0
    root = np.sqrt(n)
    top = 2.0 * root - zn
    log_mass = _log_ndtr_diff(c * root - zn, top) - _log_ndtr_diff(root - zn, top)
    return float(np.clip(np.exp(log_mass), 0.0, 1.0))


def boundary_mass_mills(n: int, zn: float, c: float) -> float:
    """Mills-ratio approximation 1 - Φ(x) ≈ ϕ(x)/x of the boundary mass"""
    a, a1 = c * np.sqrt(n) - zn, np.sqrt(n) - zn
    if a1 <= 0:
        raise ValueError("the Mills approximation needs √n > Z_n")
    return float(a1 / a * np.exp(-0.5 * (a * a - a1 * a1)))


# ---------------------------------------------------------------------------
# Mixture posterior
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class McmcConfig:
    steps: int = 20_000
    burnin: int = 5_000
    proposal_scale: float = 0.3
    thin: int = 10
    adapt_every: int = 100
    target_acceptance: float = 0.25

    def __post_init__(self):
        if self.steps <= self.burnin or self.burnin < 0:
            raise ValueError("steps must exceed burnin")
        if self.proposal_scale <= 0 or self.thin < 1:
            raise ValueError("proposal_scale must be positive and thin at least 1")


@dataclass(frozen=True, eq=False)
class MixturePosterior:
    support: np.ndarray
    weights: np.ndarray
    acceptance: float
    proposal_scale: float
    M: float

    @property
    def draws(self) -> List[MixingDistribution]:
        return [MixingDistribution(support=self.support, weights=w, M=self.M) for w in self.weights]

    def mean_weights(self) -> np.ndarray:
        return self.weights.mean(axis=0)

    def stderr(self, n_batches: int = 20) -> np.ndarray:
        return batch_means_stderr(self.weights, n_batches)


def batch_means_stderr(samples, n_batches: int = 20) -> np.ndarray:
    """Standard error of the mean of a correlated chain by non-overlapping batch means"""
    samples = np.asarray(samples, dtype=float)
    size = samples.shape[0] // n_batches
    if size < 1:
        raise ValueError("too few draws for batch means")
    batches = samples[:size * n_batches].reshape((n_batches, size) + samples.shape[1:]).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


def _softmax_alr(eta: np.ndarray) -> np.ndarray:
    full = np.append(eta, 0.0)
    return np.exp(full - logsumexp(full))


def mixture_posterior(data, support, dirichlet_alpha, mcmc: Optional[McmcConfig] = None,
                      seed: int = 0, M: Optional[float] = None) -> MixturePosterior:
    """
    Random-walk Metropolis on additive-log-ratio coordinates of the weights

    In those coordinates a Dirichlet(α) prior has density ∝ Π w_k^{α_k}, so the target is
    Σ α_k log w_k + Σ_i log Σ_k w_k ϕ(X_i - z_k). The proposal scale adapts during burn-in only.
    """
    mcmc = mcmc or McmcConfig()
    support = np.asarray(support, dtype=float)
    alpha = np.asarray(dirichlet_alpha, dtype=float)
    if alpha.shape != support.shape or np.any(alpha <= 0):
        raise ValueError("dirichlet_alpha must be strictly positive, one per support point")
    M = float(np.max(np.abs(support))) if M is None else M
    data = np.asarray(data, dtype=float)
    log_kernel = kernel_log_matrix(data, support) if data.size else np.zeros((0, support.size))
    rng = make_rng(seed)

    def log_target(w):
        with np.errstate(divide='ignore'):
            log_w = np.log(w)
        value = float(np.dot(alpha, log_w))
        if data.size:
            value += float(logsumexp(log_kernel + log_w[None, :], axis=1).sum())
        return value

    eta = np.zeros(support.size - 1)
    w = _softmax_alr(eta)
    current = log_target(w)
    scale = mcmc.proposal_scale
    kept, accepted, window_accepted = [], 0, 0
    for step in range(mcmc.steps):
        proposal = eta + scale * rng.standard_normal(eta.size)
        w_new = _softmax_alr(proposal)
        value = log_target(w_new)
        if np.log(rng.uniform()) < value - current:
            eta, w, current = proposal, w_new, value
            window_accepted += 1
            if step >= mcmc.burnin:
                accepted += 1
        if step < mcmc.burnin and (step + 1) % mcmc.adapt_every == 0:
            rate = window_accepted / mcmc.adapt_every
            scale *= np.exp(rate - mcmc.target_acceptance)
            window_accepted = 0
        if step >= mcmc.burnin and (step - mcmc.burnin) % mcmc.thin == 0:
            kept.append(w)

    acceptance = accepted / (mcmc.steps - mcmc.burnin)
    if not ACCEPTANCE_LIMITS[0] <= acceptance <= ACCEPTANCE_LIMITS[1]:
        raise SamplerTuningError(
            f"acceptance rate {acceptance:.3f} outside {ACCEPTANCE_LIMITS}; change proposal_scale",
            acceptance=acceptance)
    if not ACCEPTANCE_WINDOW[0] <= acceptance <= ACCEPTANCE_WINDOW[1]:
        logger.warning(f"mixture sampler acceptance {acceptance:.3f} outside {ACCEPTANCE_WINDOW}")
    return MixturePosterior(support=support, weights=np.array(kept), acceptance=acceptance,
                            proposal_scale=float(scale), M=M)


def mixture_prior_recovery(support, dirichlet_alpha, mcmc: Optional[McmcConfig] = None,
                           seed: int = 0, chain_factor: int = 4) -> np.ndarray:
    """
    |draw mean - α/Σα| in batch-means stderr units, one entry per weight

    The sampler runs on no data, so its target is the Dirichlet prior itself; the
    post-burnin part of the chain is chain_factor times that of mcmc.
    """
    mcmc = mcmc or McmcConfig()
    mcmc = replace(mcmc, steps=mcmc.burnin + chain_factor * (mcmc.steps - mcmc.burnin))
    alpha = np.asarray(dirichlet_alpha, dtype=float)
    posterior = mixture_posterior(np.empty(0), support, alpha, mcmc, seed=seed)
    return np.abs(posterior.mean_weights() - alpha / alpha.sum()) / posterior.stderr()


def mixture_log_evidence(data, support, dirichlet_alpha, pstar: DensityHandle,
                         draws: int = 2000, seed: int = 0) -> Tuple[float, float]:
    """
    log ∫ Π (p_F/p*)(X_i) dΠ(F) by Monte Carlo over Dirichlet prior draws

    Returns:
        (log evidence, relative standard error of the evidence)
    """
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        return 0.0, 0.0
    kernel = kernel_matrix(data, np.asarray(support, dtype=float))
    base = float(np.sum(pstar.logpdf(data)))
    top = {}

    def scaled_ratio(weights):
        ll = np.log(kernel @ weights.T).sum(axis=0) - base
        top['ll'] = float(ll.max())
        return np.exp(ll - top['ll'])

    mean, stderr = mc_expectation(dirichlet_sampler(dirichlet_alpha), scaled_ratio, draws, seed)
    return top['ll'] + float(np.log(mean)), stderr / mean


def mixture_distances(weights, support, reference: MixingDistribution, p0: DensityHandle,
                      pstar: DensityHandle, grid=None, factor: float = 0.25) -> np.ndarray:
    """Weighted Hellinger distance of each weight row (on support) to the reference mixture"""
    grid = grid or default_grid(order=16)
    x = grid.points
    roots = np.sqrt(np.maximum(kernel_matrix(x, support) @ np.atleast_2d(weights).T, 0.0))
    base = np.sqrt(kernel_matrix(x, reference.support) @ reference.weights)
    weight = factor * grid.weights * np.exp(p0.logpdf(x) - pstar.logpdf(x))
    diff = roots - base[:, None]
    return np.sqrt(np.maximum(weight @ (diff * diff), 0.0))


# ---------------------------------------------------------------------------
# Regression posterior
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegressionPosterior:
    axes: Tuple[np.ndarray, ...]
    axis_weights: Tuple[np.ndarray, ...]
    log_evidence: float

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing='ij')
        return np.column_stack([m.ravel() for m in mesh])

    @property
    def weights(self) -> np.ndarray:
        out = self.axis_weights[0]
        for w in self.axis_weights[1:]:
            out = np.outer(out, w).ravel()
        return out

    def mean(self) -> np.ndarray:
        return np.array([a @ w for a, w in zip(self.axes, self.axis_weights)])

    def sd(self) -> np.ndarray:
        means = self.mean()
        return np.sqrt(np.array([((a - m) ** 2) @ w
                                 for a, w, m in zip(self.axes, self.axis_weights, means)]))


def regression_posterior(spec: RegressionSpec, covariates, responses, points_per_axis: int = 31,
                         scan_points: int = 4001, window_drop: float = 40.0,
                         reference=None) -> RegressionPosterior:
    """
    Tensor-grid posterior of step-function coefficients under a uniform prior on the box

    The likelihood factorizes over bins, so every axis gets its own window where the
    log-likelihood is within window_drop of its maximum, then a midpoint grid there.
    """
    cls = spec.function_class
    if cls.n_bins > 3:
        raise ValueError("tensor-grid posteriors support at most three coefficients")
    x = np.asarray(covariates, dtype=float)
    y = np.asarray(responses, dtype=float)
    bins = cls.bin_index(x) if x.size else np.zeros(0, dtype=int)
    box = 2.0 * cls.bound
    axes, axis_weights, log_evidence = [], [], 0.0
    for b in range(cls.n_bins):
        residuals = y[bins == b]

        def loglik(values):
            values = np.asarray(values, dtype=float)
            return spec.model_logpdf(residuals[None, :] - values[:, None]).sum(axis=1)

        scan = np.linspace(-cls.bound, cls.bound, scan_points)
        ll_scan = loglik(scan)
        keep = np.flatnonzero(ll_scan >= ll_scan.max() - window_drop)
        step = scan[1] - scan[0]
        lo = max(-cls.bound, scan[keep[0]] - step)
        hi = min(cls.bound, scan[keep[-1]] + step)
        h = (hi - lo) / points_per_axis
        axis = lo + h * (np.arange(points_per_axis) + 0.5)
        ll = loglik(axis)
        axes.append(axis)
        axis_weights.append(_normalize_log(ll))
        if reference is not None:
            log_evidence += float(logsumexp(ll) + np.log(h / box) - loglik([reference[b]])[0])
    return RegressionPosterior(axes=tuple(axes), axis_weights=tuple(axis_weights),
                               log_evidence=log_evidence if reference is not None else float('nan'))


# ---------------------------------------------------------------------------
# Evidence lower bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceCheck:
    violation_freq: float
    bound: float
    stderr: float
    prior_mass: float
    reps: int
    n: int
    eps: float

    @property
    def passed(self) -> bool:
        return self.violation_freq <= self.bound + 3.0 * self.stderr


def evidence_bound_check(family: ParametricFamily, sampler: Sampler, theta_star: float,
                         n: int, eps: float, C: float, reps: int, seed: int,
                         prior_draws: int = 100_000, label: str = 'evidence',
                         grid=None, moment_points: int = 401) -> EvidenceCheck:
    """
    Frequency of evidence < Π(B(ε))·exp(-nε²(1 + C)) over reps datasets, against 1/(C²nε²)

    The prior is uniform on the family's interval; Π(B(ε)) and the evidence use the same
    prior draws. KL moments are interpolated from a θ-grid.
    """
    p0 = sampler.target
    pstar = family.density(theta_star)
    rng = make_rng(derive_seed(seed, f"{label}-prior", 0))
    thetas = rng.uniform(family.lower, family.upper, prior_draws)

    knots = np.linspace(family.lower, family.upper, moment_points)
    moments = np.array([kl_moments(p0, family.density(t), pstar, grid) for t in knots])
    first = np.interp(thetas, knots, moments[:, 0])
    second = np.interp(thetas, knots, moments[:, 1])
    hits = int(np.sum((first <= eps * eps) & (second <= eps * eps)))
    if hits < MIN_PRIOR_HITS:
        raise PriorMassError(f"only {hits} of {prior_draws} prior draws fall in the KL neighborhood; "
                             f"use a larger eps")
    prior_mass = hits / prior_draws
    threshold = np.log(prior_mass) - n * eps * eps * (1.0 + C)

    violations = 0
    for rep in range(reps):
        data = sampler.draw(derive_seed(seed, f"{label}-n{n}", rep), n)
        ll = family.log_likelihood(thetas, data) - family.log_likelihood([theta_star], data)[0]
        if logsumexp(ll) - np.log(prior_draws) < threshold:
            violations += 1
    bound = 1.0 / (C * C * n * eps * eps)
    stderr = float(np.sqrt(min(bound, 1.0) * max(1.0 - bound, 0.0) / reps))
    check = EvidenceCheck(violation_freq=violations / reps, bound=bound, stderr=stderr,
                          prior_mass=prior_mass, reps=reps, n=n, eps=eps)
    logger.info(f"evidence check n={n} eps={eps} C={C}: {violations}/{reps} violations, "
                f"bound {bound:.4g}")
    return check


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    beta: float
    intercept: float
    r2: float
    n_values: Tuple[int, ...]
    radii: Tuple[float, ...]
    ratios: Tuple[float, ...] = ()


def median_radii(summaries: Sequence[PosteriorSummary]) -> Dict[int, float]:
    by_n: Dict[int, List[float]] = {}
    for s in summaries:
        by_n.setdefault(s.n, []).append(s.quantile_radius)
    return {n: float(np.median(by_n[n])) for n in sorted(by_n)}


def rate_fit(summaries: Sequence[PosteriorSummary], mixture: bool = False) -> RateFit:
    """Least-squares slope of log median quantile radius against log n"""
    radii = median_radii(summaries)
    if len(radii) < 4:
        raise RateFitError(f"need at least 4 distinct n values, got {len(radii)}")
    n_values = np.array(list(radii), dtype=float)
    values = np.array(list(radii.values()))
    if np.any(values <= 0):
        raise RateFitError("a posterior collapsed to a single grid point; use a finer grid")
    fit = stats.linregress(np.log(n_values), np.log(values))
    ratios = tuple(values / (np.log(n_values) / np.sqrt(n_values))) if mixture else ()
    return RateFit(beta=float(fit.slope), intercept=float(fit.intercept),
                   r2=float(fit.rvalue ** 2), n_values=tuple(int(n) for n in n_values),
                   radii=tuple(float(v) for v in values), ratios=tuple(float(r) for r in ratios))


def radius_inversions(radii: Sequence[float]) -> int:
    """Number of increases between consecutive radii ordered by n"""
    return int(np.sum(np.diff(np.asarray(radii, dtype=float)) > 0))


def allowed_inversions(levels: int) -> int:
    return 1 if levels >= 5 else 0


def targeting_ratios(summaries: Sequence[PosteriorSummary], theta_star: float,
                     min_n: int = 400) -> Dict[int, float]:
    """Median over replications of |mode - θ*|/posterior sd for every n ≥ min_n"""
    by_n: Dict[int, List[float]] = {}
    for s in summaries:
        if s.n >= min_n:
            gap = abs(s.diagnostics['mode'] - theta_star)
            by_n.setdefault(s.n, []).append(gap / s.diagnostics['sd'] if gap > 0 else 0.0)
    return {n: float(np.median(by_n[n])) for n in sorted(by_n)}
