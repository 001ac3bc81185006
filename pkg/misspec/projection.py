"""
Minimal Kullback-Leibler projections
Parametric families, grid-supported Gaussian mixtures and regression coefficient boxes
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.optimize import minimize, minimize_scalar

from misspec.divergence import kl_divergence
from misspec.errors import InvalidMixingError, ProjectionError
from misspec.measures import (
    DEFAULT_HALF_WIDTH,
    DensityHandle,
    MixingDistribution,
    ParametricFamily,
    Sampler,
    gauss_legendre_grid,
    grid_sum,
    kernel_matrix,
    mixture_density,
    support_grid,
)
from utils.seeding import make_rng

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Parametric families
# ---------------------------------------------------------------------------

def project_parametric(family: ParametricFamily, p0: DensityHandle, tol: float = 1e-8,
                       grid=None, n_coarse: int = 201) -> Tuple[float, float]:
    """
    θ* minimizing θ ↦ KL(p0 || p_θ) on the family's closed interval

    A coarse scan brackets the minimum and a bounded Brent search refines it;
    minima on the boundary are returned exactly at the boundary.
    """
    thetas = np.linspace(family.lower, family.upper, n_coarse)

    def kl_at(theta):
        return kl_divergence(p0, family.density(float(theta)), grid)

    kls = np.array([kl_at(t) for t in thetas])
    finite = np.isfinite(kls)
    if not finite.any():
        raise ProjectionError(f"KL({p0.label} || {family.label}) is infinite on the whole probe grid")
    index = int(np.argmin(np.where(finite, kls, np.inf)))
    left, right = thetas[max(index - 1, 0)], thetas[min(index + 1, n_coarse - 1)]
    candidates = [(float(kls[index]), float(thetas[index]))]
    if right > left:
        result = minimize_scalar(kl_at, bounds=(left, right), method='bounded',
                                 options={'xatol': tol})
        candidates.append((float(result.fun), float(result.x)))
    for edge in (family.lower, family.upper):
        if abs(edge - thetas[index]) <= (thetas[1] - thetas[0]) + 1e-15:
            candidates.append((kl_at(edge), float(edge)))
    kl_min, theta_star = min(candidates)
    logger.debug(f"theta* = {theta_star:.10g} (KL {kl_min:.6g}) for {family.label}")
    return theta_star, kl_min


# ---------------------------------------------------------------------------
# Gaussian location mixtures
# ---------------------------------------------------------------------------

def _mixture_grid():
    return gauss_legendre_grid(-DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, order=16)


@dataclass(frozen=True, eq=False)
class _MixtureProblem:
    """P0 masses at quadrature nodes and the kernel matrix ϕ(x_k - z_j)"""
    mass: np.ndarray
    kernel: np.ndarray

    @classmethod
    def build(cls, p0: DensityHandle, support: np.ndarray, grid) -> '_MixtureProblem':
        x = grid.points
        dens = p0(x) * grid.weights
        keep = dens > 0
        return cls(mass=dens[keep], kernel=kernel_matrix(x[keep], support))

    def objective(self, w: np.ndarray) -> float:
        """-P0 log p_F up to the constant P0 log p0"""
        return -float(np.dot(self.mass, np.log(self.kernel @ np.clip(w, 0.0, None))))

    def gradient_ratios(self, w: np.ndarray) -> np.ndarray:
        """P0[ϕ(· - z_j)/p_F] for every support point"""
        return (self.mass / (self.kernel @ w)) @ self.kernel


def mixture_gap(p0: DensityHandle, F: MixingDistribution, grid=None) -> float:
    """Frank-Wolfe gap max_j P0[ϕ(· - z_j)/p_F] - Σ_j w_j P0[ϕ(· - z_j)/p_F]"""
    problem = _MixtureProblem.build(p0, F.support, grid or _mixture_grid())
    ratios = problem.gradient_ratios(F.weights)
    return float(ratios.max() - np.dot(F.weights, ratios))


def mixture_certificate(p0: DensityHandle, F: MixingDistribution, grid=None) -> float:
    """max_j P0[ϕ(· - z_j)/p_F]; at most 1 at the projection"""
    problem = _MixtureProblem.build(p0, F.support, grid or _mixture_grid())
    return float(problem.gradient_ratios(F.weights).max())


def mixture_objective(p0: DensityHandle, F: MixingDistribution, grid=None) -> float:
    """-P0 log(p_F/p0)"""
    return kl_divergence(p0, mixture_density(F), grid)


def discretize_mixing(F: MixingDistribution, n_points: int) -> MixingDistribution:
    """Split every atom of F between its two neighbours on support_grid(F.M, n_points), mean kept"""
    if n_points < 2:
        raise ValueError("a discretizing grid needs at least two points")
    nodes = support_grid(F.M, n_points)
    step = nodes[1] - nodes[0]
    position = np.clip((F.support - nodes[0]) / step, 0.0, n_points - 1.0)
    lower = np.minimum(np.floor(position).astype(int), n_points - 2)
    share = position - lower
    weights = np.zeros(n_points)
    np.add.at(weights, lower, F.weights * (1.0 - share))
    np.add.at(weights, lower + 1, F.weights * share)
    keep = weights > 0
    return MixingDistribution(support=nodes[keep], weights=weights[keep] / weights.sum(), M=F.M)


def kl_semicontinuity_gap(p0: DensityHandle, F: MixingDistribution,
                          levels: Sequence[int] = tuple(2 ** k + 1 for k in range(2, 15)),
                          tail: int = 2, grid=None) -> float:
    """
    min over the finest `tail` levels of KL(p0, p_{F_n}) - KL(p0, p_F)

    F_n = discretize_mixing(F, n) converges weakly to F as the levels refine, so the
    liminf of KL(p0, p_{F_n}) is at least KL(p0, p_F) and the gap is nonnegative.
    """
    if not 1 <= tail <= len(levels):
        raise ValueError(f"tail must lie in [1, {len(levels)}], got {tail!r}")
    target = kl_divergence(p0, mixture_density(F), grid)
    values = [kl_divergence(p0, mixture_density(discretize_mixing(F, n)), grid) for n in levels]
    logger.debug(f"KL along the discretizing sequence: {values} (limit {target:.10g})")
    return min(values[-tail:]) - target


def _polish(problem: _MixtureProblem, w: np.ndarray) -> np.ndarray:
    m = w.size
    result = minimize(problem.objective, w,
                      jac=lambda v: -problem.gradient_ratios(np.clip(v, 0.0, None)),
                      method='SLSQP', bounds=[(0.0, 1.0)] * m,
                      constraints=[{'type': 'eq', 'fun': lambda v: v.sum() - 1.0,
                                    'jac': lambda v: np.ones(m)}],
                      options={'ftol': 1e-15, 'maxiter': 500})
    polished = np.clip(result.x, 0.0, None)
    return polished / polished.sum()


def project_mixture(p0: DensityHandle, grid_points: Sequence[float], tol: float = 1e-6,
                    max_iters: int = 5000, init: Optional[Sequence[float]] = None,
                    M: Optional[float] = None, grid=None, polish: bool = True) -> MixingDistribution:
    """
    F* on a fixed support grid minimizing F ↦ -P0 log(p_F/p0)

    Multiplicative-gradient steps w_j ← w_j·P0[ϕ(· - z_j)/p_F], renormalized, until the
    duality gap drops below tol; the iterate is then polished on the simplex and the
    gap re-checked.
    """
    support = np.asarray(grid_points, dtype=float)
    M = float(M) if M is not None else max(float(np.max(np.abs(support))), 1e-12)
    grid = grid or _mixture_grid()
    problem = _MixtureProblem.build(p0, support, grid)

    if init is None:
        w = np.full(support.size, 1.0 / support.size)
    else:
        w = np.asarray(init, dtype=float)
        if np.any(w <= 0):
            raise InvalidMixingError("initial weights must be strictly positive")
        w = w / w.sum()
    objective = problem.objective(w)
    if not np.isfinite(objective):
        raise ProjectionError(f"-P0 log p_F is not finite for {p0.label} at the initial weights")

    gap = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        ratios = problem.gradient_ratios(w)
        gap = float(ratios.max() - np.dot(w, ratios))
        if gap <= tol:
            break
        candidate = w * ratios
        candidate /= candidate.sum()
        value = problem.objective(candidate)
        if value > objective + 1e-12 * (1.0 + abs(objective)):
            raise ProjectionError(
                f"mixture objective increased at iteration {iterations}: {objective!r} -> {value!r}",
                residual=gap)
        w, objective = candidate, value

    if polish:
        polished = _polish(problem, w)
        if problem.objective(polished) <= objective:
            w = polished
        ratios = problem.gradient_ratios(w)
        gap = float(ratios.max() - np.dot(w, ratios))

    if gap > tol:
        raise ProjectionError(f"mixture projection stopped with gap {gap:.3e} > {tol:.1e} "
                              f"after {iterations} iterations", residual=gap)
    logger.debug(f"mixture projection: {iterations} iterations, gap {gap:.3e}")
    return MixingDistribution(support=support, weights=w, M=M)


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ErrorLaw:
    """Distribution of the regression error e0"""
    dist: object
    label: str

    @classmethod
    def normal(cls, loc: float = 0.0, scale: float = 1.0) -> 'ErrorLaw':
        return cls(stats.norm(loc=loc, scale=scale), f"N({loc:g},{scale * scale:g})")

    @classmethod
    def laplace(cls, loc: float = 0.0, scale: float = 1.0) -> 'ErrorLaw':
        return cls(stats.laplace(loc=loc, scale=scale), f"Laplace({loc:g},{scale:g})")

    @property
    def kind(self) -> str:
        return self.dist.dist.name

    @property
    def mean(self) -> float:
        return float(self.dist.mean())

    @property
    def median(self) -> float:
        return float(self.dist.median())

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.dist.rvs(size=n, random_state=rng), dtype=float)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantClass:
    """Step functions on n_bins equal bins of [0, 1] with coefficients in [-bound, bound]"""
    n_bins: int
    bound: float

    def bin_index(self, x) -> np.ndarray:
        return np.clip((np.asarray(x, dtype=float) * self.n_bins).astype(int), 0, self.n_bins - 1)

    def design(self, x) -> np.ndarray:
        index = self.bin_index(x)
        out = np.zeros((index.size, self.n_bins))
        out[np.arange(index.size), index] = 1.0
        return out

    def evaluate(self, coefficients, x) -> np.ndarray:
        return np.asarray(coefficients, dtype=float)[self.bin_index(x)]

    def contains(self, coefficients) -> bool:
        return bool(np.all(np.abs(np.asarray(coefficients)) <= self.bound + 1e-12))

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product((-self.bound, self.bound), repeat=self.n_bins)))

    def bin_probabilities(self, covariate_law) -> np.ndarray:
        edges = np.linspace(0.0, 1.0, self.n_bins + 1)
        cdf = covariate_law.cdf(edges)
        cdf[0], cdf[-1] = 0.0, 1.0
        return np.diff(cdf)

    def l2_distance(self, a, b, covariate_law) -> np.ndarray:
        """‖f_a - f_b‖ in L2 of the covariate law; a may be a stack of coefficient rows"""
        diff = np.atleast_2d(a) - np.asarray(b, dtype=float)
        return np.sqrt(np.maximum(diff * diff @ self.bin_probabilities(covariate_law), 0.0))


@dataclass(frozen=True, eq=False)
class RegressionSpec:
    """Y = f0(X) + e0 with a coefficient-box model and a normal or Laplace working likelihood"""
    f0: Callable[[np.ndarray], np.ndarray]
    error: ErrorLaw
    function_class: PiecewiseConstantClass
    likelihood: str = 'normal'
    covariate_law: object = field(default_factory=lambda: stats.uniform(0.0, 1.0))
    f0_bound: float = 10.0

    def __post_init__(self):
        if self.likelihood not in ('normal', 'laplace'):
            raise ValueError(f"likelihood must be 'normal' or 'laplace', got {self.likelihood!r}")
        probe = np.asarray(self.f0(np.linspace(0.0, 1.0, 1001)), dtype=float)
        if not np.all(np.abs(probe) <= self.f0_bound):
            raise ValueError(f"f0 exceeds its declared bound {self.f0_bound}")

    @property
    def error_mean(self) -> float:
        return self.error.mean

    @property
    def error_median(self) -> float:
        return self.error.median

    @property
    def covariate_sampler(self) -> Sampler:
        return Sampler.from_scipy(self.covariate_law, label='covariate')

    def model_logpdf(self, residuals) -> np.ndarray:
        """log of the working error density: N(0,1) or Laplace(0,1)"""
        r = np.asarray(residuals, dtype=float)
        if self.likelihood == 'normal':
            return -0.5 * r * r - 0.5 * np.log(2.0 * np.pi)
        return -np.abs(r) - np.log(2.0)

    def simulate(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(self.covariate_law.rvs(size=n, random_state=rng), dtype=float)
        return x, self.f0(x) + self.error.sample(rng, n)


def phi_laplace(nu, e0: ErrorLaw):
    """Φ(ν) = E(|e0 - ν| - |e0|)"""
    nu_arr = np.asarray(nu, dtype=float)
    if e0.kind == 'norm':
        m, s = float(e0.dist.mean()), float(e0.dist.std())

        def folded(d):
            return s * np.sqrt(2.0 / np.pi) * np.exp(-d * d / (2.0 * s * s)) + d * (1.0 - 2.0 * stats.norm.cdf(-d / s))

        out = folded(m - nu_arr) - folded(m)
    elif e0.kind == 'laplace':
        m, s = float(e0.dist.median()), float(e0.dist.std()) / np.sqrt(2.0)

        def absolute_mean(d):
            return np.abs(d) + s * np.exp(-np.abs(d) / s)

        out = absolute_mean(nu_arr - m) - absolute_mean(-m)
    else:
        lo, hi = float(e0.dist.ppf(1e-15)), float(e0.dist.ppf(1.0 - 1e-15))
        flat = np.atleast_1d(nu_arr).ravel()
        out = np.empty(flat.shape)
        for i, v in enumerate(flat):
            grid = gauss_legendre_grid(lo, hi, order=32, edges=(0.0, float(v)))
            e = grid.points
            out[i] = grid_sum((np.abs(e - v) - np.abs(e)) * e0.dist.pdf(e), grid)
        out = out.reshape(nu_arr.shape)
    return float(out) if np.ndim(nu) == 0 else out


def phi_prime(nu, e0: ErrorLaw) -> np.ndarray:
    return 2.0 * e0.dist.cdf(nu) - 1.0


def phi_second(nu, e0: ErrorLaw) -> np.ndarray:
    return 2.0 * e0.dist.pdf(nu)


def assert_phi_curvature(e0: ErrorLaw, nu_grid: Optional[Sequence[float]] = None) -> None:
    """Φ must be strictly convex on the grid before quadratic-growth constants are used"""
    nu = np.asarray(nu_grid if nu_grid is not None else np.linspace(-1.0, 1.0, 41), dtype=float)
    values = np.asarray(phi_laplace(nu, e0))
    second = np.diff(values, 2)
    if np.any(second <= 0) or np.any(phi_second(nu, e0) <= 0):
        raise ProjectionError(f"Φ is not strictly convex on the grid for {e0.label}",
                              residual=float(second.min()))


def _regression_objective(spec: RegressionSpec, design: np.ndarray, target: np.ndarray):
    """(objective, gradient, diagonal curvature) of the projection problem"""
    n = target.size
    if spec.likelihood == 'normal':
        shifted = target + spec.error_mean

        def objective(c):
            r = design @ c - shifted
            return float(np.dot(r, r) / n)

        def gradient(c):
            return 2.0 * design.T @ (design @ c - shifted) / n

        def curvature(c):
            return 2.0 * (design * design).sum(axis=0) / n

        return objective, gradient, curvature

    def objective(c):
        return float(np.mean(phi_laplace(design @ c - target, spec.error)))

    def gradient(c):
        return design.T @ phi_prime(design @ c - target, spec.error) / n

    def curvature(c):
        return (design * design).T @ phi_second(design @ c - target, spec.error) / n

    return objective, gradient, curvature


def project_regression(spec: RegressionSpec, n_mc: int = 20000, seed: int = 0,
                       tol: float = 1e-8, max_iter: int = 500) -> np.ndarray:
    """
    Coefficients of f* on the class

    normal likelihood: least-squares projection of f0 + μ;
    laplace likelihood: minimizer of the average of Φ(f - f0).
    Both under n_mc Monte Carlo covariates, by diagonally scaled projected Newton steps.
    """
    cls = spec.function_class
    x = spec.covariate_sampler.draw(seed, n_mc)
    design = cls.design(x)
    target = np.asarray(spec.f0(x), dtype=float)
    objective, gradient, curvature = _regression_objective(spec, design, target)
    lo, hi = -cls.bound, cls.bound

    c = np.zeros(cls.n_bins)
    value = objective(c)
    residual = np.inf
    for iteration in range(max_iter):
        g = gradient(c)
        residual = float(np.linalg.norm(c - np.clip(c - g, lo, hi)))
        if residual <= tol:
            logger.debug(f"regression projection converged in {iteration} steps")
            return c
        direction = g / np.maximum(curvature(c), 1e-12)
        step = 1.0
        for _ in range(60):
            trial = np.clip(c - step * direction, lo, hi)
            trial_value = objective(trial)
            if trial_value <= value - 1e-4 * float(np.dot(g, c - trial)):
                break
            step *= 0.5
        else:
            break
        if np.allclose(trial, c, rtol=0.0, atol=1e-15):
            break
        c, value = trial, trial_value
    g = gradient(c)
    residual = float(np.linalg.norm(c - np.clip(c - g, lo, hi)))
    if residual <= tol:
        return c
    raise ProjectionError(f"regression projection did not converge (gradient norm {residual:.3e})",
                          residual=residual)


def pythagoras_check(f_star, f0: Callable, mu: float, function_class: PiecewiseConstantClass,
                     n_mc: int = 20000, seed: int = 0,
                     covariates: Optional[Sampler] = None) -> float:
    """max over class vertices of |P0(f - f*)(f* - f0 - μ)|, by Monte Carlo"""
    covariates = covariates or Sampler.from_scipy(stats.uniform(0.0, 1.0), label='covariate')
    x = covariates.draw(seed, n_mc)
    fitted = function_class.evaluate(f_star, x)
    residual = fitted - f0(x) - mu
    values = [abs(float(np.mean((function_class.evaluate(v, x) - fitted) * residual)))
              for v in function_class.vertices()]
    return max(values)


def regression_kl(spec: RegressionSpec, coefficients, n_mc: int = 20000,
                  seed: int = 0) -> Tuple[float, float]:
    """Monte Carlo -P0 log(p_f/p_{f0}) with its standard error"""
    rng = make_rng(seed)
    x, y = spec.simulate(rng, n_mc)
    fitted = spec.function_class.evaluate(coefficients, x)
    values = spec.model_logpdf(y - spec.f0(x)) - spec.model_logpdf(y - fitted)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n_mc))
