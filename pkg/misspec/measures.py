"""
Densities, samplers and integration primitives
All densities are evaluated in log space
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import stats
from scipy.special import logsumexp

from configs.config import get_active_config
from misspec.errors import (
    AbsoluteContinuityError,
    IntegrationError,
    InvalidMixingError,
    SamplingError,
)
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

_cfg = get_active_config()

GAUSS_LEGENDRE = 'gauss-legendre'
TRAPEZOID = 'trapezoid'

DEFAULT_ORDER = _cfg.QUAD_ORDER
DEFAULT_HALF_WIDTH = _cfg.QUAD_HALF_WIDTH
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _legendre_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Composite Gauss-Legendre or trapezoid rule on [lower, upper]"""
    lower: float
    upper: float
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str = GAUSS_LEGENDRE
    edges: Tuple[float, ...] = ()
    order: int = DEFAULT_ORDER

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ValueError("nodes and weights must be matching vectors")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("quadrature nodes must be strictly increasing")
        if self.nodes[0] < self.lower or self.nodes[-1] > self.upper:
            raise ValueError("quadrature nodes outside [lower, upper]")
        if self.scheme == TRAPEZOID:
            if abs(self.weights.sum() - (self.upper - self.lower)) > 1e-12 * max(1.0, self.upper - self.lower):
                raise ValueError("trapezoid weights do not sum to the interval length")

    @property
    def points(self) -> np.ndarray:
        return self.nodes

    @property
    def dim(self) -> int:
        return 1

    def with_breakpoints(self, points: Sequence[float]) -> 'QuadratureGrid':
        """Rebuild the rule so that every point inside the interval is a panel edge"""
        inner = [float(x) for x in points if self.lower < x < self.upper]
        if not inner:
            return self
        if self.scheme == TRAPEZOID:
            return trapezoid_grid(self.lower, self.upper, len(self.nodes), breakpoints=inner)
        return gauss_legendre_grid(self.lower, self.upper, order=self.order,
                                   edges=tuple(self.edges) + tuple(inner))


def gauss_legendre_grid(lower: float, upper: float, order: int = DEFAULT_ORDER,
                        panel_width: float = 1.0, edges: Sequence[float] = ()) -> QuadratureGrid:
    """
    Composite Gauss-Legendre rule

    Args:
        lower, upper: integration interval
        order: nodes per panel
        panel_width: nominal panel width
        edges: extra panel edges (breakpoints of the integrand)
    """
    n_panels = max(1, int(np.ceil((upper - lower) / panel_width - 1e-12)))
    cuts = np.concatenate([np.linspace(lower, upper, n_panels + 1),
                           [e for e in edges if lower < e < upper]])
    cuts = np.unique(cuts)
    keep = np.concatenate([[True], np.diff(cuts) > 1e-13 * max(1.0, upper - lower)])
    cuts = cuts[keep]
    cuts[-1] = upper
    x, w = _legendre_rule(order)
    half = 0.5 * np.diff(cuts)
    mid = 0.5 * (cuts[1:] + cuts[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return QuadratureGrid(lower=float(lower), upper=float(upper), nodes=_frozen(nodes),
                          weights=_frozen(weights), scheme=GAUSS_LEGENDRE,
                          edges=tuple(float(c) for c in cuts), order=order)


def trapezoid_grid(lower: float, upper: float, n_nodes: int = 2001,
                   breakpoints: Sequence[float] = ()) -> QuadratureGrid:
    nodes = np.unique(np.concatenate([np.linspace(lower, upper, n_nodes),
                                      [b for b in breakpoints if lower < b < upper]]))
    gaps = np.diff(nodes)
    weights = np.zeros_like(nodes)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    return QuadratureGrid(lower=float(lower), upper=float(upper), nodes=_frozen(nodes),
                          weights=_frozen(weights), scheme=TRAPEZOID,
                          edges=(float(lower), float(upper)), order=2)


def default_grid(half_width: float = DEFAULT_HALF_WIDTH, center: float = 0.0,
                 order: int = DEFAULT_ORDER) -> QuadratureGrid:
    """Unit panels over center ± half_width; covers 12 sd of every scenario density"""
    return gauss_legendre_grid(center - half_width, center + half_width, order=order)


@dataclass(frozen=True, eq=False)
class ProductGrid:
    """Tensor product of two one-dimensional rules"""
    first: QuadratureGrid
    second: QuadratureGrid

    @property
    def dim(self) -> int:
        return 2

    @property
    def points(self) -> np.ndarray:
        xx, yy = np.meshgrid(self.first.nodes, self.second.nodes, indexing='ij')
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.first.weights, self.second.weights).ravel()


def grid_sum(values, grid) -> float:
    """Weighted sum of integrand values already evaluated at grid.points"""
    values = np.broadcast_to(np.asarray(values, dtype=float), grid.weights.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        node = grid.points[index]
        raise IntegrationError(f"integrand is not finite at node {node!r} (value {values[index]!r})",
                               node=node)
    return float(np.dot(grid.weights, values))


def integrate(f: Callable[[np.ndarray], np.ndarray], grid) -> float:
    """Σ weights·f(nodes); f is called once on the vector of nodes"""
    return grid_sum(f(grid.points), grid)


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityHandle:
    """
    Log-density of a finite measure on the line (or the plane when dim = 2)

    log_density must return -inf exactly off the support.
    """
    log_density: Callable[[np.ndarray], np.ndarray]
    total_mass: float = 1.0
    label: str = 'density'
    dim: int = 1
    is_probability: bool = True

    def __call__(self, x) -> np.ndarray:
        return np.exp(self.log_density(np.asarray(x, dtype=float)))

    def logpdf(self, x) -> np.ndarray:
        return np.asarray(self.log_density(np.asarray(x, dtype=float)), dtype=float)

    def support(self, x) -> np.ndarray:
        return np.isfinite(self.logpdf(x))

    @classmethod
    def from_scipy(cls, frozen, label: Optional[str] = None) -> 'DensityHandle':
        return cls(log_density=frozen.logpdf, total_mass=1.0,
                   label=label or frozen.dist.name)


def normal_density(loc: float = 0.0, scale: float = 1.0) -> DensityHandle:
    loc, scale = float(loc), float(scale)
    log_norm = np.log(scale) + LOG_SQRT_2PI

    def log_density(x):
        z = (np.asarray(x, dtype=float) - loc) / scale
        return -0.5 * z * z - log_norm

    return DensityHandle(log_density=log_density, label=f"N({loc:g},{scale * scale:g})")


def laplace_density(loc: float = 0.0, scale: float = 1.0) -> DensityHandle:
    return DensityHandle.from_scipy(stats.laplace(loc=loc, scale=scale),
                                    label=f"Laplace({loc:g},{scale:g})")


def scaled_density(handle: DensityHandle, factor: float) -> DensityHandle:
    """factor·handle as a finite, generally non-probability, measure"""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    shift = np.log(factor)
    return DensityHandle(log_density=lambda x: handle.logpdf(x) + shift,
                         total_mass=handle.total_mass * factor,
                         label=f"{factor:g}*{handle.label}", dim=handle.dim,
                         is_probability=False)


def product_density(first: DensityHandle, second: DensityHandle) -> DensityHandle:
    """Product measure on the plane; points are rows (x, y)"""
    def log_density(points):
        points = np.atleast_2d(points)
        return first.logpdf(points[:, 0]) + second.logpdf(points[:, 1])

    return DensityHandle(log_density=log_density,
                         total_mass=first.total_mass * second.total_mass,
                         label=f"{first.label}x{second.label}", dim=2,
                         is_probability=first.is_probability and second.is_probability)


def convex_combination(handles: Sequence[DensityHandle], weights: Sequence[float]) -> DensityHandle:
    """Σ λ_i·handle_i evaluated with log-sum-exp"""
    weights = np.asarray(weights, dtype=float)
    if len(handles) != len(weights) or np.any(weights < 0):
        raise ValueError("need one nonnegative weight per density")
    dims = {h.dim for h in handles}
    if len(dims) != 1:
        raise ValueError("cannot mix densities of different dimension")

    def log_density(x):
        stacked = np.stack([h.logpdf(x) for h in handles], axis=-1)
        return logsumexp(stacked, b=weights, axis=-1)

    return DensityHandle(log_density=log_density,
                         total_mass=float(np.dot(weights, [h.total_mass for h in handles])),
                         label='+'.join(f"{w:.3g}*{h.label}" for w, h in zip(weights, handles)),
                         dim=dims.pop(),
                         is_probability=all(h.is_probability for h in handles)
                         and abs(weights.sum() - 1.0) <= 1e-12)


def _probe_points(p0: DensityHandle, probe) -> np.ndarray:
    if probe is not None:
        return np.asarray(probe.points if hasattr(probe, 'points') else probe, dtype=float)
    if p0.dim == 2:
        axis = np.linspace(-DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, 201)
        xx, yy = np.meshgrid(axis, axis, indexing='ij')
        return np.column_stack([xx.ravel(), yy.ravel()])
    return np.linspace(-DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH, 4001)


def check_absolute_continuity(p0: DensityHandle, pstar: DensityHandle, probe=None) -> None:
    """Raise when p0 > 0 at a probe point where p* = 0"""
    points = _probe_points(p0, probe)
    with np.errstate(divide='ignore', invalid='ignore'):
        violated = np.isfinite(p0.logpdf(points)) & np.isneginf(pstar.logpdf(points))
    if violated.any():
        where = points[int(np.flatnonzero(violated)[0])]
        raise AbsoluteContinuityError(
            f"{p0.label} is positive at {where!r} where {pstar.label} vanishes")


def log_ratio(lp: np.ndarray, lq: np.ndarray) -> np.ndarray:
    """log(p/q) with -inf where p = 0 and +inf where only q = 0"""
    with np.errstate(invalid='ignore'):
        out = lp - lq
    return np.where(np.isneginf(lp), -np.inf, out)


def q_of_p(p: DensityHandle, p0: DensityHandle, pstar: DensityHandle, grid=None,
           probe=None) -> DensityHandle:
    """
    Finite measure Q(P) with density p·p0/p*

    The density is 0 wherever p0 = 0; total mass is computed on grid.
    """
    check_absolute_continuity(p0, pstar, probe if probe is not None else grid)

    def log_density(x):
        lp0 = p0.logpdf(x)
        with np.errstate(invalid='ignore'):
            out = p.logpdf(x) + lp0 - pstar.logpdf(x)
        return np.where(np.isneginf(lp0), -np.inf, out)

    grid = grid if grid is not None else (default_grid() if p0.dim == 1 else None)
    if grid is None:
        raise ValueError("a product grid is required for two-dimensional measures")
    mass = grid_sum(np.exp(log_density(grid.points)), grid)
    return DensityHandle(log_density=log_density, total_mass=mass, label=f"Q({p.label})",
                         dim=p0.dim, is_probability=False)


# ---------------------------------------------------------------------------
# Mixtures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MixingDistribution:
    """Discrete mixing measure with support in [-M, M]"""
    support: np.ndarray
    weights: np.ndarray
    M: float

    def __post_init__(self):
        support = _frozen(self.support)
        weights = _frozen(self.weights)
        object.__setattr__(self, 'support', support)
        object.__setattr__(self, 'weights', weights)
        if support.ndim != 1 or support.shape != weights.shape or support.size == 0:
            raise InvalidMixingError("support and weights must be matching non-empty vectors")
        if np.any(np.abs(support) > self.M + 1e-12):
            raise InvalidMixingError(f"support points must lie in [-{self.M}, {self.M}]")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise InvalidMixingError("mixing weights must be finite and nonnegative")

    @classmethod
    def from_weights(cls, support, weights, M: float) -> 'MixingDistribution':
        weights = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        return cls(support=np.asarray(support, dtype=float), weights=weights / weights.sum(), M=M)

    @classmethod
    def uniform(cls, support, M: float) -> 'MixingDistribution':
        support = np.asarray(support, dtype=float)
        return cls(support=support, weights=np.full(support.size, 1.0 / support.size), M=M)

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(float(self.weights.sum()) - 1.0) <= tol


def support_grid(M: float = 2.0, n_points: int = 41) -> np.ndarray:
    return np.linspace(-M, M, n_points)


def kernel_log_matrix(x: np.ndarray, support: np.ndarray) -> np.ndarray:
    """log ϕ(x_k - z_j) as a (len(x), len(support)) matrix"""
    diff = np.asarray(x, dtype=float)[:, None] - np.asarray(support, dtype=float)[None, :]
    return -0.5 * diff * diff - LOG_SQRT_2PI


def kernel_matrix(x: np.ndarray, support: np.ndarray) -> np.ndarray:
    return np.exp(kernel_log_matrix(x, support))


def mixture_density(F: MixingDistribution) -> DensityHandle:
    """p_F(x) = Σ_j w_j ϕ(x - z_j)"""
    if abs(float(F.weights.sum()) - 1.0) > 1e-10:
        raise InvalidMixingError(f"mixing weights sum to {F.weights.sum()!r}, not 1")
    support, weights = F.support, F.weights

    def log_density(x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        out = logsumexp(kernel_log_matrix(flat, support), b=weights[None, :], axis=1)
        return out.reshape(x.shape)

    return DensityHandle(log_density=log_density, label=f"p_F[{support.size}]")


def mixture_envelopes(M: float) -> Tuple[Callable, Callable]:
    """Upper and lower envelopes U, L with L ≤ p_F ≤ U for every F on [-M, M]"""
    phi = stats.norm.pdf

    def upper(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < -M, phi(x + M), np.where(x > M, phi(x - M), phi(0.0)))

    def lower(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, phi(x - M), phi(x + M))

    return upper, lower


def envelope_ratio_bound(p0: DensityHandle, M: float, grid=None) -> Tuple[float, float]:
    """
    P_0(U/L) and its explicit majorant
    ϕ(0)/ϕ(2M)·P_0[-M, M] + P_0(e^{-2MX}1{X<-M} + e^{2MX}1{X>M})
    """
    grid = grid or default_grid()
    x = grid.points
    upper, lower = mixture_envelopes(M)
    dens = p0(x)
    with np.errstate(over='ignore'):
        log_ratio_ul = np.log(upper(x)) - np.log(lower(x))
    ratio = grid_sum(dens * np.exp(log_ratio_ul), grid)
    inner = grid_sum(dens * (np.abs(x) <= M), grid)
    tails = np.where(x < -M, np.exp(-2 * M * x), 0.0) + np.where(x > M, np.exp(2 * M * x), 0.0)
    bound = stats.norm.pdf(0.0) / stats.norm.pdf(2 * M) * inner + grid_sum(dens * tails, grid)
    return ratio, bound


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Sampler:
    """Seeded draws from a probability density"""
    draw_fn: Callable[[np.random.Generator, int], np.ndarray]
    target: DensityHandle

    def __post_init__(self):
        if not self.target.is_probability:
            raise ValueError("sampler targets must be probability densities")

    def draw(self, seed: int, count: int) -> np.ndarray:
        return np.asarray(self.draw_fn(make_rng(seed), int(count)), dtype=float)

    def draw_with(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw an array of any shape from an existing generator"""
        size = tuple(np.atleast_1d(size))
        return np.asarray(self.draw_fn(rng, int(np.prod(size))), dtype=float).reshape(size)

    @classmethod
    def from_scipy(cls, frozen, label: Optional[str] = None) -> 'Sampler':
        return cls(draw_fn=lambda rng, n: frozen.rvs(size=n, random_state=rng),
                   target=DensityHandle.from_scipy(frozen, label))


def normal_sampler(loc: float = 0.0, scale: float = 1.0) -> Sampler:
    return Sampler(draw_fn=lambda rng, n: loc + scale * rng.standard_normal(n),
                   target=normal_density(loc, scale))


def mixture_sampler(F: MixingDistribution) -> Sampler:
    def draw_fn(rng, n):
        components = rng.choice(F.support.size, size=n, p=F.weights)
        return F.support[components] + rng.standard_normal(n)

    return Sampler(draw_fn=draw_fn, target=mixture_density(F))


def dirichlet_sampler(alpha: Sequence[float]) -> Sampler:
    """Mixing weight vectors from Dirichlet(alpha), one row per draw"""
    alpha = np.asarray(alpha, dtype=float)
    frozen = stats.dirichlet(alpha)
    target = DensityHandle(log_density=lambda w: frozen.logpdf(np.moveaxis(w, -1, 0)),
                           label=f"Dirichlet[{alpha.size}]", dim=alpha.size)
    return Sampler(draw_fn=lambda rng, n: rng.dirichlet(alpha, size=n), target=target)


def mc_expectation(s: Sampler, f: Callable[[np.ndarray], np.ndarray], n: int,
                   seed: int) -> Tuple[float, float]:
    """Sample mean of f over n draws and its standard error"""
    if n < 2:
        raise ValueError("mc_expectation needs at least two draws")
    values = np.broadcast_to(np.asarray(f(s.draw(seed, n)), dtype=float), (n,))
    bad = ~np.isfinite(values)
    if bad.any():
        index = int(np.flatnonzero(bad)[0])
        raise SamplingError(f"non-finite value {values[index]!r} at draw {index}", index=index)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(n))


# ---------------------------------------------------------------------------
# Parametric families
# ---------------------------------------------------------------------------

def absolute_metric(a, b) -> np.ndarray:
    return np.abs(np.asarray(a, dtype=float) - b)


def root_metric(a, b) -> np.ndarray:
    """√|θ1 - θ2|"""
    return np.sqrt(np.abs(np.asarray(a, dtype=float) - b))


@dataclass(frozen=True, eq=False)
class ParametricFamily:
    """One-parameter family θ ↦ p_θ on a closed interval"""
    lower: float
    upper: float
    density: Callable[[float], DensityHandle]
    metric: Callable = absolute_metric
    loglik: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    label: str = 'family'
    sampler: Optional[Callable[[float], Sampler]] = field(default=None)

    def contains(self, theta: float) -> bool:
        return self.lower - 1e-12 <= theta <= self.upper + 1e-12

    def log_likelihood(self, thetas, data) -> np.ndarray:
        """Σ_i log p_θ(X_i) for every θ in thetas"""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
        data = np.asarray(data, dtype=float)
        if self.loglik is not None:
            return np.asarray(self.loglik(thetas, data), dtype=float)
        return np.array([self.density(t).logpdf(data).sum() for t in thetas])


def normal_location_family(lower: float, upper: float, scale: float = 1.0,
                           metric: Callable = absolute_metric) -> ParametricFamily:
    """N(θ, scale²) for θ in [lower, upper], with sufficient-statistic likelihood"""
    log_norm = np.log(scale) + LOG_SQRT_2PI

    def loglik(thetas, data):
        n = data.size
        s1, s2 = data.sum(), np.dot(data, data)
        return -(s2 - 2.0 * thetas * s1 + n * thetas * thetas) / (2.0 * scale * scale) - n * log_norm

    return ParametricFamily(lower=float(lower), upper=float(upper),
                            density=lambda t: normal_density(t, scale), metric=metric,
                            loglik=loglik, label=f"N(theta,{scale * scale:g})",
                            sampler=lambda t: normal_sampler(t, scale))
