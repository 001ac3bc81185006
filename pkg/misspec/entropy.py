"""
Covering numbers: greedy farthest-point covers, certified local covers for testing
and entropy growth of the mixture model
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from misspec.errors import CertificationError, RateFitError
from misspec.measures import (
    DensityHandle,
    MixingDistribution,
    ParametricFamily,
    default_grid,
    kernel_matrix,
    mixture_density,
    support_grid,
)
from misspec.testing import COMBINATIONS_PER_CELL, hull_margin
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 12
DISTANCE_TOL = 1e-12


def euclidean_metric(points, center) -> np.ndarray:
    """Distances from every row (or scalar) in points to center"""
    points = np.asarray(points, dtype=float)
    diff = points - np.asarray(center, dtype=float)
    if points.ndim == 1:
        return np.abs(diff)
    return np.sqrt(np.sum(diff * diff, axis=1))


def sup_metric(points, center) -> np.ndarray:
    diff = np.abs(np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(center, dtype=float))
    return diff.max(axis=1)


@dataclass(frozen=True)
class CoverReport:
    epsilon: float
    n_balls: int
    centers: Tuple = ()
    certified: bool = False
    radius_used: float = 0.0
    margins: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.n_balls != len(self.centers):
            raise ValueError("n_balls must equal the number of centers")

    def to_rows(self) -> List[Tuple]:
        margins = self.margins or (float('nan'),) * self.n_balls
        return [(center, self.radius_used, margin) for center, margin in zip(self.centers, margins)]


# ---------------------------------------------------------------------------
# Greedy covers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GreedyPermutation:
    """
    Farthest-point ordering of a finite metric set

    radii[k] is the distance of order[k] to the first k points at insertion (radii[0] = inf),
    so the first k points cover everything within radii[k]. A permutation stopped at
    stop_radius only answers for eps ≥ stop_radius.
    """
    order: np.ndarray
    radii: np.ndarray
    stop_radius: float = 0.0

    def n_centers(self, eps: float) -> int:
        if eps < self.stop_radius - DISTANCE_TOL:
            raise ValueError(f"permutation was stopped at radius {self.stop_radius}, above {eps}")
        return int(np.sum(self.radii > eps + DISTANCE_TOL))

    def centers(self, eps: float) -> np.ndarray:
        return self.order[:self.n_centers(eps)]


def greedy_permutation(points, metric: Callable = euclidean_metric, start: int = 0,
                       stop_radius: float = 0.0) -> GreedyPermutation:
    """Gonzalez ordering; ties go to the smallest index"""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return GreedyPermutation(order=np.array([], dtype=int), radii=np.array([]))
    order, radii = [start], [np.inf]
    nearest = np.asarray(metric(points, points[start]), dtype=float)
    while len(order) < len(points):
        i = int(np.argmax(nearest))
        radius = float(nearest[i])
        if radius <= max(stop_radius, DISTANCE_TOL):
            break
        order.append(i)
        radii.append(radius)
        nearest = np.minimum(nearest, metric(points, points[i]))
    return GreedyPermutation(order=np.array(order), radii=np.array(radii), stop_radius=stop_radius)


def covering_number(points, metric: Callable = euclidean_metric, eps: float = 0.1) -> CoverReport:
    """Greedy farthest-point cover of a finite metric set by balls of radius eps"""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return CoverReport(epsilon=eps, n_balls=0, certified=True, radius_used=eps)
    perm = greedy_permutation(points, metric)
    centers = perm.centers(eps)
    nearest = np.min([metric(points, points[c]) for c in centers], axis=0)
    if np.any(nearest > eps + DISTANCE_TOL):
        raise AssertionError(f"greedy cover leaves a point at distance {nearest.max()!r} > {eps}")
    return CoverReport(epsilon=eps, n_balls=len(centers),
                       centers=tuple(_as_key(points[c]) for c in centers),
                       radius_used=eps)


def _as_key(point):
    arr = np.asarray(point, dtype=float)
    return float(arr) if arr.ndim == 0 else tuple(float(v) for v in arr)


def brute_force_cover(points, eps: float, metric: Callable = euclidean_metric) -> int:
    """
    Fewest groups of diameter ≤ 2·eps partitioning the points

    This is the optimal count of radius-eps balls with free centers on the line. Exhaustive
    over subsets, so limited to small sets.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force is limited to {BRUTE_FORCE_LIMIT} points, got {n}")
    if n == 0:
        return 0
    close = np.array([metric(points, points[i]) <= 2.0 * eps + DISTANCE_TOL for i in range(n)])
    full = (1 << n) - 1
    compatible = [True] + [False] * full
    masks_of = [int(sum(1 << j for j in range(n) if close[i, j])) for i in range(n)]
    for mask in range(1, full + 1):
        low = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << low)
        compatible[mask] = compatible[rest] and (rest & ~masks_of[low]) == 0
    best = [0] + [n + 1] * full
    for mask in range(1, full + 1):
        low = mask & -mask
        sub = mask
        while sub:
            if sub & low and compatible[sub]:
                best[mask] = min(best[mask], best[mask ^ sub] + 1)
            sub = (sub - 1) & mask
    return best[full]


# ---------------------------------------------------------------------------
# Local covers for testing
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """
    Finite set of model points indexed 0..N-1

    distance(indices, j) returns d(P_i, P_j) for every i in indices.
    """
    params: np.ndarray
    density: Callable[[int], DensityHandle]
    distance: Callable[[np.ndarray, int], np.ndarray]
    label: str = 'model'
    labels: Optional[Callable[[int], object]] = field(default=None)

    def __len__(self) -> int:
        return len(self.params)

    def key(self, i: int):
        return self.labels(i) if self.labels is not None else _as_key(self.params[i])

    @classmethod
    def from_family(cls, family: ParametricFamily, n_points: int = 2001,
                    metric: Optional[Callable] = None) -> 'DiscreteModel':
        thetas = np.linspace(family.lower, family.upper, n_points)
        metric = metric or family.metric
        return cls(params=thetas, density=lambda i: family.density(float(thetas[i])),
                   distance=lambda idx, j: np.asarray(metric(thetas[idx], thetas[j]), dtype=float),
                   label=family.label)

    @classmethod
    def from_mixtures(cls, mixings: Sequence[MixingDistribution], p0: DensityHandle,
                      pstar: DensityHandle, grid=None, factor: float = 0.25) -> 'DiscreteModel':
        """Mixtures under the weighted Hellinger distance with weight p0/p*"""
        grid = grid or default_grid()
        x = grid.points
        densities = [mixture_density(F) for F in mixings]
        roots = np.sqrt(np.stack([d(x) for d in densities]))
        weight = factor * grid.weights * np.exp(p0.logpdf(x) - pstar.logpdf(x))

        def distance(idx, j):
            diff = roots[np.asarray(idx, dtype=int)] - roots[j]
            return np.sqrt(np.maximum((diff * diff) @ weight, 0.0))

        return cls(params=np.arange(len(mixings), dtype=float),
                   density=lambda i: densities[i], distance=distance, label='mixtures',
                   labels=lambda i: int(i))


def cover_radius_factor(C: float, c: float) -> float:
    """A = 1/8 ∧ 1/(4√C) ∧ c/2"""
    return min(1.0 / 8.0, 1.0 / (4.0 * np.sqrt(C)), c / 2.0)


def local_cover_for_testing(model, p0: DensityHandle, pstar: DensityHandle, eps: float,
                            star: Optional[int] = None, theta_star: Optional[float] = None,
                            C: float = 1.0, c: float = 1.0, seed: int = 0,
                            n_combinations: int = COMBINATIONS_PER_CELL, max_members: int = 8,
                            grid=None) -> CoverReport:
    """
    Cover the annulus {eps < d(P, P*) < 2eps} by balls of radius A·eps and certify each hull

    model is a DiscreteModel or a ParametricFamily (discretized with its own metric, and
    theta_star locating P*). Every ball's convex hull must keep margin ≥ eps²/4.
    """
    if isinstance(model, ParametricFamily):
        if theta_star is None:
            raise ValueError("theta_star is required for a parametric family")
        model = DiscreteModel.from_family(model)
        star = int(np.argmin(np.abs(model.params - theta_star)))
    if star is None:
        raise ValueError("index of P* in the model is required")

    A = cover_radius_factor(C, c)
    radius = A * eps
    index = np.arange(len(model))
    to_star = model.distance(index, star)
    annulus = index[(to_star > eps) & (to_star < 2.0 * eps)]
    if annulus.size == 0:
        return CoverReport(epsilon=eps, n_balls=0, certified=True, radius_used=radius)

    perm = greedy_permutation(annulus, lambda idx, j: model.distance(idx.astype(int), int(j)),
                              stop_radius=radius)
    centers = annulus[perm.order]
    assignment = np.argmin(np.stack([model.distance(annulus, int(k)) for k in centers]), axis=0)

    margins = []
    for ball, center in enumerate(centers):
        members = annulus[assignment == ball]
        if members.size > max_members:
            rng = make_rng(derive_seed(seed, f"ball{int(center)}", 0))
            spread = model.distance(members, int(center))
            farthest = members[np.argsort(-spread, kind='stable')[:2]]
            others = rng.choice(np.setdiff1d(members, farthest), size=max_members - 2,
                                replace=False)
            members = np.concatenate([farthest, np.sort(others)])
        margin = hull_margin([model.density(int(i)) for i in members], p0, pstar,
                             n_combinations, derive_seed(seed, f"hull{int(center)}", 0), grid)
        if margin < eps * eps / 4.0:
            raise CertificationError(
                f"ball around {model.key(int(center))!r} has margin {margin:.4g} < {eps * eps / 4.0:.4g}; "
                f"check the metric or the radius factor A={A:.4g}", cell=model.key(int(center)))
        margins.append(margin)
    logger.info(f"local cover: eps={eps}, A={A:.4g}, {len(centers)} certified balls")
    return CoverReport(epsilon=eps, n_balls=len(centers),
                       centers=tuple(model.key(int(k)) for k in centers), certified=True,
                       radius_used=radius, margins=tuple(margins))


# ---------------------------------------------------------------------------
# Mixture entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyCurve:
    points: Tuple[Tuple[float, float], ...]
    c: float
    gamma: float
    n_probe: int

    def to_rows(self) -> List[Tuple[float, float]]:
        return list(self.points)


def random_mixtures(support: np.ndarray, M: float, count: int, seed: int,
                    max_atoms: int = 6) -> List[MixingDistribution]:
    """Point masses on every support point, then random sparse Dirichlet mixtures"""
    rng = make_rng(seed)
    mixings = [MixingDistribution(support=np.array([z]), weights=np.ones(1), M=M) for z in support]
    while len(mixings) < count:
        k = int(rng.integers(1, max_atoms + 1))
        atoms = np.sort(rng.choice(support.size, size=min(k, support.size), replace=False))
        mixings.append(MixingDistribution(support=support[atoms],
                                          weights=rng.dirichlet(np.ones(atoms.size)), M=M))
    return mixings[:count]


def mixture_entropy_curve(M: float, eps_list: Sequence[float], support: Optional[np.ndarray] = None,
                          n_probe: int = 10_000, seed: int = 0,
                          x_grid: Optional[np.ndarray] = None) -> EntropyCurve:
    """
    Sup-norm log covering numbers of location mixtures, with log N ≈ c·(log 1/ε)^γ fitted

    Only levels with more than one ball enter the fit.
    """
    eps_list = sorted(float(e) for e in eps_list)
    if any(not 0.0 < e < np.exp(-1.0) for e in eps_list):
        raise ValueError("eps values must lie in (0, 1/e)")
    support = support if support is not None else support_grid(M, 41)
    x = x_grid if x_grid is not None else np.linspace(-M - 5.0, M + 5.0, 201)
    kernels = kernel_matrix(x, support)

    mixings = random_mixtures(support, M, n_probe, seed)
    values = np.empty((len(mixings), x.size))
    for row, F in enumerate(mixings):
        cols = np.searchsorted(support, F.support)
        values[row] = kernels[:, cols] @ F.weights

    perm = greedy_permutation(values, sup_metric, stop_radius=eps_list[0])
    counts = [(e, perm.n_centers(e)) for e in sorted(eps_list, reverse=True)]
    points = tuple((e, float(np.log(count)) if count else 0.0) for e, count in counts)

    usable = [(e, lc) for e, lc in points if lc > 0]
    if len(usable) < 2:
        raise RateFitError("need at least two eps levels with more than one ball to fit the growth")
    fit = stats.linregress(np.log(np.log(1.0 / np.array([e for e, _ in usable]))),
                           np.log([lc for _, lc in usable]))
    logger.info(f"mixture entropy: gamma={fit.slope:.3f} over {len(usable)} levels")
    return EntropyCurve(points=points, c=float(np.exp(fit.intercept)), gamma=float(fit.slope),
                        n_probe=len(mixings))
