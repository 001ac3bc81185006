"""
Tests of p0 against finite measures and their error bounds
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from misspec.divergence import (
    ALPHA_GRID,
    hellinger_transform,
    kl_divergence,
    min_transform,
    misspec_margin,
)
from misspec.errors import CertificationError, ImportanceSamplingError
from misspec.measures import (
    DensityHandle,
    ParametricFamily,
    ProductGrid,
    QuadratureGrid,
    Sampler,
    convex_combination,
    default_grid,
    gauss_legendre_grid,
    grid_sum,
    q_of_p,
)
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

MIN_EFFECTIVE_SAMPLE = 50
COMBINATIONS_PER_CELL = 100


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Decision rule with values in [0, 1]"""
    __test__ = False

    decide: Callable[[np.ndarray], np.ndarray]
    description: str

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.decide(np.asarray(x, dtype=float)), dtype=float)

    def check_range(self, probes) -> bool:
        values = self(probes)
        return bool(np.all((values >= 0.0) & (values <= 1.0)))


def lr_test(p: DensityHandle, q: DensityHandle) -> TestFunction:
    """x ↦ 1{p(x) < q(x)}; ties decide 0"""
    return TestFunction(decide=lambda x: (p.logpdf(x) < q.logpdf(x)).astype(float),
                        description=f"1{{{p.label} < {q.label}}}")


def iid_lr_test(p: DensityHandle, q: DensityHandle) -> TestFunction:
    """Sample rows x ↦ 1{Π p(x_i) < Π q(x_i)}"""
    def decide(samples):
        samples = np.atleast_2d(samples)
        return (p.logpdf(samples).sum(axis=1) < q.logpdf(samples).sum(axis=1)).astype(float)

    return TestFunction(decide=decide, description=f"1{{prod {p.label} < prod {q.label}}}")


def _switch_points(t: TestFunction, grid: QuadratureGrid, iterations: int = 64) -> List[float]:
    """Locate where the decision changes between adjacent nodes, by bisection"""
    nodes = grid.nodes
    decisions = t(nodes)
    points = []
    for i in np.flatnonzero(decisions[1:] != decisions[:-1]):
        a, b = float(nodes[i]), float(nodes[i + 1])
        da = decisions[i]
        for _ in range(iterations):
            mid = 0.5 * (a + b)
            if t(np.array([mid]))[0] == da:
                a = mid
            else:
                b = mid
        points.append(0.5 * (a + b))
    return points


def _refined(t: TestFunction, grid) -> QuadratureGrid:
    grid = grid if grid is not None else default_grid()
    if isinstance(grid, QuadratureGrid):
        points = _switch_points(t, grid)
        if points:
            grid = grid.with_breakpoints(points)
    return grid


def test_risk(t: TestFunction, p0: DensityHandle, q: DensityHandle, grid=None) -> float:
    """∫ p0·t + ∫ q·(1 - t), with the grid split where t switches"""
    grid = _refined(t, grid)
    x = grid.points
    decision = t(x)
    return grid_sum(p0(x) * decision + q(x) * (1.0 - decision), grid)


def minimax_risk(p0: DensityHandle, q: DensityHandle, grid=None) -> float:
    """∫ min(p0, q), the smallest attainable Pϕ + Q(1 - ϕ)"""
    grid = _refined(lr_test(p0, q), grid)
    x = grid.points
    return grid_sum(np.minimum(p0(x), q(x)), grid)


def sandwich_check(p0: DensityHandle, q: DensityHandle, grid=None) -> Tuple[float, float]:
    """(risk of the LR test, min of ρ_α over the α-grid and the located optimum)"""
    risk = test_risk(lr_test(p0, q), p0, q, grid)
    alpha_star, rho_star = min_transform(p0, q, grid)
    rhos = [hellinger_transform(p0, q, a, grid) for a in ALPHA_GRID]
    return risk, min(min(rhos), rho_star)


# ---------------------------------------------------------------------------
# n-sample power
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerEstimate:
    type1_hat: float
    type2_hat: float
    bound: float
    stderr: float
    ess: float
    alpha: float

    @property
    def total(self) -> float:
        return self.type1_hat + self.type2_hat


def draw_samples(sampler: Sampler, n: int, n_reps: int, seed: int) -> np.ndarray:
    """n_reps rows of n draws from p0"""
    return sampler.draw_with(make_rng(seed), (n_reps, n))


def _importance_errors(samples: np.ndarray, decisions: np.ndarray, p0: DensityHandle,
                       q: DensityHandle) -> Tuple[float, float, float]:
    """Q^n(1 - ϕ) by importance weights Π q/p0 from P0^n, its standard error and ESS"""
    llr = (q.logpdf(samples) - p0.logpdf(samples)).sum(axis=1)
    accept = decisions < 1.0
    with np.errstate(over='ignore'):
        weights = np.where(accept, (1.0 - decisions) * np.exp(np.where(accept, llr, 0.0)), 0.0)
    if not accept.any():
        return 0.0, 0.0, 0.0
    log_w = llr[accept] + np.log1p(-decisions[accept])
    ess = float(np.exp(2.0 * logsumexp(log_w) - logsumexp(2.0 * log_w)))
    n = samples.shape[0]
    return float(weights.mean()), float(weights.std(ddof=1) / np.sqrt(n)), ess


def iid_power_bound(sampler: Sampler, q: DensityHandle, n: int, n_reps: int, seed: int,
                    grid=None) -> PowerEstimate:
    """
    Monte Carlo errors of the n-sample LR test of p0 against q, and (min_α ρ_α)^n

    Type II under the (possibly non-probability) Q^n is importance sampled from P0^n.
    """
    p0 = sampler.target
    samples = draw_samples(sampler, n, n_reps, seed)
    decisions = iid_lr_test(p0, q)(samples)
    type2, _, ess = _importance_errors(samples, decisions, p0, q)
    if ess < MIN_EFFECTIVE_SAMPLE:
        raise ImportanceSamplingError(
            f"effective importance sample size {ess:.1f} < {MIN_EFFECTIVE_SAMPLE}; use a smaller n",
            ess=ess)
    llr = (q.logpdf(samples) - p0.logpdf(samples)).sum(axis=1)
    combined = decisions + np.where(decisions < 1.0, np.exp(np.minimum(llr, 0.0)), 0.0)
    alpha, rho = min_transform(p0, q, grid)
    estimate = PowerEstimate(type1_hat=float(decisions.mean()), type2_hat=type2,
                             bound=float(rho ** n),
                             stderr=float(combined.std(ddof=1) / np.sqrt(n_reps)),
                             ess=ess, alpha=alpha)
    logger.debug(f"power n={n}: {estimate}")
    return estimate


def power_decay_violations(ns: Sequence[int], estimates: Sequence[PowerEstimate],
                           slack: float = 3.0) -> List[Tuple[int, int]]:
    """Consecutive (n, n') whose type1+type2 grows by more than slack joint stderrs"""
    order = np.argsort(ns)
    violations = []
    for i, j in zip(order[:-1], order[1:]):
        prev, cur = estimates[i], estimates[j]
        if cur.total > prev.total + slack * np.hypot(prev.stderr, cur.stderr):
            violations.append((int(ns[i]), int(ns[j])))
    return violations


# ---------------------------------------------------------------------------
# Product measures
# ---------------------------------------------------------------------------

def _simplex_lattice(k: int, steps: int) -> np.ndarray:
    if k == 1:
        return np.ones((1, 1))
    rows = [np.array(c, dtype=float) / steps
            for c in itertools.product(range(steps + 1), repeat=k - 1) if sum(c) <= steps]
    return np.array([np.append(r, 1.0 - r.sum()) for r in rows])


def _as_list(q) -> List[DensityHandle]:
    return list(q) if isinstance(q, (list, tuple)) else [q]


def _hull_sup(p0: DensityHandle, qs: List[DensityHandle], alpha: float, grid,
              steps: int) -> float:
    x = grid.points
    dens0 = p0(x) ** alpha
    stacked = np.stack([q(x) for q in qs])
    best = 0.0
    for lam in _simplex_lattice(len(qs), steps):
        best = max(best, grid_sum(dens0 * (lam @ stacked) ** (1.0 - alpha), grid))
    return best


def factorization_check(p0a: DensityHandle, qa: Union[DensityHandle, Sequence[DensityHandle]],
                        p0b: DensityHandle, qb: Union[DensityHandle, Sequence[DensityHandle]],
                        alpha: float, grids: Optional[Tuple[QuadratureGrid, QuadratureGrid]] = None,
                        lattice_steps: int = 10, weight_steps: int = 100) -> Tuple[float, float]:
    """
    ρ_α of product measures against the product of the factor transforms

    qa and qb are single densities or the vertices of a convex hull. lhs is the largest ρ_α
    of p0a×p0b over convex combinations of the product vertices (simplex lattice);
    rhs multiplies the factors' largest ρ_α over their own hulls.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    grid_a, grid_b = grids or (gauss_legendre_grid(-12.0, 12.0, order=20),
                               gauss_legendre_grid(-12.0, 12.0, order=20))
    product = ProductGrid(grid_a, grid_b)
    qa_list, qb_list = _as_list(qa), _as_list(qb)

    xa, xb = grid_a.points, grid_b.points
    base = np.outer(p0a(xa), p0b(xb)).ravel() ** alpha
    vertices = [np.outer(a(xa), b(xb)).ravel() for a in qa_list for b in qb_list]
    lhs = 0.0
    for lam in _simplex_lattice(len(vertices), lattice_steps):
        mixed = sum(w * v for w, v in zip(lam, vertices))
        lhs = max(lhs, grid_sum(base * mixed ** (1.0 - alpha), product))

    rhs = (_hull_sup(p0a, qa_list, alpha, grid_a, weight_steps)
           * _hull_sup(p0b, qb_list, alpha, grid_b, weight_steps))
    return lhs, rhs


# ---------------------------------------------------------------------------
# Cells and shells
# ---------------------------------------------------------------------------

def hull_margin(members: Sequence[DensityHandle], p0: DensityHandle, pstar: DensityHandle,
                n_combinations: int, seed: int, grid=None) -> float:
    """Smallest margin over the members and random convex combinations of 2-3 of them"""
    rng = make_rng(seed)
    margins = [misspec_margin(p0, m, pstar, grid) for m in members]
    if len(members) > 1:
        for _ in range(n_combinations):
            size = int(rng.integers(2, min(3, len(members)) + 1))
            chosen = rng.choice(len(members), size=size, replace=False)
            weights = rng.dirichlet(np.ones(size))
            mixed = convex_combination([members[i] for i in chosen], weights)
            margins.append(misspec_margin(p0, mixed, pstar, grid))
    return float(min(margins))


def cell_margin(cell: Tuple[float, float], p0: DensityHandle, pstar: DensityHandle,
                family: ParametricFamily, n_probe: int = 8, seed: int = 0, grid=None,
                n_combinations: int = COMBINATIONS_PER_CELL) -> float:
    """Smallest margin over the endpoints, n_probe - 2 interior members and their combinations"""
    lower, upper = float(cell[0]), float(cell[1])
    if not (family.contains(lower) and family.contains(upper)) or upper < lower:
        raise ValueError(f"cell [{lower}, {upper}] is outside the family's parameter domain")
    rng = make_rng(derive_seed(seed, f"cell[{lower!r},{upper!r}]", 0))
    if upper == lower:
        thetas = [lower]
    else:
        inner = rng.uniform(lower, upper, size=max(n_probe - 2, 0))
        thetas = [lower, upper] + sorted(inner.tolist())
    members = [family.density(t) for t in thetas]
    return hull_margin(members, p0, pstar, n_combinations, int(rng.integers(2 ** 63)), grid)


def verify_cell(cell: Tuple[float, float], p0: DensityHandle, pstar: DensityHandle,
                family: ParametricFamily, eps: float, j: int, n_probe: int = 8,
                seed: int = 0, grid=None, n_combinations: int = COMBINATIONS_PER_CELL) -> bool:
    """True iff every probe of the cell's convex hull has margin ≥ j²ε²/4"""
    margin = cell_margin(cell, p0, pstar, family, n_probe, seed, grid, n_combinations)
    return margin >= j * j * eps * eps / 4.0


@dataclass(frozen=True)
class ShellCell:
    lower: float
    upper: float
    j: int
    margin: float
    worst: float


@dataclass(frozen=True)
class ShellCover:
    """Cells of the shells {jε < d(θ, θ*) ≤ (j+1)ε}, each with a certified margin"""
    epsilon: float
    theta_star: float
    shells: Tuple[Tuple[int, Tuple[ShellCell, ...]], ...]

    def __post_init__(self):
        for j, cells in self.shells:
            for cell in cells:
                if cell.margin < j * j * self.epsilon ** 2 / 4.0:
                    raise CertificationError(
                        f"cell [{cell.lower}, {cell.upper}] margin {cell.margin:.4g} below "
                        f"j²ε²/4 for j={j}", cell=(cell.lower, cell.upper))

    @property
    def cells(self) -> List[ShellCell]:
        return [cell for _, cells in self.shells for cell in cells]

    def counts(self) -> Dict[int, int]:
        return {j: len(cells) for j, cells in self.shells}

    def to_rows(self) -> List[Tuple]:
        return [(c.j, c.lower, c.upper, c.worst, c.margin) for c in self.cells]


def _shell_runs(family: ParametricFamily, theta_star: float, low: float, high: float,
                resolution: int) -> List[Tuple[float, float]]:
    """Maximal θ-intervals with low < d(θ, θ*) ≤ high"""
    thetas = np.linspace(family.lower, family.upper, resolution)
    d = np.asarray(family.metric(thetas, theta_star))
    inside = (d > low) & (d <= high)
    runs = []
    start = None
    for i, flag in enumerate(inside):
        if flag and start is None:
            start = i
        if start is not None and (not flag or i == len(inside) - 1):
            stop = i if flag else i - 1
            runs.append((float(thetas[start]), float(thetas[stop])))
            start = None
    return runs


def build_shell_cover(family: ParametricFamily, p0: DensityHandle, pstar: DensityHandle,
                      theta_star: float, eps: float, j_max: int, cells_per_shell: int = 1,
                      n_probe: int = 8, seed: int = 0, grid=None,
                      resolution: int = 20001) -> ShellCover:
    """Split each shell into equal cells and certify each one"""
    shells = []
    for j in range(1, j_max + 1):
        cells = []
        for lower, upper in _shell_runs(family, theta_star, j * eps, (j + 1) * eps, resolution):
            edges = np.linspace(lower, upper, cells_per_shell + 1)
            for a, b in zip(edges[:-1], edges[1:]):
                cell = (float(a), float(b))
                margin = cell_margin(cell, p0, pstar, family, n_probe, seed, grid)
                if margin < j * j * eps * eps / 4.0:
                    raise CertificationError(
                        f"cell [{a:.6g}, {b:.6g}] in shell {j} has margin {margin:.4g} "
                        f"< {j * j * eps * eps / 4.0:.4g}", cell=cell)
                worst = a if abs(a - theta_star) <= abs(b - theta_star) else b
                cells.append(ShellCell(lower=cell[0], upper=cell[1], j=j, margin=margin,
                                       worst=float(worst)))
        if cells:
            shells.append((j, tuple(cells)))
    logger.info(f"shell cover: eps={eps}, {sum(len(c) for _, c in shells)} certified cells")
    return ShellCover(epsilon=eps, theta_star=theta_star, shells=tuple(shells))


@dataclass(frozen=True, eq=False)
class ShellTestResult:
    test: TestFunction
    type1_bound: float
    type2_bound: float
    type1_bound_monotone: float
    alternatives: Tuple[DensityHandle, ...]


def shell_test(cover: ShellCover, family: ParametricFamily, p0: DensityHandle,
               pstar: DensityHandle, n: int, J: int, grid=None) -> ShellTestResult:
    """
    Maximum of per-cell n-sample LR tests against each cell's worst member

    type1_bound = Σ_j N_j exp(-n j²ε²/4); type2_bound = exp(-n J²ε²/4);
    the monotone form D(ε)e^{-nε²/4}/(1 - e^{-nε²/4}) uses D(ε) = max_j N_j.
    """
    cells = cover.cells
    if not cells:
        raise CertificationError("cannot build a test from an empty cover")
    eps = cover.epsilon
    alternatives = tuple(q_of_p(family.density(c.worst), p0, pstar, grid) for c in cells)

    def decide(samples):
        samples = np.atleast_2d(samples)
        base = p0.logpdf(samples).sum(axis=1)
        rejections = [base < q.logpdf(samples).sum(axis=1) for q in alternatives]
        return np.any(rejections, axis=0).astype(float)

    counts = cover.counts()
    type1 = sum(count * np.exp(-n * j * j * eps * eps / 4.0) for j, count in counts.items())
    decay = np.exp(-n * eps * eps / 4.0)
    monotone = max(counts.values()) * decay / (1.0 - decay)
    return ShellTestResult(test=TestFunction(decide=decide,
                                             description=f"max of {len(cells)} cell LR tests"),
                           type1_bound=float(type1),
                           type2_bound=float(np.exp(-n * J * J * eps * eps / 4.0)),
                           type1_bound_monotone=float(monotone),
                           alternatives=alternatives)


def estimate_shell_errors(result: ShellTestResult, sampler: Sampler, family: ParametricFamily,
                          pstar: DensityHandle, thetas: Sequence[float], n: int, n_reps: int,
                          seed: int, grid=None) -> Dict[str, object]:
    """Monte Carlo type I under P0^n and importance-sampled type II under Q(P_θ)^n"""
    p0 = sampler.target
    samples = draw_samples(sampler, n, n_reps, seed)
    decisions = result.test(samples)
    type2 = {}
    for theta in thetas:
        q = q_of_p(family.density(float(theta)), p0, pstar, grid)
        value, stderr, _ = _importance_errors(samples, decisions, p0, q)
        type2[float(theta)] = (value, stderr)
    return {'type1': (float(decisions.mean()), float(decisions.std(ddof=1) / np.sqrt(n_reps))),
            'type2': type2}


def kl_minimality_check(p0: DensityHandle, pstar: DensityHandle,
                        probes: Sequence[DensityHandle], grid=None) -> Tuple[bool, float]:
    """
    (all margins positive, KL(p0||p*) - min over probes of KL(p0||p))

    A point with positive margin against every probe must not be beaten in KL.
    """
    positive = all(misspec_margin(p0, p, pstar, grid) > 0 for p in probes)
    base = kl_divergence(p0, pstar, grid)
    best = min(kl_divergence(p0, p, grid) for p in probes)
    return positive, base - best
