"""Moduli of path families: admissible densities, upper bounds and discrete extremal length."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, sparse

from app.config import settings
from app.services.mobius import MobiusMap, Point, conformal_factor, make_translation_to_origin
from app.services.paths import BALL, QUOTIENT, SampledPath, line_integral, map_path, radial_segment
from app.services.quotient import MeasureEstimate, QuotientPoint, integrate_region, unit_sphere_area
from app.services.regions import Annulus, Box, QuotientRing, Region, Sampler

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], np.ndarray]
Weight = Callable[[np.ndarray], np.ndarray]

# ring densities are supported on the closed ring
CLOSURE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Raised when the modulus optimizer exhausts its iteration budget."""

    def __init__(self, best: float, iterations: int, gap: float):
        super().__init__(f"no convergence after {iterations} iterations (best {best:.6g}, gap {gap:.2e})")
        self.best = best
        self.iterations = iterations
        self.gap = gap


class DensityField:
    """A nonnegative density ρ evaluated on (N, n) arrays of points or representatives."""

    def __init__(self, evaluator: Evaluator, label: str = "density"):
        self.evaluator = evaluator
        self.label = label
        self._cache: Dict[Tuple[Any, ...], np.ndarray] = {}

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        values = np.broadcast_to(np.asarray(self.evaluator(X), dtype=float), (X.shape[0],))
        if np.any(values < 0) or np.any(np.isnan(values)):
            raise ValueError(f"density '{self.label}' is negative or undefined at some points")
        return np.array(values)

    def on_grid(self, grid: "Grid") -> np.ndarray:
        """Values at cell centers, cached per grid."""
        key = grid.key()
        if key not in self._cache:
            self._cache[key] = self(grid.centers())
        return self._cache[key]

    @classmethod
    def constant(cls, value: float, region: Optional[Region] = None) -> "DensityField":
        if value < 0:
            raise ValueError("constant density must be nonnegative")
        if region is None:
            return cls(lambda X: np.full(X.shape[0], float(value)), f"constant({value})")
        return cls(lambda X: np.where(region(X), float(value), 0.0), f"constant({value})")


@dataclass(frozen=True)
class Grid:
    """Axis-aligned cell grid over a box in a chart of B^n."""

    low: Tuple[float, ...]
    high: Tuple[float, ...]
    resolution: int

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"grid resolution must be positive (got: {self.resolution})")
        if len(self.low) != len(self.high) or any(h <= l for l, h in zip(self.low, self.high)):
            raise ValueError("grid box must have low < high on every axis")

    @classmethod
    def covering(cls, points: np.ndarray, resolution: int, pad: float = 1e-9) -> "Grid":
        low = np.min(points, axis=0) - pad
        high = np.max(points, axis=0) + pad
        return cls(tuple(map(float, low)), tuple(map(float, high)), resolution)

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def cell(self) -> np.ndarray:
        return (np.asarray(self.high) - np.asarray(self.low)) / self.resolution

    @property
    def size(self) -> int:
        return self.resolution**self.dim

    def key(self) -> Tuple[Any, ...]:
        return self.low, self.high, self.resolution

    def locate(self, X: np.ndarray) -> np.ndarray:
        """Flat cell index per row, -1 outside the box."""
        idx = np.floor((X - np.asarray(self.low)) / self.cell).astype(int)
        inside = np.all((idx >= 0) & (idx < self.resolution), axis=1)
        flat = np.ravel_multi_index(tuple(np.clip(idx, 0, self.resolution - 1).T), (self.resolution,) * self.dim)
        return np.where(inside, flat, -1)

    def cell_lows(self, cells: np.ndarray) -> np.ndarray:
        idx = np.column_stack(np.unravel_index(cells, (self.resolution,) * self.dim))
        return np.asarray(self.low) + idx * self.cell

    def centers(self, cells: Optional[np.ndarray] = None) -> np.ndarray:
        cells = np.arange(self.size) if cells is None else cells
        return self.cell_lows(cells) + self.cell / 2.0

    def to_dict(self) -> Dict[str, Any]:
        return {"low": list(self.low), "high": list(self.high), "resolution": self.resolution}


@dataclass
class PathFamily:
    """
    A finite sample of a path family together with the domain D it lives in.

    `joins` optionally holds (E, F) distance predicates used to check that
    every path joins E to F inside D.
    """

    paths: List[SampledPath]
    domain: Region
    dimension: int
    space: str = BALL
    label: str = "family"
    joins: Optional[Tuple[Callable[[np.ndarray], bool], Callable[[np.ndarray], bool]]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.paths)

    def all_points(self) -> np.ndarray:
        return np.vstack([p.points for p in self.paths])

    def check_joins(self) -> bool:
        if self.joins is None:
            return True
        starts_in, ends_in = self.joins
        return all(starts_in(p.points[0]) and ends_in(p.points[-1]) for p in self.paths)

    def subset(self, count: int) -> "PathFamily":
        """Evenly spaced deterministic subset of `count` paths."""
        if count >= len(self.paths):
            return self
        idx = np.linspace(0, len(self.paths) - 1, count).round().astype(int)
        return PathFamily([self.paths[i] for i in idx], self.domain, self.dimension, self.space, self.label, self.joins, dict(self.metadata))

    def extend(self, other: "PathFamily") -> "PathFamily":
        return PathFamily(self.paths + other.paths, self.domain, self.dimension, self.space, self.label, self.joins, dict(self.metadata))

    def image(self, forward: Evaluator, backward: Evaluator, label: Optional[str] = None) -> "PathFamily":
        """f(Γ): transported paths on the domain f(D), described through f^{-1}."""
        domain = PreimageRegion(self.domain, backward)
        paths = [map_path(p, forward) for p in self.paths]
        return PathFamily(paths, domain, self.dimension, self.space, label or f"image({self.label})", None, dict(self.metadata))

    @classmethod
    def explicit(cls, paths: Sequence[SampledPath], domain: Region, label: str = "explicit") -> "PathFamily":
        if not paths:
            raise ValueError("explicit family needs at least one path")
        return cls(list(paths), domain, paths[0].dim, paths[0].space, label)

    @classmethod
    def annulus(
        cls,
        center: Sequence[float],
        r1: float,
        r2: float,
        n: int = 2,
        count: int = 1024,
        spirals: int = 0,
        twist: float = 1.0,
        seed: int = 0,
    ) -> "PathFamily":
        """
        Γ(S(c, r1), S(c, r2), A): radial segments across the Euclidean ring,
        plus `spirals` paths turning by `twist` radians (n = 2 only).
        """
        if not 0 < r1 < r2:
            raise ValueError(f"annulus needs 0 < r1 < r2 (got: {r1}, {r2})")
        c = np.asarray(center, dtype=float)
        directions = _sphere_directions(n, count, seed)
        paths = [radial_segment(c + r1 * u, c + r2 * u) for u in directions]
        for k in range(spirals if n == 2 else 0):
            theta0 = 2.0 * math.pi * k / spirals
            paths.append(_spiral(c, r1, r2, theta0, twist))

        def on_inner(x: np.ndarray) -> bool:
            return abs(float(np.linalg.norm(x - c)) - r1) <= 1e-9

        def on_outer(x: np.ndarray) -> bool:
            return abs(float(np.linalg.norm(x - c)) - r2) <= 1e-9

        return cls(
            paths,
            Annulus(c, r1, r2),
            n,
            BALL,
            f"annulus({r1}, {r2})",
            (on_inner, on_outer),
            {"center": c.tolist(), "r1": r1, "r2": r2, "spirals": spirals},
        )

    @classmethod
    def hyperbolic_ring(
        cls,
        center: Sequence[float],
        r1: float,
        r2: float,
        n: int = 2,
        count: int = 1024,
        seed: int = 0,
        space: str = BALL,
        group=None,
    ) -> "PathFamily":
        """Geodesic rays across B_h(c, r2) minus the closure of B_h(c, r1)."""
        if not 0 < r1 < r2:
            raise ValueError(f"ring needs 0 < r1 < r2 (got: {r1}, {r2})")
        c = np.asarray(center, dtype=float)
        back = make_translation_to_origin(Point(c)).inverse()
        t1, t2 = math.tanh(r1 / 2.0), math.tanh(r2 / 2.0)
        paths = []
        for u in _sphere_directions(n, count, seed):
            segment = map_path(radial_segment(t1 * u, t2 * u), back.apply_array)
            paths.append(segment.lift_to(space, group) if space == QUOTIENT else segment)
        return cls(
            paths,
            Annulus(c, r1, r2, metric="hyperbolic"),
            n,
            space,
            f"hyperbolic_ring({r1}, {r2})",
            None,
            {"center": c.tolist(), "r1": r1, "r2": r2},
        )

    @classmethod
    def box_crossing(cls, low: Sequence[float], high: Sequence[float], axis: int = 0, count: int = 64) -> "PathFamily":
        """Straight segments joining the two faces of a box orthogonal to `axis`."""
        low_a, high_a = np.asarray(low, dtype=float), np.asarray(high, dtype=float)
        n = low_a.shape[0]
        other = [k for k in range(n) if k != axis]
        ticks = [(np.arange(count) + 0.5) / count * (high_a[k] - low_a[k]) + low_a[k] for k in other]
        paths = []
        for offsets in zip(*[t.ravel() for t in np.meshgrid(*ticks, indexing="ij")]) if other else [()]:
            start = low_a.copy()
            for k, value in zip(other, offsets):
                start[k] = value
            end = start.copy()
            end[axis] = high_a[axis]
            paths.append(radial_segment(start, end))
        return cls(paths, Box(low_a, high_a), n, BALL, f"box_crossing(axis={axis})", None, {"low": low_a.tolist(), "high": high_a.tolist(), "axis": axis})


class PreimageRegion(Region):
    """f(D) described as {y : f^{-1}(y) ∈ D}."""

    def __init__(self, domain: Region, backward: Evaluator):
        self.domain = domain
        self.backward = backward

    def contains(self, X: np.ndarray) -> np.ndarray:
        return self.domain(self.backward(X))


def _sphere_directions(n: int, count: int, seed: int) -> np.ndarray:
    if n == 2:
        theta = 2.0 * math.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((count, n))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _spiral(center: np.ndarray, r1: float, r2: float, theta0: float, twist: float) -> SampledPath:
    def curve(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        r = r1 + (r2 - r1) * t
        theta = theta0 + twist * t
        return center[None, :] + np.column_stack([r * np.cos(theta), r * np.sin(theta)])

    t = np.linspace(0.0, 1.0, 65)
    return SampledPath(t, curve(t), curve=curve)


@dataclass
class AdmissibilityReport:
    min_integral: float
    max_integral: float
    checked: int
    threshold: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "min_integral": self.min_integral,
            "max_integral": self.max_integral,
            "checked": self.checked,
            "threshold": self.threshold,
            "passed": self.passed,
        }


def _euclidean_line_integral(path: SampledPath, rho: DensityField, max_word_len: Optional[int] = None) -> float:
    points = path.refine().points
    values = rho(points)
    steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return float(np.sum(0.5 * (values[:-1] + values[1:]) * steps))


def is_admissible(
    rho: DensityField,
    fam: PathFamily,
    sample_count: Optional[int] = None,
    threshold: float = 1.0 - 1e-3,
    max_word_len: Optional[int] = None,
    threads: Optional[int] = None,
    element: str = "hyperbolic",
) -> AdmissibilityReport:
    """min over sampled paths of ∫_γ ρ ds, passing at `threshold`; ds follows `element`."""
    subset = fam.subset(sample_count) if sample_count else fam
    integral = line_integral if element == "hyperbolic" else _euclidean_line_integral
    with ThreadPoolExecutor(max_workers=threads or settings.threads) as pool:
        values = list(pool.map(lambda p: integral(p, rho, max_word_len), subset.paths))
    low, high = float(min(values)), float(max(values))
    return AdmissibilityReport(low, high, len(values), threshold, low >= threshold)


def modulus_upper_bound(
    rho: DensityField,
    domain: Region,
    n: int,
    seed: int = 0,
    element: str = "hyperbolic",
    weight: Optional[Weight] = None,
    sampler: Optional[Sampler] = None,
    samples: Optional[int] = None,
    threads: Optional[int] = None,
) -> MeasureEstimate:
    """
    ∫_D Q ρ^n dV for an admissible ρ; with Q ≡ 1 this bounds M(Γ) from above.
    """

    def integrand(X: np.ndarray) -> np.ndarray:
        values = rho(X) ** n
        return values * weight(X) if weight is not None else values

    return integrate_region(integrand, domain, n, sampler, seed, samples, threads=threads, element=element)


def check_weight_normalization(eta: Callable[[np.ndarray], np.ndarray], r1: float, r2: float, tol: float = 1e-6) -> float:
    value, _ = integrate.quad(lambda t: float(np.asarray(eta(np.array([t])))[0]), r1, r2, limit=200)
    if value < 1.0 - tol:
        raise ValueError(f"∫ η over ({r1}, {r2}) is {value:.8f} < 1")
    return value


def ring_test_density(
    p0: QuotientPoint,
    r1: float,
    r2: float,
    eta: Callable[[np.ndarray], np.ndarray],
    max_word_len: Optional[int] = None,
) -> DensityField:
    """ρ(p) = η(h~(p, p0)) on the closed quotient ring r1 <= h~ <= r2, zero elsewhere."""
    if not 0 < r1 < r2:
        raise ValueError(f"ring needs 0 < r1 < r2 (got: {r1}, {r2})")
    check_weight_normalization(eta, r1, r2)
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    ring = QuotientRing(p0.group, p0.rep.coords, r1, r2, max_word_len)

    def evaluate(X: np.ndarray) -> np.ndarray:
        d = ring.distances(X)
        inside = (d >= r1 * (1.0 - CLOSURE_TOL)) & (d <= r2 * (1.0 + CLOSURE_TOL))
        out = np.zeros(X.shape[0])
        if np.any(inside):
            out[inside] = np.asarray(eta(d[inside]), dtype=float)
        return out

    return DensityField(evaluate, f"ring_test({r1}, {r2})")


def constant_weight(r1: float, r2: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda t: np.full(np.shape(t), 1.0 / (r2 - r1))


def log_weight(r1: float, r2: float) -> Callable[[np.ndarray], np.ndarray]:
    """η(t) = 1/(t log(r2/r1))."""
    scale = math.log(r2 / r1)
    return lambda t: 1.0 / (np.asarray(t) * scale)


def extremal_ring_weight(r1: float, r2: float) -> Callable[[np.ndarray], np.ndarray]:
    """η(t) = 1/(sinh t · log(tanh(r2/2)/tanh(r1/2))), extremal for hyperbolic rings."""
    scale = math.log(math.tanh(r2 / 2.0) / math.tanh(r1 / 2.0))
    return lambda t: 1.0 / (np.sinh(np.asarray(t)) * scale)


def annulus_extremal_density(
    center: Sequence[float], r1: float, r2: float, element: str = "euclidean"
) -> DensityField:
    """1/(|x - c| log(r2/r1)) on the closed Euclidean ring, divided by 2/(1-|x|^2) for the hyperbolic element."""
    c = np.asarray(center, dtype=float)
    scale = math.log(r2 / r1)

    def evaluate(X: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(X - c, axis=1)
        inside = (r >= r1 * (1.0 - CLOSURE_TOL)) & (r <= r2 * (1.0 + CLOSURE_TOL))
        out = np.zeros(X.shape[0])
        out[inside] = 1.0 / (r[inside] * scale)
        if element == "hyperbolic":
            out = out / conformal_factor(X)
        return out

    return DensityField(evaluate, f"annulus_extremal({r1}, {r2}, {element})")


def annulus_modulus_reference(n: int, r1: float, r2: float) -> float:
    """ω_{n-1} (log(r2/r1))^{1-n}."""
    if not 0 < r1 < r2:
        raise ValueError(f"annulus needs 0 < r1 < r2 (got: {r1}, {r2})")
    return unit_sphere_area(n) * math.log(r2 / r1) ** (1 - n)


def hyperbolic_ring_modulus_reference(n: int, r1: float, r2: float) -> float:
    """Modulus of the ring between hyperbolic spheres of radii r1 < r2."""
    if not 0 < r1 < r2:
        raise ValueError(f"ring needs 0 < r1 < r2 (got: {r1}, {r2})")
    return unit_sphere_area(n) * math.log(math.tanh(r2 / 2.0) / math.tanh(r1 / 2.0)) ** (1 - n)


@dataclass
class ModulusEstimate:
    """Discrete modulus of a sampled family; `estimate` is the feasible primal value."""

    estimate: float
    dual_bound: float
    relative_gap: float
    iterations: int
    converged: bool
    min_path_integral: float
    max_path_integral: float
    path_count: int
    cells_used: int
    grid: Grid
    element: str
    rho: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    cells: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=int))

    def density_field(self) -> DensityField:
        """The optimal cell density as a piecewise-constant field."""
        lookup = dict(zip(self.cells.tolist(), self.rho.tolist()))
        grid = self.grid

        def evaluate(X: np.ndarray) -> np.ndarray:
            cells = grid.locate(X)
            return np.array([lookup.get(int(c), 0.0) for c in cells])

        return DensityField(evaluate, "discrete_optimum")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "estimate": self.estimate,
            "dual_bound": self.dual_bound,
            "relative_gap": self.relative_gap,
            "iterations": self.iterations,
            "converged": self.converged,
            "residuals": {"min_path_integral": self.min_path_integral, "max_path_integral": self.max_path_integral},
            "paths": self.path_count,
            "cells_used": self.cells_used,
            "grid": self.grid.to_dict(),
            "element": self.element,
        }


def default_grid(fam: PathFamily, resolution: int) -> Grid:
    """The domain box for box families, else the bounding box of the sampled paths."""
    if isinstance(fam.domain, Box):
        return Grid(tuple(map(float, fam.domain.low)), tuple(map(float, fam.domain.high)), resolution)
    return Grid.covering(fam.all_points(), resolution)


def _densify(path: SampledPath, step: float) -> np.ndarray:
    lengths = np.linalg.norm(np.diff(path.points, axis=0), axis=1)
    pieces = np.maximum(1, np.ceil(lengths / step).astype(int))
    params = [path.params[:1]]
    for i, k in enumerate(pieces):
        params.append(np.linspace(path.params[i], path.params[i + 1], k + 1)[1:])
    return path.evaluate(np.concatenate(params))


def incidence_matrix(
    paths: Sequence[SampledPath], grid: Grid, element: str = "euclidean", threads: Optional[int] = None
) -> sparse.csr_matrix:
    """A[p, c] = length (in the chosen element) of path p inside cell c."""
    step = float(np.min(grid.cell)) / 4.0

    def row(path: SampledPath) -> Tuple[np.ndarray, np.ndarray]:
        pts = _densify(path, step)
        mids = (pts[:-1] + pts[1:]) / 2.0
        ds = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if element == "hyperbolic":
            ds = ds * conformal_factor(mids)
        cells = grid.locate(mids)
        keep = cells >= 0
        return cells[keep], ds[keep]

    with ThreadPoolExecutor(max_workers=threads or settings.threads) as pool:
        rows = list(pool.map(row, paths))
    r = np.concatenate([np.full(c.shape[0], i) for i, (c, _) in enumerate(rows)])
    c = np.concatenate([c for c, _ in rows])
    v = np.concatenate([v for _, v in rows])
    return sparse.coo_matrix((v, (r, c)), shape=(len(paths), grid.size)).tocsr()


def cell_volumes(grid: Grid, cells: np.ndarray, domain: Region, element: str, subsamples: int = 4) -> np.ndarray:
    """Volume of D ∩ cell by an s^n midpoint subsample of each cell."""
    ticks = (np.arange(subsamples) + 0.5) / subsamples
    offsets = np.stack(np.meshgrid(*([ticks] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim) * grid.cell
    lows = grid.cell_lows(cells)
    cell_volume = float(np.prod(grid.cell))
    volumes = np.empty(cells.shape[0])
    chunk = max(1, 200_000 // offsets.shape[0])
    for start in range(0, cells.shape[0], chunk):
        X = (lows[start:start + chunk, None, :] + offsets[None, :, :]).reshape(-1, grid.dim)
        mask = domain(X)
        inside = mask.astype(float)
        if element == "hyperbolic" and np.any(mask):
            inside[mask] = conformal_factor(X[mask]) ** grid.dim
        volumes[start:start + chunk] = inside.reshape(-1, offsets.shape[0]).mean(axis=1) * cell_volume
    return volumes


def discrete_modulus(
    fam: PathFamily,
    grid: Optional[Grid] = None,
    element: str = "euclidean",
    max_iterations: Optional[int] = None,
    gap_tol: float = 1e-3,
    stall_tol: float = 1e-6,
    stall_window: int = 100,
    step: float = 1.0,
    threads: Optional[int] = None,
) -> ModulusEstimate:
    """
    min Σ_c v_c ρ_c^n subject to Σ_c A_pc ρ_c ≥ 1 for every sampled path.

    Solved on the dual by exponentiated-gradient ascent on the path
    multipliers λ with step step/√k. Each iterate yields the primal point
    ρ_c = ((Aᵀλ)_c/(n v_c))^{1/(n-1)}, which rescaled to feasibility gives an
    upper bound; the dual value Σλ - (n-1)Σ v ρ^n is a lower bound.

    Raises:
        ConvergenceError: neither the duality gap nor the stall criterion was met
    """
    n = fam.dimension
    if n < 2:
        raise ValueError("modulus needs n >= 2")
    grid = grid or default_grid(fam, settings.grid_resolution)
    max_iterations = max_iterations or settings.max_iterations
    A = incidence_matrix(fam.paths, grid, element, threads)

    cells = np.unique(A.indices)
    A = A[:, cells]
    volumes = cell_volumes(grid, cells, fam.domain, element)
    missing = volumes <= 0
    if np.any(missing):
        volumes[missing] = cell_volumes(grid, cells[missing], fam.domain, element, subsamples=16)
        dropped = volumes <= 0
        if np.any(dropped):
            logger.debug(f"dropping {int(dropped.sum())} path cells with no measurable volume")
            cells, volumes = cells[~dropped], volumes[~dropped]
            A = A[:, np.nonzero(~dropped)[0]]
    A = A.tocsr()
    if np.any(np.asarray(A.sum(axis=1)).ravel() <= 0):
        raise ValueError("some sampled path has no length inside the grid")
    At = A.T.tocsr()
    power = 1.0 / (n - 1)

    def primal(lam: np.ndarray) -> np.ndarray:
        return (At @ lam / (n * volumes)) ** power

    lam = np.ones(A.shape[0])
    mean_integral = float(np.mean(A @ primal(lam)))
    lam *= mean_integral ** (-(n - 1))

    best, best_rho, dual_best = math.inf, None, -math.inf
    history: List[float] = []
    gap = math.inf
    converged = False
    k = 0
    for k in range(1, max_iterations + 1):
        rho = primal(lam)
        integrals = A @ rho
        low = float(integrals.min())
        if low > 0:
            value = float(np.sum(volumes * (rho / low) ** n))
            if value < best:
                best, best_rho = value, rho / low
        dual = float(lam.sum() - (n - 1) * np.sum(volumes * rho**n))
        dual_best = max(dual_best, dual)
        gap = (best - dual_best) / best if math.isfinite(best) else math.inf
        history.append(best)
        if gap < gap_tol:
            converged = True
            break
        if k > stall_window and abs(history[-stall_window - 1] - best) <= stall_tol * best:
            converged = True
            break
        lam = lam * np.exp(np.clip(step / math.sqrt(k) * (1.0 - integrals), -50.0, 50.0))
        if k % 500 == 0:
            logger.debug(f"modulus iteration {k}: primal {best:.6g}, dual {dual_best:.6g}")

    if not converged:
        logger.warning(f"discrete modulus did not converge in {max_iterations} iterations (gap {gap:.2e})")
        raise ConvergenceError(best, k, gap)

    final = A @ best_rho
    logger.info(f"discrete modulus {best:.6g} after {k} iterations (gap {gap:.2e}, {len(fam)} paths, {cells.size} cells)")
    return ModulusEstimate(
        estimate=best,
        dual_bound=dual_best,
        relative_gap=gap,
        iterations=k,
        converged=converged,
        min_path_integral=float(final.min()),
        max_path_integral=float(final.max()),
        path_count=len(fam),
        cells_used=int(cells.size),
        grid=grid,
        element=element,
        rho=best_rho,
        cells=cells,
    )


def transport_family(fam: PathFamily, mobius: MobiusMap) -> PathFamily:
    """The image family under a Möbius automorphism."""
    return fam.image(mobius.apply_array, mobius.inverse().apply_array, f"moebius({fam.label})")
