"""The factor space B^n/G: quotient metric, Dirichlet domains, measures and normal neighborhoods."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import integrate

from app.config import settings
from app.services.group import (
    ElementTable,
    GroupPresentation,
    Word,
    element_table,
    nearest_orbit_point,
)
from app.services.mobius import BoundaryError, Point, conformal_factor, hyp_dist_array, sample_ball
from app.services.regions import (
    BallSampler,
    HyperbolicBall,
    Intersection,
    QuotientRing,
    Region,
    Sampler,
    default_sampler,
)

logger = logging.getLogger(__name__)

TIE_MARGIN = 1e-9


def unit_sphere_area(n: int) -> float:
    """ω_{n-1}, the area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True, eq=False)
class QuotientPoint:
    """An orbit G·rep; equality is metric, not canonical."""

    rep: Point
    group: GroupPresentation

    def __post_init__(self):
        if self.rep.dim != self.group.dimension:
            raise ValueError(f"representative has dimension {self.rep.dim}, group acts on {self.group.dimension}")

    def same_orbit(self, other: "QuotientPoint", max_word_len: Optional[int] = None) -> bool:
        return quotient_dist(self, other, max_word_len) < settings.default_tolerance

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuotientPoint):
            return NotImplemented
        return self.same_orbit(other)

    __hash__ = None  # type: ignore[assignment]


def project(z: Point, g: GroupPresentation) -> QuotientPoint:
    return QuotientPoint(z, g)


@dataclass(frozen=True)
class QuotientDistance:
    value: float
    word: Word
    complete: bool


def _check_same_group(p1: QuotientPoint, p2: QuotientPoint) -> GroupPresentation:
    if p1.group is not p2.group:
        raise ValueError("quotient points reference different groups")
    return p1.group


def quotient_dist_report(
    p1: QuotientPoint, p2: QuotientPoint, max_word_len: Optional[int] = None
) -> QuotientDistance:
    """
    min over words w of h(w(rep1), rep2), with the word attaining it.

    The search starts at radius h(rep1, rep2), which the empty word achieves,
    and shrinks to the best distance found.
    """
    g = _check_same_group(p1, p2)
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    value, word, _, complete = nearest_orbit_point(g, p1.rep.coords, p2.rep.coords, max_word_len)
    if not complete:
        logger.warning(f"quotient distance search did not close at word length {max_word_len}; value is an upper bound")
    return QuotientDistance(value, word, complete)


def quotient_dist(p1: QuotientPoint, p2: QuotientPoint, max_word_len: Optional[int] = None) -> float:
    return quotient_dist_report(p1, p2, max_word_len).value


def quotient_dist_two_sided(p1: QuotientPoint, p2: QuotientPoint, max_word_len: int) -> float:
    """min over word pairs (u, v) of h(u(rep1), v(rep2))."""
    g = _check_same_group(p1, p2)
    table = element_table(g, max_word_len)
    A = table.images(p1.rep.coords)[:, 0, :]
    B = table.images(p2.rep.coords)[:, 0, :]
    best = math.inf
    for start in range(0, A.shape[0], 1024):
        d = hyp_dist_array(A[start:start + 1024, None, :], B[None, :, :])
        best = min(best, float(np.nanmin(d)))
    return best


def quotient_dist_many(
    g: GroupPresentation,
    reps1: np.ndarray,
    reps2: np.ndarray,
    max_word_len: Optional[int] = None,
    table: Optional[ElementTable] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise quotient distances over the enumerated element table.

    Returns:
        (distances, complete) arrays; complete is False where a maximal-length
        translate came within the letter displacement of the best value
    """
    if table is None:
        max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
        table = element_table(g, max_word_len)
    best, _, clear = table.nearest_translate(reps1, reps2)
    return best, clear


def projected_pseudo_dist(z1: Point, z2: Point, g: GroupPresentation, max_word_len: Optional[int] = None) -> float:
    """d(z1, z2) = h~(π z1, π z2); never exceeds h(z1, z2)."""
    return quotient_dist(project(z1, g), project(z2, g), max_word_len)


def local_isometry_radius(
    g: GroupPresentation, compact_sample: List[Point], max_word_len: Optional[int] = None
) -> float:
    """Half the minimal displacement of nontrivial enumerated words over the sample."""
    if not compact_sample:
        raise ValueError("compact sample must be nonempty")
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    X = np.vstack([p.coords for p in compact_sample])
    displacement, _, _ = element_table(g, max_word_len).min_displacement(X)
    return displacement / 2.0


@dataclass(frozen=True)
class DirichletMembership:
    """Tri-state membership in the normal fundamental polyhedron."""

    inside: bool
    boundary: bool
    margin: float  # min over w of h(p, w p0) - h(p, p0)
    nearest_word: Optional[Word]
    complete: bool


def _translates(g: GroupPresentation, p0: np.ndarray, max_word_len: int) -> Tuple[np.ndarray, ElementTable]:
    table = element_table(g, max_word_len)
    return table.images(np.asarray(p0, dtype=float)[None, :])[1:, 0, :], table


def dirichlet_membership(
    g: GroupPresentation, p0: Point, p: Point, max_word_len: Optional[int] = None
) -> DirichletMembership:
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    own = float(hyp_dist_array(p.coords, p0.coords))
    translates, table = _translates(g, p0.coords, max_word_len)
    if translates.shape[0] == 0:
        return DirichletMembership(True, False, math.inf, None, True)
    d = hyp_dist_array(translates, p.coords[None, :])
    k = int(np.argmin(d))
    margin = float(d[k]) - own
    last = table.levels[-1] if len(table.levels) > max_word_len else np.empty(0, dtype=int)
    complete = True
    if last.size:
        delta = g.max_letter_displacement(p.coords)
        complete = bool(np.all(d[last - 1] > own + delta))
    return DirichletMembership(
        inside=margin > TIE_MARGIN,
        boundary=abs(margin) <= TIE_MARGIN,
        margin=margin,
        nearest_word=table.word(k + 1),
        complete=complete,
    )


def in_dirichlet_domain(g: GroupPresentation, p0: Point, p: Point, max_word_len: Optional[int] = None) -> bool:
    """h(p, p0) < h(p, w p0) for every nontrivial enumerated word w."""
    membership = dirichlet_membership(g, p0, p, max_word_len)
    if not membership.complete:
        logger.warning("Dirichlet test used a truncated word list; answer refers to the partial polyhedron")
    return membership.inside


def dirichlet_mask(
    g: GroupPresentation, p0: Point, X: np.ndarray, max_word_len: Optional[int] = None
) -> np.ndarray:
    """Vectorized strict Dirichlet membership; bisector ties within the margin count as outside."""
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    X = np.atleast_2d(np.asarray(X, dtype=float))
    own = hyp_dist_array(X, p0.coords[None, :])
    translates, _ = _translates(g, p0.coords, max_word_len)
    if translates.shape[0] == 0 or X.shape[0] == 0:
        return np.isfinite(own)
    # a translate w p0 can beat p0 only if h(p0, w p0) < 2 h(x, p0)
    reach = hyp_dist_array(translates, p0.coords[None, :])
    translates = translates[reach < 2.0 * np.nanmax(own) + 1e-6]
    mask = np.ones(X.shape[0], dtype=bool)
    chunk = max(1, 2_000_000 // max(1, translates.shape[0]))
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, start + chunk)
        if translates.shape[0]:
            d = hyp_dist_array(X[sl, None, :], translates[None, :, :]).min(axis=1)
            mask[sl] = d - own[sl] > TIE_MARGIN
    return mask & np.isfinite(own)


class DirichletRegion(Region):
    """The normal fundamental polyhedron with center p0, as a region predicate."""

    def __init__(self, g: GroupPresentation, p0: Point, max_word_len: Optional[int] = None):
        self.group = g
        self.p0 = p0
        self.max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len

    def contains(self, X: np.ndarray) -> np.ndarray:
        return dirichlet_mask(self.group, self.p0, X, self.max_word_len)


@dataclass(frozen=True)
class MeasureEstimate:
    estimate: float
    stderr: float
    samples: int
    batches: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "samples": self.samples,
            "batches": self.batches,
            "seed": self.seed,
        }


Integrand = Callable[[np.ndarray], np.ndarray]


def integrate_region(
    integrand: Optional[Integrand],
    region: Region,
    n: int,
    sampler: Optional[Sampler] = None,
    seed: int = 0,
    samples: Optional[int] = None,
    batch_size: Optional[int] = None,
    threads: Optional[int] = None,
    element: str = "hyperbolic",
    margin: float = 1e-6,
) -> MeasureEstimate:
    """
    Monte Carlo estimate of ∫_region f dV with the hyperbolic or Euclidean volume element.

    Batches draw from independent child seeds of `seed` and are reduced in
    batch order, so the result does not depend on the thread count.

    Raises:
        BoundaryError: if a sampled point of the region lies within `margin` of S^{n-1}
    """
    if margin < 1e-6:
        raise ValueError(f"boundary margin must be >= 1e-6 (got: {margin})")
    sampler = sampler or default_sampler(region, n)
    samples = samples or settings.mc_samples
    batch_size = min(batch_size or settings.mc_batch_size, samples)
    counts = [batch_size] * (samples // batch_size)
    if samples % batch_size:
        counts.append(samples % batch_size)
    children = np.random.SeedSequence(seed).spawn(len(counts))
    volume = sampler.volume

    def run_batch(job: Tuple[np.random.SeedSequence, int]) -> Tuple[float, float]:
        child, count = job
        X = sampler.sample(np.random.default_rng(child), count)
        mask = region(X)
        if not np.any(mask):
            return 0.0, 0.0
        inside = X[mask]
        if np.any(np.linalg.norm(inside, axis=1) >= 1.0 - margin):
            raise BoundaryError("region reaches the boundary margin of the unit ball")
        values = np.zeros(count)
        weight = conformal_factor(inside) ** n if element == "hyperbolic" else np.ones(inside.shape[0])
        if integrand is not None:
            weight = weight * np.asarray(integrand(inside), dtype=float)
        values[mask] = weight * volume
        return float(values.sum()), float((values**2).sum())

    with ThreadPoolExecutor(max_workers=threads or settings.threads) as pool:
        partial = list(pool.map(run_batch, zip(children, counts)))

    total = sum(p[0] for p in partial)
    total_sq = sum(p[1] for p in partial)
    mean = total / samples
    variance = max(total_sq / samples - mean * mean, 0.0)
    stderr = math.sqrt(variance / samples)
    logger.debug(f"integrated over {samples} samples in {len(counts)} batches: {mean:.6g} ± {stderr:.2g}")
    return MeasureEstimate(mean, stderr, samples, len(counts), seed)


def hyp_measure(
    region: Region,
    n: int,
    sampler: Optional[Sampler] = None,
    seed: int = 0,
    samples: Optional[int] = None,
    threads: Optional[int] = None,
) -> MeasureEstimate:
    """V(A) = ∫_A (2/(1-|x|^2))^n dm by Monte Carlo; deterministic for a given seed."""
    return integrate_region(None, region, n, sampler, seed, samples, threads=threads)


def quotient_measure(
    g: GroupPresentation,
    p0: Point,
    set_region: Region,
    seed: int = 0,
    max_word_len: Optional[int] = None,
    sampler: Optional[Sampler] = None,
    samples: Optional[int] = None,
    threads: Optional[int] = None,
) -> MeasureEstimate:
    """
    V(P ∩ π^{-1}(A)) with P the Dirichlet polyhedron centered at p0.

    `set_region` must be orbit-invariant (a quotient ball or ring, or any
    union of full orbits). For quotient rings the default sampler covers
    B_h(p0, r2 + h~(c, p0)), which contains the relevant part of P.
    """
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    region = Intersection([DirichletRegion(g, p0, max_word_len), set_region])
    if sampler is None and isinstance(set_region, QuotientRing):
        reach, _ = quotient_dist_many(g, set_region.center[None, :], p0.coords[None, :], max_word_len)
        bound = HyperbolicBall(p0.coords, set_region.r2 + float(reach[0]))
        sampler = default_sampler(bound, g.dimension)
    return integrate_region(None, region, g.dimension, sampler, seed, samples, threads=threads)


def hyp_ball_volume_reference(n: int, radius: float) -> float:
    """ω_{n-1} ∫_0^R sinh^{n-1}(t) dt, closed form for n = 2."""
    if radius <= 0:
        return 0.0
    if n == 2:
        return 4.0 * math.pi * math.sinh(radius / 2.0) ** 2
    value, _ = integrate.quad(lambda t: math.sinh(t) ** (n - 1), 0.0, radius)
    return unit_sphere_area(n) * value


def lift_nearest(g: GroupPresentation, rep: Point, anchor: Point, max_word_len: Optional[int] = None) -> Point:
    """The orbit representative of rep closest to anchor."""
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    _, _, coords, _ = nearest_orbit_point(g, rep.coords, anchor.coords, max_word_len)
    return Point(coords)


@dataclass(frozen=True, eq=False)
class NormalNeighborhood:
    """
    B~(center, ε0) together with its chart φ = π^{-1}: B~ → B_h(rep, ε0).
    """

    center: QuotientPoint
    radius: float
    max_word_len: int

    @property
    def group(self) -> GroupPresentation:
        return self.center.group

    def contains(self, p: QuotientPoint) -> bool:
        return quotient_dist(p, self.center, self.max_word_len) < self.radius

    def lift(self, p: QuotientPoint) -> Point:
        """φ(p): the unique lift inside the lifted ball."""
        z = lift_nearest(self.group, p.rep, self.center.rep, self.max_word_len)
        if float(hyp_dist_array(z.coords, self.center.rep.coords)) >= self.radius:
            raise ValueError("point lies outside the normal neighborhood")
        return z

    def project(self, z: Point) -> QuotientPoint:
        return project(z, self.group)

    def lifted_ball(self) -> HyperbolicBall:
        return HyperbolicBall(self.center.rep.coords, self.radius)


def distance_to_boundary_guard(z: Point) -> float:
    """h(z, z*) where z* is the point on z's ray at Euclidean norm 1 - boundary_guard."""
    edge = 1.0 - settings.boundary_guard
    return 2.0 * (math.atanh(edge) - math.atanh(float(np.linalg.norm(z.coords))))


def normal_neighborhood(
    g: GroupPresentation,
    p0: QuotientPoint,
    max_word_len: Optional[int] = None,
    compact_radius: float = 0.05,
    samples: int = 64,
    shrink: float = 0.9,
) -> NormalNeighborhood:
    """
    ε0 = shrink × local isometry radius over a small hyperbolic ball around rep.

    ε0 never exceeds the distance from rep to the boundary guard along its ray,
    so the identity-only group gets a finite radius.
    """
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    rng = np.random.default_rng(0)
    center, radius = HyperbolicBall(p0.rep.coords, compact_radius).bounding_ball()
    X = np.vstack([p0.rep.coords[None, :], center + sample_ball(rng, samples, g.dimension, radius)])
    delta = local_isometry_radius(g, [Point(x) for x in X], max_word_len)
    eps0 = min(shrink * delta, distance_to_boundary_guard(p0.rep))
    logger.debug(f"normal neighborhood radius {eps0:.6g} at {p0.rep}")
    return NormalNeighborhood(p0, eps0, max_word_len)


def chart_transition(U1: NormalNeighborhood, U2: NormalNeighborhood, x: Point) -> Word:
    """
    The word w with φ2∘π(x) = w(x) for x in the lifted ball of U1 over the overlap.
    """
    if U1.group is not U2.group:
        raise ValueError("neighborhoods belong to different groups")
    _, word, _, _ = nearest_orbit_point(U1.group, x.coords, U2.center.rep.coords, U2.max_word_len)
    return word
