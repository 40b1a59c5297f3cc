"""Sampled paths in B^n and B^n/G: lengths, normal representation and line integrals."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from app.config import settings
from app.services.group import GroupPresentation, nearest_orbit_point
from app.services.mobius import MobiusMap, Point, conformal_factor, hyp_dist_array, make_translation_to_origin

logger = logging.getLogger(__name__)

Curve = Callable[[np.ndarray], np.ndarray]
Density = Callable[[np.ndarray], np.ndarray]

BALL = "ball"
QUOTIENT = "quotient"


@dataclass(frozen=True, eq=False)
class SampledPath:
    """
    Samples (t_i, α(t_i)) of a path, optionally backed by the exact curve.

    With a curve, refinement evaluates it at new parameters; without one,
    new samples interpolate the polyline. Quotient paths store
    representatives in B^n and carry their group.
    """

    params: np.ndarray
    points: np.ndarray
    space: str = BALL
    group: Optional[GroupPresentation] = None
    curve: Optional[Curve] = field(default=None, repr=False)
    degenerate: bool = False

    def __post_init__(self):
        params = np.asarray(self.params, dtype=float).reshape(-1)
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if points.shape[0] != params.shape[0]:
            raise ValueError(f"{params.shape[0]} params for {points.shape[0]} points")
        if self.space not in (BALL, QUOTIENT):
            raise ValueError(f"unknown path space '{self.space}'")
        if self.space == QUOTIENT and self.group is None:
            raise ValueError("quotient paths need a group")
        if not self.degenerate:
            if params.shape[0] < 2:
                raise ValueError("a path needs at least 2 samples")
            if np.any(np.diff(params) <= 0):
                raise ValueError("path params must be strictly increasing")
        if np.any(np.sum(points * points, axis=1) >= 1.0 - settings.boundary_guard):
            raise ValueError("path leaves the unit ball")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "points", points)

    @classmethod
    def constant(cls, point: np.ndarray, space: str = BALL, group: Optional[GroupPresentation] = None) -> "SampledPath":
        """Single-point representation of a path of zero length."""
        return cls(np.array([0.0]), np.atleast_2d(point), space, group, degenerate=True)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return int(self.params.shape[0])

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.curve is not None:
            return np.atleast_2d(self.curve(t))
        return np.column_stack([np.interp(t, self.params, self.points[:, k]) for k in range(self.dim)])

    def gaps(self) -> np.ndarray:
        """Hyperbolic distances between consecutive samples."""
        return hyp_dist_array(self.points[:-1], self.points[1:])

    def aligned(self, max_word_len: Optional[int] = None) -> "SampledPath":
        """Quotient samples moved so each representative is the lift nearest its predecessor."""
        if self.space != QUOTIENT or self.degenerate:
            return self
        max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
        points = self.points.copy()
        for i in range(1, points.shape[0]):
            _, _, points[i], _ = nearest_orbit_point(self.group, points[i], points[i - 1], max_word_len)
        return replace(self, points=points)

    def refine(self, gap: Optional[float] = None, max_rounds: int = 40) -> "SampledPath":
        """
        Bisect every interval whose hyperbolic gap exceeds `gap`.

        Quotient polylines are first aligned so interpolation stays on one lift.
        """
        if self.degenerate:
            return self
        if self.curve is None and self.space == QUOTIENT:
            return self.aligned()._refine(gap, max_rounds)
        return self._refine(gap, max_rounds)

    def _refine(self, gap: Optional[float], max_rounds: int) -> "SampledPath":
        gap = settings.refinement_gap if gap is None else gap
        params, points = self.params, self.points
        for _ in range(max_rounds):
            wide = np.nonzero(hyp_dist_array(points[:-1], points[1:]) > gap)[0]
            if wide.size == 0:
                break
            mids = (params[wide] + params[wide + 1]) / 2.0
            new_points = self.evaluate(mids)
            params = np.insert(params, wide + 1, mids)
            points = np.insert(points, wide + 1, new_points, axis=0)
        else:
            logger.warning(f"path refinement stopped after {max_rounds} rounds above gap {gap}")
        return replace(self, params=params, points=points)

    def to_json(self) -> List[List[float]]:
        return [[float(t), *map(float, x)] for t, x in zip(self.params, self.points)]

    @classmethod
    def from_json(
        cls, rows: Sequence[Sequence[float]], space: str = BALL, group: Optional[GroupPresentation] = None
    ) -> "SampledPath":
        data = np.asarray(rows, dtype=float)
        return cls(data[:, 0], data[:, 1:], space, group)

    def lift_to(self, space: str, group: Optional[GroupPresentation]) -> "SampledPath":
        """The same samples tagged for another space (e.g. the projection π∘α)."""
        return replace(self, space=space, group=group)


def radial_segment(start: Sequence[float], end: Sequence[float], samples: int = 2) -> SampledPath:
    """Straight segment t ↦ (1-t) start + t end, t ∈ [0, 1]."""
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)

    def curve(t: np.ndarray) -> np.ndarray:
        return a[None, :] + np.asarray(t)[:, None] * (b - a)[None, :]

    t = np.linspace(0.0, 1.0, max(samples, 2))
    return SampledPath(t, curve(t), curve=curve)


def geodesic_segment(x: Point, y: Point, samples: int = 2) -> SampledPath:
    """Hyperbolic geodesic from x to y parametrized proportionally to arc length on [0, 1]."""
    to_origin = make_translation_to_origin(x)
    back = to_origin.inverse()
    image = to_origin.apply_array(y.coords)[0]
    norm = float(np.linalg.norm(image))
    direction = image / norm if norm > 0 else np.zeros_like(image)
    length = float(hyp_dist_array(x.coords, y.coords))

    def curve(t: np.ndarray) -> np.ndarray:
        radii = np.tanh(np.asarray(t) * length / 2.0)
        return back.apply_array(radii[:, None] * direction[None, :])

    t = np.linspace(0.0, 1.0, max(samples, 2))
    return SampledPath(t, curve(t), curve=curve)


def circle(center: Sequence[float], radius: float, plane: Tuple[int, int] = (0, 1), samples: int = 64) -> SampledPath:
    """Euclidean circle in a coordinate plane, t ∈ [0, 2π]."""
    c = np.asarray(center, dtype=float)
    i, j = plane

    def curve(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        out = np.repeat(c[None, :], t.shape[0], axis=0)
        out[:, i] += radius * np.cos(t)
        out[:, j] += radius * np.sin(t)
        return out

    t = np.linspace(0.0, 2.0 * math.pi, max(samples, 3))
    return SampledPath(t, curve(t), curve=curve)


def polyline(points: Sequence[Sequence[float]]) -> SampledPath:
    pts = np.asarray(points, dtype=float)
    return SampledPath(np.linspace(0.0, 1.0, pts.shape[0]), pts)


@dataclass(frozen=True, eq=False)
class LengthFunction:
    """Monotone table t ↦ l(t) with linear interpolation between breakpoints."""

    params: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "params", np.asarray(self.params, dtype=float))
        object.__setattr__(self, "values", values)
        if values.size and (values[0] != 0.0 or np.any(np.diff(values) < 0)):
            raise ValueError("length function must start at 0 and be nondecreasing")

    @property
    def total(self) -> float:
        return float(self.values[-1])

    def value_at(self, t: np.ndarray) -> np.ndarray:
        return np.interp(t, self.params, self.values)

    def inverse(self, s: np.ndarray) -> np.ndarray:
        """Smallest parameter with l(t) = s (left end of flat pieces)."""
        values, first = np.unique(self.values, return_index=True)
        return np.interp(s, values, self.params[first])

    def compose(self, other: "LengthFunction") -> "LengthFunction":
        """
        s ↦ other(self^{-1}(s)): the length correspondence between two
        parametrizations of the same parameter interval.
        """
        s, first = np.unique(self.values, return_index=True)
        mapped = other.value_at(self.params[first])
        return LengthFunction(s, np.maximum.accumulate(mapped - mapped[0]))


def _step_lengths(path: SampledPath, max_word_len: Optional[int]) -> Tuple[np.ndarray, bool]:
    if len(path) < 2:
        return np.zeros(0), True
    if path.space == BALL:
        return path.gaps(), True
    from app.services.quotient import quotient_dist_many

    steps, clear = quotient_dist_many(path.group, path.points[:-1], path.points[1:], max_word_len)
    return steps, bool(np.all(clear))


def length_function(path: SampledPath, max_word_len: Optional[int] = None, gap: Optional[float] = None) -> LengthFunction:
    refined = path.refine(gap)
    steps, complete = _step_lengths(refined, max_word_len)
    if not complete:
        logger.warning("quotient gaps came from a truncated word search; length is an upper bound")
    return LengthFunction(refined.params, np.concatenate([[0.0], np.cumsum(steps)]))


def hyp_length(path: SampledPath, gap: Optional[float] = None) -> float:
    """Chordal hyperbolic length after refinement; approaches the supremum from below."""
    if path.space != BALL:
        raise ValueError("hyp_length needs a ball-space path")
    return float(np.sum(path.refine(gap).gaps()))


@dataclass(frozen=True)
class QuotientLength:
    value: float
    complete: bool


def quotient_length_report(path: SampledPath, max_word_len: Optional[int] = None, gap: Optional[float] = None) -> QuotientLength:
    if path.space != QUOTIENT:
        raise ValueError("quotient_length needs a quotient-space path")
    steps, complete = _step_lengths(path.refine(gap), max_word_len)
    return QuotientLength(float(np.sum(steps)), complete)


def quotient_length(path: SampledPath, max_word_len: Optional[int] = None, gap: Optional[float] = None) -> float:
    """Partition sum of quotient gaps h~(π α(t_i), π α(t_{i+1}))."""
    report = quotient_length_report(path, max_word_len, gap)
    if not report.complete:
        logger.warning("quotient length is an upper bound (word search did not close)")
    return report.value


def normal_representation(path: SampledPath, max_word_len: Optional[int] = None, gap: Optional[float] = None) -> SampledPath:
    """The path reparametrized by arc length: params run over [0, length]."""
    refined = path.refine(gap)
    steps, _ = _step_lengths(refined, max_word_len)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    if s[-1] <= 0.0:
        return SampledPath.constant(refined.points[0], path.space, path.group)
    keep = np.concatenate([[True], np.diff(s) > 0])
    return SampledPath(s[keep], refined.points[keep], path.space, path.group)


def line_integral(
    path: SampledPath,
    rho: Density,
    max_word_len: Optional[int] = None,
    gap: Optional[float] = None,
) -> float:
    """
    Composite trapezoid ∫_α ρ ds along the normal representation.

    For quotient paths ρ must be orbit-invariant; it is evaluated on the
    stored representatives and ds is the quotient arc element.
    """
    refined = path.refine(gap)
    steps, complete = _step_lengths(refined, max_word_len)
    if steps.size == 0:
        return 0.0
    if not complete:
        logger.warning("line integral used truncated quotient gaps")
    values = np.asarray(rho(refined.points), dtype=float)
    if np.any(values < 0):
        raise ValueError("density must be nonnegative")
    return float(np.sum(0.5 * (values[:-1] + values[1:]) * steps))


def _derivative(path: SampledPath, t: np.ndarray, step: float) -> np.ndarray:
    lo = np.maximum(t - step, path.params[0])
    hi = np.minimum(t + step, path.params[-1])
    return (path.evaluate(hi) - path.evaluate(lo)) / (hi - lo)[:, None]


def hyperbolic_speed(path: SampledPath, t: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """2|α'(t)|/(1-|α(t)|^2) with a central-difference α'."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    velocity = _derivative(path, t, step)
    return conformal_factor(path.evaluate(t)) * np.linalg.norm(velocity, axis=1)


def line_integral_smooth(path: SampledPath, rho: Density, limit: int = 200) -> float:
    """∫ ρ(α(t)) 2|α'(t)|/(1-|α(t)|^2) dt by adaptive quadrature."""

    def integrand(t: float) -> float:
        point = path.evaluate(np.array([t]))
        return float(np.asarray(rho(point))[0] * hyperbolic_speed(path, np.array([t]))[0])

    value, abserr = integrate.quad(integrand, float(path.params[0]), float(path.params[-1]), limit=limit)
    logger.debug(f"smooth line integral {value:.8g} (abserr {abserr:.1e})")
    return float(value)


def transport(path: SampledPath, mobius: MobiusMap) -> SampledPath:
    """Push a path forward by a Möbius map."""
    return map_path(path, mobius.apply_array)


def map_path(path: SampledPath, f: Callable[[np.ndarray], np.ndarray]) -> SampledPath:
    """Push a path forward by a vectorized point map."""
    source = path.curve if path.curve is not None else path.evaluate

    def curve(t: np.ndarray) -> np.ndarray:
        return f(source(t))

    return replace(path, points=f(path.points), curve=curve)
