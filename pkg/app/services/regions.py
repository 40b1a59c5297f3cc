"""Composable region predicates and samplers over B^n."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from app.services.mobius import hyp_ball_euclidean, hyp_dist_array, sample_ball

logger = logging.getLogger(__name__)

BoundingBall = Tuple[np.ndarray, float]


class Region:
    """A subset of B^n given by a vectorized membership test."""

    def contains(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_ball(self) -> Optional[BoundingBall]:
        """A Euclidean ball containing the region, if one is known."""
        return None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        inside_unit = np.sum(X * X, axis=1) < 1.0
        return self.contains(X) & inside_unit


class EmptyRegion(Region):
    def contains(self, X: np.ndarray) -> np.ndarray:
        return np.zeros(len(X), dtype=bool)

    def bounding_ball(self) -> Optional[BoundingBall]:
        return np.zeros(1), 0.0


@dataclass(frozen=True, eq=False)
class EuclideanBall(Region):
    center: np.ndarray
    radius: float

    def contains(self, X: np.ndarray) -> np.ndarray:
        return np.linalg.norm(X - np.asarray(self.center), axis=1) < self.radius

    def bounding_ball(self) -> Optional[BoundingBall]:
        return np.asarray(self.center, dtype=float), float(self.radius)


@dataclass(frozen=True, eq=False)
class HyperbolicBall(Region):
    """B_h(center, radius)."""

    center: np.ndarray
    radius: float

    def contains(self, X: np.ndarray) -> np.ndarray:
        return hyp_dist_array(X, np.asarray(self.center)[None, :]) < self.radius

    def bounding_ball(self) -> Optional[BoundingBall]:
        return hyp_ball_euclidean(self.center, self.radius)


@dataclass(frozen=True, eq=False)
class Annulus(Region):
    """Open ring r1 < dist(center, x) < r2 in the Euclidean or hyperbolic metric."""

    center: np.ndarray
    r1: float
    r2: float
    metric: str = "euclidean"

    def __post_init__(self):
        if not 0 <= self.r1 < self.r2:
            raise ValueError(f"annulus needs 0 <= r1 < r2 (got: {self.r1}, {self.r2})")

    def distances(self, X: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        if self.metric == "hyperbolic":
            return hyp_dist_array(X, c[None, :])
        return np.linalg.norm(X - c, axis=1)

    def contains(self, X: np.ndarray) -> np.ndarray:
        d = self.distances(X)
        return (d > self.r1) & (d < self.r2)

    def bounding_ball(self) -> Optional[BoundingBall]:
        if self.metric == "hyperbolic":
            return hyp_ball_euclidean(self.center, self.r2)
        return np.asarray(self.center, dtype=float), float(self.r2)


@dataclass(frozen=True, eq=False)
class HalfSpace(Region):
    """{x : <normal, x> < offset}."""

    normal: np.ndarray
    offset: float = 0.0

    def contains(self, X: np.ndarray) -> np.ndarray:
        return X @ np.asarray(self.normal, dtype=float) < self.offset


@dataclass(frozen=True, eq=False)
class Box(Region):
    low: np.ndarray
    high: np.ndarray

    def contains(self, X: np.ndarray) -> np.ndarray:
        return np.all((X > np.asarray(self.low)) & (X < np.asarray(self.high)), axis=1)

    def bounding_ball(self) -> Optional[BoundingBall]:
        low, high = np.asarray(self.low, dtype=float), np.asarray(self.high, dtype=float)
        return (low + high) / 2.0, float(np.linalg.norm(high - low) / 2.0)


@dataclass(frozen=True, eq=False)
class Complement(Region):
    inner: Region

    def contains(self, X: np.ndarray) -> np.ndarray:
        return ~self.inner.contains(X)


@dataclass(frozen=True, eq=False)
class Intersection(Region):
    parts: Sequence[Region]

    def contains(self, X: np.ndarray) -> np.ndarray:
        mask = np.ones(len(X), dtype=bool)
        for part in self.parts:
            mask &= part.contains(X)
        return mask

    def bounding_ball(self) -> Optional[BoundingBall]:
        balls = [b for b in (p.bounding_ball() for p in self.parts) if b is not None]
        return min(balls, key=lambda b: b[1]) if balls else None


@dataclass(frozen=True, eq=False)
class Union(Region):
    parts: Sequence[Region]

    def contains(self, X: np.ndarray) -> np.ndarray:
        mask = np.zeros(len(X), dtype=bool)
        for part in self.parts:
            mask |= part.contains(X)
        return mask

    def bounding_ball(self) -> Optional[BoundingBall]:
        balls = [p.bounding_ball() for p in self.parts]
        if not balls or any(b is None for b in balls):
            return None
        center = np.mean([np.asarray(b[0], dtype=float) for b in balls], axis=0)
        radius = max(float(np.linalg.norm(np.asarray(b[0]) - center)) + b[1] for b in balls)
        return center, radius


class QuotientRing(Region):
    """
    Points whose quotient distance to a center orbit lies in (r1, r2).

    With r1 < 0 this is the quotient ball B~(center, r2). Membership is
    evaluated against every enumerated translate of the center.
    """

    def __init__(self, group, center: np.ndarray, r1: float, r2: float, max_word_len: int):
        from app.services.group import element_table

        if r2 <= max(r1, 0.0):
            raise ValueError(f"quotient ring needs r1 < r2, r2 > 0 (got: {r1}, {r2})")
        self.group = group
        self.center = np.asarray(center, dtype=float)
        self.r1 = r1
        self.r2 = r2
        self.table = element_table(group, max_word_len)
        self._translates = self.table.images(self.center[None, :])[:, 0, :]

    def distances(self, X: np.ndarray) -> np.ndarray:
        # only translates within reach of the batch can attain the minimum
        origin = np.zeros((1, X.shape[1]))
        reach = float(np.nanmax(hyp_dist_array(X, origin))) if len(X) else 0.0
        near = self._translates[hyp_dist_array(self._translates, origin) < reach + self.r2]
        if near.shape[0] == 0:
            return np.full(len(X), np.inf)
        d = hyp_dist_array(X[:, None, :], near[None, :, :])
        d = np.where(np.isfinite(d), d, np.inf)
        return d.min(axis=1)

    def contains(self, X: np.ndarray) -> np.ndarray:
        d = self.distances(X)
        return (d > self.r1) & (d < self.r2)


def quotient_ball(group, center: np.ndarray, radius: float, max_word_len: int) -> QuotientRing:
    return QuotientRing(group, center, -1.0, radius, max_word_len)


class Sampler:
    """Uniform Euclidean sampler over a simple carrier set."""

    dimension: int

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class BallSampler(Sampler):
    center: np.ndarray
    radius: float

    @property
    def dimension(self) -> int:
        return int(np.asarray(self.center).shape[0])

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + sample_ball(rng, count, self.dimension, self.radius)

    @property
    def volume(self) -> float:
        n = self.dimension
        return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0) * self.radius**n


@dataclass(frozen=True, eq=False)
class BoxSampler(Sampler):
    low: np.ndarray
    high: np.ndarray

    @property
    def dimension(self) -> int:
        return int(np.asarray(self.low).shape[0])

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(np.asarray(self.low, dtype=float), np.asarray(self.high, dtype=float), size=(count, self.dimension))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.high, dtype=float) - np.asarray(self.low, dtype=float)))


def default_sampler(region: Region, n: int) -> Sampler:
    """Sampler over the region's bounding ball, clipped to the unit ball."""
    ball = region.bounding_ball()
    if ball is None:
        logger.warning("region has no bounding ball; sampling the whole unit ball")
        return BallSampler(np.zeros(n), 1.0)
    center, radius = ball
    center = np.resize(np.asarray(center, dtype=float), n) if np.size(center) != n else center
    if np.linalg.norm(center) + radius > 1.0:
        return BallSampler(np.zeros(n), 1.0)
    return BallSampler(center, radius)
