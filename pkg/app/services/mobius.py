"""Möbius automorphisms of the unit ball and the hyperbolic metric."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import settings

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


class BoundaryError(ValueError):
    """Raised when a point lies at or beyond the boundary guard of the unit ball."""

    pass


def _as_points(X: ArrayLike) -> np.ndarray:
    """Coerce to a float (N, n) array."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


@dataclass(frozen=True, eq=False)
class Point:
    """A point of the unit ball B^n, strictly inside the boundary guard."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1)
        if coords.size < 1:
            raise ValueError("Point needs at least one coordinate")
        norm = float(np.linalg.norm(coords))
        if not np.all(np.isfinite(coords)) or norm >= 1.0 - settings.boundary_guard:
            raise BoundaryError(f"|x| = {norm!r} violates the boundary guard")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return int(self.coords.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    @classmethod
    def origin(cls, n: int) -> "Point":
        return cls(np.zeros(n))

    @classmethod
    def on_axis(cls, n: int, s: float, axis: int = 0) -> "Point":
        """Axis point at signed hyperbolic distance s from the origin."""
        coords = np.zeros(n)
        coords[axis] = math.tanh(s / 2.0)
        return cls(coords)

    def __repr__(self) -> str:
        return f"Point({np.array2string(self.coords, precision=6)})"


def hyp_dist_array(X: ArrayLike, Y: ArrayLike) -> np.ndarray:
    """Vectorized hyperbolic distance log((1+t)/(1-t)) over broadcastable (..., n) arrays."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    diff2 = np.sum((X - Y) ** 2, axis=-1)
    slack = (1.0 - np.sum(X * X, axis=-1)) * (1.0 - np.sum(Y * Y, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.sqrt(diff2 / (diff2 + slack))
        t = np.where(diff2 == 0.0, 0.0, t)
        return 2.0 * np.arctanh(t)


def hyp_dist(x: Point, y: Point) -> float:
    """Hyperbolic distance between two points of B^n."""
    return float(hyp_dist_array(x.coords, y.coords))


def conformal_factor(X: ArrayLike) -> np.ndarray:
    """Line-element factor 2/(1-|x|^2) of the hyperbolic metric."""
    X = np.asarray(X, dtype=float)
    return 2.0 / (1.0 - np.sum(X * X, axis=-1))


def in_hyp_ball(y0: Point, r: float, y: Point) -> bool:
    """Strict membership in the hyperbolic ball B_h(y0, r)."""
    if r < 0:
        raise ValueError(f"radius must be non-negative (got: {r})")
    return hyp_dist(y0, y) < r


def on_hyp_sphere(y0: Point, r: float, y: Point, tol: Optional[float] = None) -> bool:
    """Membership in the hyperbolic sphere S_h(y0, r) up to tol."""
    tol = settings.default_tolerance if tol is None else tol
    return abs(hyp_dist(y0, y) - r) <= tol


def hyp_ball_euclidean(y0: ArrayLike, r: float) -> Tuple[np.ndarray, float]:
    """
    Euclidean center and radius of the hyperbolic ball B_h(y0, r).

    Args:
        y0: Hyperbolic center
        r: Hyperbolic radius

    Returns:
        (center, radius) of the same set viewed as a Euclidean ball
    """
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    a2 = float(y0 @ y0)
    t = math.tanh(r / 2.0)
    denom = 1.0 - a2 * t * t
    return y0 * (1.0 - t * t) / denom, t * (1.0 - a2) / denom


class Primitive:
    """A single reflection-type generator of the Möbius group."""

    kind: str = ""

    def apply(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self) -> "Primitive":
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Orthogonal(Primitive):
    matrix: np.ndarray
    kind: str = field(default="orthogonal", init=False)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.matrix.T

    def inverse(self) -> "Orthogonal":
        return Orthogonal(self.matrix.T.copy())

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "matrix": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class SphereInversion(Primitive):
    center: np.ndarray
    radius: float
    kind: str = field(default="inversion", init=False)

    def apply(self, X: np.ndarray) -> np.ndarray:
        D = X - self.center
        return self.center + (self.radius**2) * D / np.sum(D * D, axis=-1, keepdims=True)

    def inverse(self) -> "SphereInversion":
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class PlaneReflection(Primitive):
    normal: np.ndarray
    kind: str = field(default="reflection", init=False)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X - 2.0 * (X @ self.normal)[..., None] * self.normal

    def inverse(self) -> "PlaneReflection":
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "normal": self.normal.tolist()}


def orthogonal(matrix: ArrayLike, tol: float = 1e-9) -> Orthogonal:
    Q = np.asarray(matrix, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("orthogonal primitive needs a square matrix")
    if not np.allclose(Q.T @ Q, np.eye(Q.shape[0]), atol=tol):
        raise ValueError("matrix is not orthogonal")
    return Orthogonal(Q)


def sphere_inversion(center: ArrayLike, radius: float, tol: float = 1e-9) -> SphereInversion:
    """Inversion in a sphere S(center, radius) orthogonal to S^{n-1}."""
    c = np.asarray(center, dtype=float).reshape(-1)
    mismatch = float(c @ c) - radius * radius - 1.0
    if radius <= 0 or abs(mismatch) > tol * max(1.0, float(c @ c)):
        raise ValueError(
            f"sphere S(c, {radius}) is not orthogonal to the unit sphere (|c|^2 - r^2 - 1 = {mismatch:.3e})"
        )
    return SphereInversion(c, float(radius))


def plane_reflection(normal: ArrayLike) -> PlaneReflection:
    u = np.asarray(normal, dtype=float).reshape(-1)
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise ValueError("reflection normal must be nonzero")
    return PlaneReflection(u / norm)


def primitive_from_dict(data: Dict[str, Any]) -> Primitive:
    kind = data.get("kind")
    if kind == "orthogonal":
        return orthogonal(data["matrix"])
    if kind == "inversion":
        return sphere_inversion(data["center"], float(data["radius"]))
    if kind == "reflection":
        return plane_reflection(data["normal"])
    raise ValueError(f"unknown primitive kind: {kind}")


@dataclass(frozen=True, eq=False)
class MobiusMap:
    """
    An automorphism of B^n stored as a primitive chain.

    The chain is applied right-to-left: primitives[-1] acts first, so
    MobiusMap((a, b)) is a∘b. Composition concatenates chains.
    """

    dim: int
    primitives: Tuple[Primitive, ...] = ()

    @classmethod
    def identity(cls, n: int) -> "MobiusMap":
        return cls(n, ())

    @property
    def is_identity_chain(self) -> bool:
        return len(self.primitives) == 0

    def apply_array(self, X: ArrayLike) -> np.ndarray:
        out = _as_points(X).copy()
        for primitive in reversed(self.primitives):
            out = primitive.apply(out)
        return out

    def __call__(self, x: Point) -> Point:
        return Point(self.apply_array(x.coords)[0])

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return MobiusMap(self.dim, self.primitives + other.primitives)

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.dim, tuple(p.inverse() for p in reversed(self.primitives)))

    def to_dict(self) -> List[Dict[str, Any]]:
        return [p.to_dict() for p in self.primitives]

    @classmethod
    def from_dict(cls, n: int, chain: List[Dict[str, Any]]) -> "MobiusMap":
        return cls(n, tuple(primitive_from_dict(item) for item in chain))


def apply(m: MobiusMap, x: Point) -> Point:
    return m(x)


def compose(a: MobiusMap, b: MobiusMap) -> MobiusMap:
    """The map a∘b."""
    return a.compose(b)


def inverse(m: MobiusMap) -> MobiusMap:
    return m.inverse()


def make_translation_to_origin(z0: Point) -> MobiusMap:
    """
    The map T_{z0} = p_{z0}∘σ_{z0} sending z0 to 0.

    σ_{z0} is the inversion in the sphere S(z0*, r) with z0* = z0/|z0|^2 and
    r^2 = |z0*|^2 - 1, which is the radius making the sphere orthogonal to
    S^{n-1}; p_{z0} reflects in the hyperplane through 0 orthogonal to z0.
    """
    a = z0.norm
    if a == 0.0:
        return MobiusMap.identity(z0.dim)
    z_star = z0.coords / (a * a)
    radius = math.sqrt(float(z_star @ z_star) - 1.0)
    sigma = SphereInversion(z_star, radius)
    reflection = PlaneReflection(z0.coords / a)
    return MobiusMap(z0.dim, (reflection, sigma))


def axis_translation(n: int, length: float, axis: int = 0) -> MobiusMap:
    """Hyperbolic translation by `length` along a coordinate axis, moving 0 toward +e_axis."""
    if n < 2:
        raise ValueError(f"dimension must be >= 2 (got: {n})")
    z0 = np.zeros(n)
    z0[axis] = -math.tanh(length / 2.0)
    return make_translation_to_origin(Point(z0))


def rotation_2d(theta: float) -> MobiusMap:
    c, s = math.cos(theta), math.sin(theta)
    return MobiusMap(2, (Orthogonal(np.array([[c, -s], [s, c]])),))


def random_mobius(n: int, rng: np.random.Generator, max_radius: float = 0.8) -> MobiusMap:
    """A random automorphism: orthogonal part times a translation of a random point to 0."""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    direction = rng.standard_normal(n)
    direction /= np.linalg.norm(direction)
    z0 = Point(direction * max_radius * rng.uniform() ** (1.0 / n))
    return MobiusMap(n, (Orthogonal(Q),)).compose(make_translation_to_origin(z0))


def mobius_equal_on_probes(a: MobiusMap, b: MobiusMap, probes: np.ndarray, tol: float = 1e-9) -> bool:
    """Sampling-based equality of two maps on a probe set."""
    return bool(np.max(np.abs(a.apply_array(probes) - b.apply_array(probes))) <= tol)


def sample_ball(rng: np.random.Generator, count: int, n: int, radius: float = 1.0) -> np.ndarray:
    """Uniform samples in the Euclidean ball B(0, radius)."""
    directions = rng.standard_normal((count, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.uniform(size=count) ** (1.0 / n)
    return directions * radii[:, None]


def center_comparison_constant(
    r0: float = 0.4,
    n: int = 2,
    samples: int = 20_000,
    seed: int = 0,
    margin: float = 0.01,
) -> float:
    """
    Numerical C1(r0) with C1·h(z1, z2) <= |z1 - z2| on B(0, r0).

    Mixes far pairs with near-coincident pairs close to the sphere |z| = r0,
    where the ratio |z1 - z2|/h approaches its infimum, then subtracts the
    safety margin.
    """
    rng = np.random.default_rng(seed)
    half = samples // 2
    Z1 = sample_ball(rng, half, n, r0)
    Z2 = sample_ball(rng, half, n, r0)

    directions = rng.standard_normal((samples - half, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = r0 * (1.0 - 1e-3 * rng.uniform(size=samples - half))
    near1 = directions * radii[:, None]
    step = rng.standard_normal((samples - half, n))
    near2 = near1 - 1e-6 * step / np.linalg.norm(step, axis=1, keepdims=True)
    keep = np.linalg.norm(near2, axis=1) < r0

    A = np.vstack([Z1, near1[keep]])
    B = np.vstack([Z2, near2[keep]])
    h = hyp_dist_array(A, B)
    ok = h > 0
    ratio = np.linalg.norm(A - B, axis=1)[ok] / h[ok]
    c1 = float(ratio.min()) * (1.0 - margin)
    logger.debug(f"C1({r0}) = {c1:.6f} from {int(ok.sum())} pairs")
    return c1


def log_ratio_lower_bound_holds(r: ArrayLike) -> np.ndarray:
    """log((1 + r/2)/(1 - r/2)) >= r elementwise, for r in (0, 1)."""
    r = np.asarray(r, dtype=float)
    return np.log((1.0 + r / 2.0) / (1.0 - r / 2.0)) >= r
