"""Differentiable test maps, dilatations and quotient self-maps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.config import settings
from app.services.group import GroupPresentation, element_table
from app.services.mobius import MobiusMap, Point, hyp_dist_array, make_translation_to_origin
from app.services.quotient import QuotientPoint, normal_neighborhood, quotient_dist_many

logger = logging.getLogger(__name__)

ArrayMap = Callable[[np.ndarray], np.ndarray]


class DomainProximityError(ValueError):
    """Raised when a finite-difference stencil leaves the map's domain."""

    pass


class ChartCoverageError(RuntimeError):
    """Raised when no single target chart contains the image of a neighborhood."""

    pass


class SmoothMap:
    """
    A vectorized map of B^n (or a ball B(0, radius)) into R^n.

    Args:
        evaluator: (N, n) -> (N, n)
        dimension: n
        jacobian_fn: optional analytic Jacobian, (N, n) -> (N, n, n)
        inverse_fn: optional inverse evaluator
        domain_radius: the map is defined on B(0, domain_radius)
    """

    def __init__(
        self,
        evaluator: ArrayMap,
        dimension: int,
        jacobian_fn: Optional[ArrayMap] = None,
        inverse_fn: Optional[ArrayMap] = None,
        domain_radius: float = 1.0,
        label: str = "map",
    ):
        self.evaluator = evaluator
        self.dimension = dimension
        self.jacobian_fn = jacobian_fn
        self.inverse_fn = inverse_fn
        self.domain_radius = domain_radius
        self.label = label

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.evaluator(np.atleast_2d(np.asarray(X, dtype=float)))

    def inverse(self, Y: np.ndarray) -> np.ndarray:
        if self.inverse_fn is None:
            raise NotImplementedError(f"map '{self.label}' has no inverse")
        return self.inverse_fn(np.atleast_2d(np.asarray(Y, dtype=float)))

    @property
    def has_analytic_jacobian(self) -> bool:
        return self.jacobian_fn is not None

    @classmethod
    def identity(cls, n: int) -> "SmoothMap":
        return cls(
            lambda X: X.copy(),
            n,
            jacobian_fn=lambda X: np.broadcast_to(np.eye(n), (X.shape[0], n, n)).copy(),
            inverse_fn=lambda Y: Y.copy(),
            label="identity",
        )

    @classmethod
    def linear(cls, matrix: np.ndarray) -> "SmoothMap":
        A = np.asarray(matrix, dtype=float)
        A_inv = np.linalg.inv(A)
        return cls(
            lambda X: X @ A.T,
            A.shape[0],
            jacobian_fn=lambda X: np.broadcast_to(A, (X.shape[0],) + A.shape).copy(),
            inverse_fn=lambda Y: Y @ A_inv.T,
            label="linear",
        )

    @classmethod
    def from_mobius(cls, mobius: MobiusMap) -> "SmoothMap":
        back = mobius.inverse()
        return cls(mobius.apply_array, mobius.dim, inverse_fn=back.apply_array, label="moebius")


def _fd_step(X: np.ndarray, step: Optional[float]) -> np.ndarray:
    if step is not None:
        return np.full(X.shape[0], float(step))
    return 1e-6 * np.maximum(1.0 - np.linalg.norm(X, axis=1), 1e-6)


def jacobian_field(m: SmoothMap, X: np.ndarray, step: Optional[float] = None, analytic: bool = True) -> np.ndarray:
    """
    Batched Jacobians (N, n, n); central differences unless an analytic Jacobian exists.

    The default step is 1e-6 (1 - |x|).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if analytic and m.jacobian_fn is not None:
        return np.asarray(m.jacobian_fn(X), dtype=float)
    h = _fd_step(X, step)
    if np.any(np.linalg.norm(X, axis=1) + 2.0 * h >= m.domain_radius):
        raise DomainProximityError(f"finite-difference stencil leaves the domain of '{m.label}'")
    N, n = X.shape
    J = np.empty((N, n, n))
    for k in range(n):
        offset = np.zeros((N, n))
        offset[:, k] = h
        J[:, :, k] = (m(X + offset) - m(X - offset)) / (2.0 * h[:, None])
    return J


def jacobian(m: SmoothMap, x: Point, step: Optional[float] = None) -> np.ndarray:
    """The n×n Jacobian f'(x)."""
    return jacobian_field(m, x.coords[None, :], step)[0]


@dataclass(frozen=True)
class Dilatations:
    inner: np.ndarray
    outer: np.ndarray
    stretch: np.ndarray
    jacobian: np.ndarray


def dilatations(J: np.ndarray) -> Dilatations:
    """
    K_I = |J|/l(f')^n and K_O = ||f'||^n/|J| from a stacked SVD.

    Conventions: f' = 0 gives 1; a singular nonzero f' gives +inf.
    """
    J = np.asarray(J, dtype=float)
    single = J.ndim == 2
    if single:
        J = J[None, :, :]
    n = J.shape[-1]
    s = np.linalg.svd(J, compute_uv=False)
    s_max, s_min = s[:, 0], s[:, -1]
    det = np.abs(np.linalg.det(J))
    zero = s_max == 0.0
    singular = ~zero & (det <= 1e-14 * s_max**n)
    with np.errstate(divide="ignore", invalid="ignore"):
        k_inner = np.where(singular, np.inf, det / s_min**n)
        k_outer = np.where(singular, np.inf, s_max**n / det)
    k_inner = np.where(zero, 1.0, k_inner)
    k_outer = np.where(zero, 1.0, k_outer)
    if single:
        return Dilatations(k_inner[:1], k_outer[:1], s_max[:1], det[:1])
    return Dilatations(k_inner, k_outer, s_max, det)


def inner_dilatation(J: np.ndarray) -> float:
    """K_I(x, f) for a single Jacobian."""
    return float(dilatations(J).inner[0])


def outer_dilatation(J: np.ndarray) -> float:
    """K_O(x, f) for a single Jacobian."""
    return float(dilatations(J).outer[0])


def max_stretch(m: SmoothMap, x: Point) -> float:
    """L(x, f), the largest singular value of f'(x)."""
    return float(np.linalg.norm(jacobian(m, x), ord=2))


def directional_stretch(m: SmoothMap, x: Point, directions: int = 64, radius: float = 1e-5, seed: int = 0) -> float:
    """max over sampled unit v of |f(x + r v) - f(x)|/r."""
    n = x.dim
    if n == 2:
        theta = math.pi * np.arange(directions) / directions
        V = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        V = np.random.default_rng(seed).standard_normal((directions, n))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
    if x.norm + radius >= m.domain_radius:
        raise DomainProximityError("sampling sphere leaves the domain")
    base = m(x.coords[None, :])
    return float(np.max(np.linalg.norm(m(x.coords + radius * V) - base, axis=1)) / radius)


class RadialProfile:
    """s ↦ R(s) for a radial homeomorphism x ↦ R(|x|) x/|x|."""

    def value(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class HmProfile(RadialProfile):
    """
    Profile of h_m: linear on s < c = (m-1)/m, and e·exp(-log^α(e/s)) beyond.

    The outer branch fixes the unit sphere; both branches agree at s = c.
    """

    def __init__(self, alpha: float, m: int):
        if alpha < 1:
            raise ValueError(f"alpha must be >= 1 (got: {alpha})")
        if m < 1:
            raise ValueError(f"m must be >= 1 (got: {m})")
        self.alpha = alpha
        self.m = m
        self.seam = (m - 1) / m
        self.slope = self._outer(np.array([self.seam]))[0] / self.seam if self.seam > 0 else 0.0

    def _outer(self, s: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return math.e * np.exp(-np.log(math.e / s) ** self.alpha)

    def value(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inner = s < self.seam
        out[inner] = self.slope * s[inner]
        outer = ~inner & (s > 0)
        out[outer] = self._outer(s[outer])
        return out

    def derivative(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inner = s < self.seam
        out[inner] = self.slope
        outer = ~inner & (s > 0)
        L = np.log(math.e / s[outer])
        out[outer] = self.alpha * L ** (self.alpha - 1.0) * self._outer(s[outer]) / s[outer]
        return out

    def inverse(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        boundary = self._outer(np.array([self.seam]))[0] if self.seam > 0 else 0.0
        inner = r < boundary
        if self.slope > 0:
            out[inner] = r[inner] / self.slope
        outer = ~inner & (r > 0)
        out[outer] = math.e * np.exp(-((1.0 - np.log(r[outer])) ** (1.0 / self.alpha)))
        return out

    def dilatation_bound(self, s: np.ndarray) -> np.ndarray:
        """α log^{α-1}(e/s)."""
        return self.alpha * np.log(math.e / np.asarray(s, dtype=float)) ** (self.alpha - 1.0)


class RadialMap(SmoothMap):
    """x ↦ R(|x|) x/|x| with Jacobian R' x̂x̂ᵀ + (R/|x|)(I - x̂x̂ᵀ)."""

    def __init__(self, profile: RadialProfile, dimension: int, label: str = "radial"):
        super().__init__(self._apply, dimension, self._jacobian, self._inverse, 1.0, label)
        self.profile = profile

    def _apply(self, X: np.ndarray) -> np.ndarray:
        s = np.linalg.norm(X, axis=1)
        scale = np.divide(self.profile.value(s), s, out=np.zeros_like(s), where=s > 0)
        return X * scale[:, None]

    def _inverse(self, Y: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(Y, axis=1)
        scale = np.divide(self.profile.inverse(r), r, out=np.zeros_like(r), where=r > 0)
        return Y * scale[:, None]

    def _jacobian(self, X: np.ndarray) -> np.ndarray:
        N, n = X.shape
        s = np.linalg.norm(X, axis=1)
        radial = self.profile.derivative(s)
        safe = np.where(s > 0, s, 1.0)
        tangential = np.where(s > 0, self.profile.value(s) / safe, radial)
        unit = X / safe[:, None]
        outer = np.einsum("ni,nj->nij", unit, unit)
        eye = np.broadcast_to(np.eye(n), (N, n, n))
        return radial[:, None, None] * outer + tangential[:, None, None] * (eye - outer)


def radial_example_map(alpha: float, m: int, n: int = 2) -> RadialMap:
    """h_m with parameters α ≥ 1 and m ≥ 1."""
    return RadialMap(HmProfile(alpha, m), n, label=f"h_m(alpha={alpha}, m={m})")


def chart_scaled(base: SmoothMap, radius: float) -> SmoothMap:
    """y ↦ radius·F(y/radius) on B(0, radius), identity outside."""

    def inside(X: np.ndarray) -> np.ndarray:
        return np.linalg.norm(X, axis=1) < radius

    def apply(X: np.ndarray) -> np.ndarray:
        out = X.copy()
        mask = inside(X)
        if np.any(mask):
            out[mask] = radius * base(X[mask] / radius)
        return out

    def invert(Y: np.ndarray) -> np.ndarray:
        out = Y.copy()
        mask = inside(Y)
        if np.any(mask):
            out[mask] = radius * base.inverse(Y[mask] / radius)
        return out

    def jac(X: np.ndarray) -> np.ndarray:
        N, n = X.shape
        out = np.broadcast_to(np.eye(n), (N, n, n)).copy()
        mask = inside(X)
        if np.any(mask):
            out[mask] = jacobian_field(base, X[mask] / radius)
        return out

    return SmoothMap(apply, base.dimension, jac if base.has_analytic_jacobian else None, invert, 1.0, f"scaled({base.label}, {radius})")


class QuotientMap:
    """
    A self-map of B^n/G given by a lift acting on representatives.

    `lifted` maps each representative to a representative of the image
    orbit and is smooth near every point where the quotient map is; chart
    representatives of the quotient map differ from it by Möbius maps.
    """

    def __init__(
        self,
        group: GroupPresentation,
        lifted: SmoothMap,
        label: str,
        target_group: Optional[GroupPresentation] = None,
        chart_radius: Optional[float] = None,
    ):
        self.group = group
        self.target_group = target_group or group
        self.lifted = lifted
        self.label = label
        self.chart_radius = chart_radius
        self.chart: Optional[SmoothMap] = None
        self.chart_center: Optional[Point] = None
        self.r0_chart: Optional[float] = None
        self.profile: Optional[HmProfile] = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.lifted(X)

    def inverse(self, Y: np.ndarray) -> np.ndarray:
        return self.lifted.inverse(Y)

    def __call__(self, p: QuotientPoint) -> QuotientPoint:
        return QuotientPoint(Point(self.apply(p.rep.coords[None, :])[0]), self.target_group)

    def jacobian_field(self, X: np.ndarray, step: Optional[float] = None) -> np.ndarray:
        return jacobian_field(self.lifted, X, step)

    def check_well_defined(self, max_word_len: int = 2, probes: int = 16, seed: int = 0, tol: float = 1e-6) -> bool:
        """f(g z) lies on the orbit of f(z) for short words g and sampled z."""
        from app.services.mobius import sample_ball

        Z = sample_ball(np.random.default_rng(seed), probes, self.group.dimension, 0.5)
        images = self.apply(Z)
        table = element_table(self.group, max_word_len)
        target_table = element_table(self.target_group, max_word_len + 2)
        moved = table.images(Z)
        for e in range(1, len(table)):
            d, _ = quotient_dist_many(self.target_group, self.apply(moved[e]), images, table=target_table)
            if np.max(d) > tol:
                logger.warning(f"map '{self.label}' is not orbit-compatible for word {table.word(e)}")
                return False
        return True


def _nearest_element(table, X: np.ndarray, anchor: np.ndarray):
    """Per row: element index e minimizing h(g_e x, anchor), the moved points and distances."""
    images = table.images(X)
    d = hyp_dist_array(images, anchor[None, None, :])
    d = np.where(np.isfinite(d), d, np.inf)
    arg = np.argmin(d, axis=0)
    rows = np.arange(X.shape[0])
    return arg, images[arg, rows], d[arg, rows]


def chart_conjugated(
    g: GroupPresentation,
    center: Point,
    chart_map: SmoothMap,
    radius: float,
    max_word_len: Optional[int] = None,
    label: str = "chart",
) -> QuotientMap:
    """
    The quotient map equal to π∘F∘φ on B~(π center, radius) and the identity elsewhere.

    φ sends the nearest lift of p to the chart T_center, so the quotient ball
    becomes B(0, tanh(radius/2)); F must fix the sphere of that radius.
    """
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len
    table = element_table(g, max_word_len)
    T = make_translation_to_origin(center)
    T_inv = T.inverse()
    inverses = {}

    def element_inverse(e: int) -> MobiusMap:
        if e not in inverses:
            inverses[e] = g.word_map(table.word(e)).inverse()
        return inverses[e]

    def conjugate(X: np.ndarray, fn: ArrayMap) -> np.ndarray:
        out = X.copy()
        arg, moved, dist = _nearest_element(table, X, center.coords)
        inside = dist < radius
        if not np.any(inside):
            return out
        Y = T.apply_array(moved[inside])
        result = T_inv.apply_array(fn(Y))
        idx = np.nonzero(inside)[0]
        for e in np.unique(arg[inside]):
            sel = arg[inside] == e
            back = result[sel] if e == 0 else element_inverse(int(e)).apply_array(result[sel])
            out[idx[sel]] = back
        return out

    lifted = SmoothMap(
        lambda X: conjugate(X, chart_map),
        g.dimension,
        inverse_fn=lambda Y: conjugate(Y, chart_map.inverse),
        label=label,
    )
    qmap = QuotientMap(g, lifted, label, chart_radius=radius)
    qmap.chart = chart_map
    qmap.chart_center = center
    return qmap


def identity_map(g: GroupPresentation) -> QuotientMap:
    return QuotientMap(g, SmoothMap.identity(g.dimension), "identity")


def moebius_induced(g: GroupPresentation, mobius: MobiusMap, check: bool = True) -> QuotientMap:
    """The quotient map induced by M; M must normalize G."""
    qmap = QuotientMap(g, SmoothMap.from_mobius(mobius), "moebius")
    if check and not qmap.check_well_defined():
        raise ValueError("Möbius map does not normalize the group")
    return qmap


def linear_chart(g: GroupPresentation, center: Point, matrix: np.ndarray, radius: float, max_word_len: Optional[int] = None) -> QuotientMap:
    """y ↦ A y in the chart at center, on the quotient ball of hyperbolic radius `radius`."""
    A = np.asarray(matrix, dtype=float)
    r_chart = math.tanh(radius / 2.0)
    if np.linalg.norm(A, ord=2) * r_chart >= 1.0:
        raise ValueError("linear chart map leaves the unit ball")
    linear = SmoothMap.linear(A)
    return chart_conjugated(g, center, linear, radius, max_word_len, label="linear_chart")


def build_fm_family(
    g: GroupPresentation,
    p0: QuotientPoint,
    r0: float,
    alpha: float,
    m: int,
    max_word_len: Optional[int] = None,
) -> QuotientMap:
    """
    f_m = π∘g̃_m∘φ on B~(p0, r0) and the identity outside, with
    g̃_m(y) = r0'·h_m(y/r0') and r0' = (e^{r0} - 1)/(e^{r0} + 1).

    Raises:
        ValueError: if r0 is not below the normal-neighborhood radius at p0
    """
    neighborhood = normal_neighborhood(g, p0, max_word_len)
    if r0 >= neighborhood.radius:
        raise ValueError(f"r0 = {r0} must be below the normal-neighborhood radius {neighborhood.radius:.6g}")
    r0_chart = (math.exp(r0) - 1.0) / (math.exp(r0) + 1.0)
    g_m = chart_scaled(radial_example_map(alpha, m, g.dimension), r0_chart)
    qmap = chart_conjugated(g, p0.rep, g_m, r0, max_word_len, label=f"f_m(alpha={alpha}, m={m})")
    qmap.r0_chart = r0_chart
    qmap.profile = HmProfile(alpha, m)
    return qmap


def jump_map(g: GroupPresentation, center: Point, shift: Sequence[float], radius: float, max_word_len: Optional[int] = None) -> QuotientMap:
    """Shifts the half {y_1 >= 0} of the chart ball by `shift`; discontinuous at the center."""
    v = np.asarray(shift, dtype=float)
    r_chart = math.tanh(radius / 2.0)

    def apply(Y: np.ndarray) -> np.ndarray:
        out = Y.copy()
        upper = Y[:, 0] >= 0
        out[upper] = Y[upper] + v
        return out

    def invert(Y: np.ndarray) -> np.ndarray:
        return Y - v * (Y[:, 0] >= v[0])[:, None]

    if r_chart + float(np.linalg.norm(v)) >= 1.0:
        raise ValueError("shift leaves the unit ball")
    chart = SmoothMap(apply, g.dimension, inverse_fn=invert, label="jump")
    return chart_conjugated(g, center, chart, radius, max_word_len, label="jump")


def chart_inner_dilatation(f: QuotientMap, p: QuotientPoint, step: Optional[float] = None) -> float:
    """
    K_I(p, f) = K_I(φ(p), F) for the chart representative F.

    Raises:
        ChartCoverageError: if the image of a small neighborhood of p is not
            contained in one normal neighborhood of f(p)
    """
    x = p.rep.coords[None, :]
    h = _fd_step(x, step)[0]
    stencil = np.vstack([x + h * e for e in np.eye(x.shape[1])] + [x - h * e for e in np.eye(x.shape[1])])
    image = f.apply(x)
    spread = float(np.max(hyp_dist_array(f.apply(stencil), image)))
    target = normal_neighborhood(f.target_group, QuotientPoint(Point(image[0]), f.target_group))
    if not spread < target.radius:
        raise ChartCoverageError(f"image of a neighborhood of {p.rep} spreads {spread:.3g} beyond one chart")
    return inner_dilatation(f.jacobian_field(x, step)[0])


def dilatation_summary(f: QuotientMap, X: np.ndarray) -> Dict[str, float]:
    """Extremes of K_I and K_O over sample representatives."""
    d = dilatations(f.jacobian_field(X))
    return {
        "k_inner_max": float(np.max(d.inner)),
        "k_inner_min": float(np.min(d.inner)),
        "k_outer_max": float(np.max(d.outer)),
        "k_outer_min": float(np.min(d.outer)),
    }


MAP_REGISTRY: Dict[str, Callable[..., object]] = {
    "identity": identity_map,
    "moebius": moebius_induced,
    "radial_example": radial_example_map,
    "linear_chart": linear_chart,
    "fm_family": build_fm_family,
    "jump": jump_map,
}


def fm_family_members(
    g: GroupPresentation, p0: QuotientPoint, r0: float, alpha: float, ms: Sequence[int], max_word_len: Optional[int] = None
) -> List[QuotientMap]:
    return [build_fm_family(g, p0, r0, alpha, m, max_word_len) for m in ms]
