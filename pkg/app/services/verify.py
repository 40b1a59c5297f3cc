"""Numerical checks of the modulus inequalities, FMO and equicontinuity probes."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.services.group import BudgetExceededError
from app.services.maps import QuotientMap, dilatations
from app.services.mobius import conformal_factor, make_translation_to_origin, sample_ball
from app.services.modulus import (
    ConvergenceError,
    DensityField,
    Grid,
    PathFamily,
    discrete_modulus,
    is_admissible,
    modulus_upper_bound,
)
from app.services.quotient import QuotientPoint, normal_neighborhood, quotient_dist_many
from app.services.regions import BoxSampler, Sampler

logger = logging.getLogger(__name__)

MODULUS_FLOOR = 0.02
INCOMPLETE_FLOOR = 0.01
SAMPLED_FAMILY_NOTE = "lhs is the discrete modulus of a sampled family and underestimates the full family"


def fingerprint(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON of an experiment config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Caveat:
    kind: str
    floor: float
    message: str

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "floor": self.floor, "message": self.message}


@dataclass
class InequalityReport:
    """lhs ≤ rhs·(1 + effective_tol), where caveats can only raise the tolerance."""

    lhs: float
    rhs: float
    tol: float
    caveats: List[Caveat] = field(default_factory=list)
    fingerprint: str = ""
    details: Dict[str, Any] = field(default_factory=dict)
    admissible: bool = True

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def effective_tol(self) -> float:
        return max([self.tol] + [c.floor for c in self.caveats])

    @property
    def passed(self) -> bool:
        return self.admissible and self.lhs <= self.rhs * (1.0 + self.effective_tol)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "tol": self.tol,
            "effective_tol": self.effective_tol,
            "pass": self.passed,
            "admissible": self.admissible,
            "caveats": [c.to_dict() for c in self.caveats],
            "fingerprint": self.fingerprint,
            "details": self.details,
        }


def _lhs_modulus(fam: PathFamily, grid: Optional[Grid], element: str, caveats: List[Caveat]) -> Tuple[float, Dict[str, Any]]:
    try:
        estimate = discrete_modulus(fam, grid, element)
    except ConvergenceError as exc:
        logger.warning(f"modulus optimizer stopped early for '{fam.label}'; using best value {exc.best:.6g}")
        caveats.append(Caveat("not_converged", float(exc.gap), f"optimizer stopped after {exc.iterations} iterations"))
        return float(exc.best), {"converged": False, "iterations": exc.iterations, "relative_gap": exc.gap}
    caveats.append(Caveat("discrete_modulus", MODULUS_FLOOR, SAMPLED_FAMILY_NOTE))
    return estimate.estimate, estimate.to_dict()


def _mc_caveat(estimate: float, stderr: float) -> Caveat:
    floor = 3.0 * stderr / estimate if estimate > 0 else 0.0
    return Caveat("monte_carlo", floor, "rhs is a Monte Carlo estimate")


def _check_density(rho: DensityField, fam: PathFamily, sample_count: int, element: str) -> Tuple[bool, Dict[str, Any]]:
    report = is_admissible(rho, fam, sample_count=sample_count, element=element)
    if not report.passed:
        logger.warning(f"density '{rho.label}' is not admissible: min path integral {report.min_integral:.6g}")
    return report.passed, report.to_dict()


def _neighborhood_caveat(f: QuotientMap, fam: PathFamily, caveats: List[Caveat]) -> None:
    if f.chart_center is None or f.chart_radius is None:
        return
    p0 = QuotientPoint(f.chart_center, f.group)
    points = fam.all_points()
    d, clear = quotient_dist_many(f.group, points, np.repeat(f.chart_center.coords[None, :], len(points), axis=0))
    if not np.all(clear):
        caveats.append(Caveat("incomplete_search", INCOMPLETE_FLOOR, "orbit search near the family was budget-incomplete"))
    radius = normal_neighborhood(f.group, p0).radius
    if float(np.max(d)) >= radius:
        caveats.append(Caveat("outside_normal_neighborhood", 0.0, "family leaves the normal neighborhood of the chart center"))


def check_poletsky(
    f: QuotientMap,
    fam: PathFamily,
    rho: DensityField,
    m_tilde: int = 1,
    tol: float = 0.05,
    seed: int = 0,
    grid: Optional[Grid] = None,
    element: str = "hyperbolic",
    samples: Optional[int] = None,
    sampler: Optional[Sampler] = None,
    admissibility_paths: int = 128,
    config: Optional[Dict[str, Any]] = None,
) -> InequalityReport:
    """
    M(f(Γ)) ≤ (1/m̃) ∫_D K_I(p, f) ρ^n(p) dV(p).

    Convergence and search-budget problems become caveats on the report.
    """
    if m_tilde < 1:
        raise ValueError(f"m_tilde must be >= 1 (got: {m_tilde})")
    n = fam.dimension
    caveats: List[Caveat] = []
    admissible, admissibility = _check_density(rho, fam, admissibility_paths, element)
    _neighborhood_caveat(f, fam, caveats)

    image = fam.image(f.apply, f.inverse, f"{f.label}({fam.label})")
    try:
        lhs, modulus_details = _lhs_modulus(image, grid, element, caveats)
    except BudgetExceededError as exc:
        logger.error("element enumeration exceeded its budget", exc_info=True)
        caveats.append(Caveat("budget_exceeded", 0.0, str(exc)))
        lhs, modulus_details = math.nan, {}

    k_seen = {"max": 1.0}
    k_lock = threading.Lock()

    def k_inner(X: np.ndarray) -> np.ndarray:
        values = dilatations(f.jacobian_field(X)).inner
        batch_max = float(np.max(values, initial=1.0))
        # called from integration worker threads
        with k_lock:
            k_seen["max"] = max(k_seen["max"], batch_max)
        return values

    integral = modulus_upper_bound(
        rho, fam.domain, n, seed=seed, element=element, weight=k_inner, sampler=sampler, samples=samples
    )
    rhs = integral.estimate / m_tilde
    caveats.append(_mc_caveat(integral.estimate, integral.stderr))

    report = InequalityReport(
        lhs=lhs,
        rhs=rhs,
        tol=tol,
        caveats=caveats,
        fingerprint=fingerprint(config) if config is not None else "",
        admissible=admissible,
        details={
            "map": f.label,
            "family": fam.label,
            "paths": len(fam),
            "m_tilde": m_tilde,
            "element": element,
            "modulus": modulus_details,
            "integral": integral.to_dict(),
            "admissibility": admissibility,
            "k_inner_max": k_seen["max"],
        },
    )
    logger.info(f"poletsky check for '{f.label}': lhs {lhs:.6g}, rhs {rhs:.6g}, pass {report.passed}")
    return report


def _image_sampler(image: PathFamily, pad: float = 0.05) -> Sampler:
    points = image.all_points()
    low, high = points.min(axis=0), points.max(axis=0)
    margin = pad * (high - low) + 1e-9
    return BoxSampler(low - margin, high + margin)


def check_inverse_inequality(
    f: QuotientMap,
    fam: PathFamily,
    rho_star: DensityField,
    tol: float = 0.05,
    seed: int = 0,
    grid: Optional[Grid] = None,
    element: str = "hyperbolic",
    samples: Optional[int] = None,
    sampler: Optional[Sampler] = None,
    admissibility_paths: int = 128,
    config: Optional[Dict[str, Any]] = None,
) -> InequalityReport:
    """
    M(Γ) ≤ ∫_{f(D)} K_O(f^{-1}(y), f) ρ_*^n(y) dV(y) for a homeomorphism f.

    ρ_* must be admissible for f(Γ). Without an explicit sampler the
    integral runs over a padded box around the image paths.
    """
    n = fam.dimension
    caveats: List[Caveat] = []
    image = fam.image(f.apply, f.inverse, f"{f.label}({fam.label})")
    admissible, admissibility = _check_density(rho_star, image, admissibility_paths, element)
    _neighborhood_caveat(f, fam, caveats)
    lhs, modulus_details = _lhs_modulus(fam, grid, element, caveats)

    def k_outer(Y: np.ndarray) -> np.ndarray:
        return dilatations(f.jacobian_field(f.inverse(Y))).outer

    integral = modulus_upper_bound(
        rho_star,
        image.domain,
        n,
        seed=seed,
        element=element,
        weight=k_outer,
        sampler=sampler or _image_sampler(image),
        samples=samples,
    )
    caveats.append(_mc_caveat(integral.estimate, integral.stderr))
    report = InequalityReport(
        lhs=lhs,
        rhs=integral.estimate,
        tol=tol,
        caveats=caveats,
        fingerprint=fingerprint(config) if config is not None else "",
        admissible=admissible,
        details={
            "map": f.label,
            "family": fam.label,
            "paths": len(fam),
            "element": element,
            "modulus": modulus_details,
            "integral": integral.to_dict(),
            "admissibility": admissibility,
        },
    )
    logger.info(f"inverse check for '{f.label}': lhs {lhs:.6g}, rhs {integral.estimate:.6g}, pass {report.passed}")
    return report


@dataclass(frozen=True)
class FmoRow:
    epsilon: float
    value: float
    stderr: float
    mean: float

    def to_dict(self) -> Dict[str, float]:
        return {"epsilon": self.epsilon, "value": self.value, "stderr": self.stderr, "mean": self.mean}


@dataclass
class FmoReport:
    """Mean oscillation per level; the limsup is summarized over the last four levels, never extrapolated."""

    rows: List[FmoRow]
    tail_max: float
    slope: float
    relative_slope: float
    bounded: bool
    caveats: List[Caveat] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "tail_max": self.tail_max,
            "slope": self.slope,
            "relative_slope": self.relative_slope,
            "bounded": self.bounded,
            "caveats": [c.to_dict() for c in self.caveats],
        }


def _tail_trend(values: Sequence[float], tail: int = 4) -> Tuple[float, float, float]:
    last = np.asarray(values[-tail:], dtype=float)
    if last.size < 2:
        return float(last.max(initial=0.0)), 0.0, 0.0
    slope = float(np.polyfit(np.arange(last.size), last, 1)[0])
    scale = float(np.mean(np.abs(last)))
    relative = slope / scale if scale > 1e-12 else 0.0
    return float(last.max()), slope, relative


def fmo_functional(
    Q: Callable[[np.ndarray], np.ndarray],
    p0: QuotientPoint,
    eps_list: Sequence[float],
    seed: int = 0,
    samples: int = 20_000,
    max_word_len: Optional[int] = None,
    bound: float = 0.05,
) -> FmoReport:
    """
    For each ε: mean over B~(p0, ε) of |Q - Q̄_ε| in the hyperbolic measure.

    Every level reuses one base sample of the unit ball rescaled to
    B(0, tanh(ε/2)) in the chart at p0, so the levels share their noise.
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])) or any(e <= 0 for e in eps):
        raise ValueError("eps_list must be positive and strictly decreasing")
    n = p0.group.dimension
    caveats: List[Caveat] = []
    radius = normal_neighborhood(p0.group, p0, max_word_len).radius
    if eps[0] >= radius:
        caveats.append(Caveat("outside_normal_neighborhood", 0.0, f"largest ball exceeds the normal-neighborhood radius {radius:.4g}"))

    base = sample_ball(np.random.default_rng(seed), samples, n, 1.0)
    back = make_translation_to_origin(p0.rep).inverse()
    rows = []
    for e in eps:
        Y = math.tanh(e / 2.0) * base
        w = conformal_factor(Y) ** n
        w = w / w.sum()
        values = np.asarray(Q(back.apply_array(Y)), dtype=float)
        mean = float(np.sum(w * values))
        deviation = np.abs(values - mean)
        value = float(np.sum(w * deviation))
        stderr = float(math.sqrt(np.sum(w**2 * (deviation - value) ** 2)))
        rows.append(FmoRow(e, value, stderr, mean))
        logger.debug(f"fmo level eps={e:.4g}: {value:.6g} ± {stderr:.2g}")

    tail_max, slope, relative = _tail_trend([r.value for r in rows])
    bounded = relative <= bound
    logger.info(f"fmo over {len(rows)} levels: tail max {tail_max:.6g}, relative slope {relative:.3g}")
    return FmoReport(rows, tail_max, slope, relative, bounded, caveats)


@dataclass(frozen=True)
class EquicontinuityRow:
    radius: float
    sup_omega: float
    per_map: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {"radius": self.radius, "sup_omega": self.sup_omega, "per_map": dict(self.per_map)}


@dataclass
class EquicontinuityTable:
    rows: List[EquicontinuityRow]

    @property
    def decreasing(self) -> bool:
        sups = [r.sup_omega for r in self.rows]
        return all(b <= a * (1.0 + 1e-9) for a, b in zip(sups, sups[1:]))

    @property
    def vanishing(self) -> bool:
        """The smallest radius gives less than half the modulus of continuity at the largest."""
        return bool(self.rows) and self.rows[-1].sup_omega < 0.5 * self.rows[0].sup_omega

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": [r.to_dict() for r in self.rows], "decreasing": self.decreasing, "vanishing": self.vanishing}


def equicontinuity_probe(
    family: Sequence[QuotientMap],
    p0: QuotientPoint,
    radii: Sequence[float],
    samples: int = 256,
    seed: int = 0,
    max_word_len: Optional[int] = None,
) -> EquicontinuityTable:
    """ω_f(r) = max over sampled p with h~(p, p0) < r of h~(f(p), f(p0)), for each map and radius."""
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly decreasing")
    if not family:
        raise ValueError("family must contain at least one map")
    n = p0.group.dimension
    rng = np.random.default_rng(seed)
    inner = sample_ball(rng, samples, n, 1.0)
    rim = inner / np.maximum(np.linalg.norm(inner, axis=1, keepdims=True), 1e-12) * (1.0 - 1e-9)
    base = np.vstack([inner, rim])
    back = make_translation_to_origin(p0.rep).inverse()
    max_word_len = settings.default_max_word_len if max_word_len is None else max_word_len

    rows = []
    for r in radii:
        X = back.apply_array(math.tanh(r / 2.0) * base)
        per_map: Dict[str, float] = {}
        for f in family:
            anchor = f.apply(p0.rep.coords[None, :])
            d, _ = quotient_dist_many(f.target_group, f.apply(X), np.repeat(anchor, len(X), axis=0), max_word_len)
            per_map[f.label] = max(per_map.get(f.label, 0.0), float(np.max(d)))
        rows.append(EquicontinuityRow(r, max(per_map.values()), per_map))
        logger.debug(f"equicontinuity radius {r:.4g}: sup omega {rows[-1].sup_omega:.6g}")
    return EquicontinuityTable(rows)
