"""Experiment service for orchestrating one command per run."""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from app.config import settings
from app.models.experiment import CommandName, ExperimentConfig
from app.models.reports import ExperimentReport
from app.models.specs import as_point, dyadic
from app.services.aggregator import ReportAggregator
from app.services.group import check_discreteness, orbit_in_ball
from app.services.maps import QuotientMap, dilatations, jacobian_field
from app.services.mobius import hyp_dist
from app.services.modulus import (
    ConvergenceError,
    Grid,
    annulus_modulus_reference,
    discrete_modulus,
    hyperbolic_ring_modulus_reference,
    modulus_upper_bound,
)
from app.services.quotient import (
    QuotientPoint,
    dirichlet_membership,
    hyp_ball_volume_reference,
    hyp_measure,
    quotient_dist_report,
    quotient_measure,
)
from app.services.verify import (
    MODULUS_FLOOR,
    SAMPLED_FAMILY_NOTE,
    Caveat,
    check_inverse_inequality,
    check_poletsky,
    equicontinuity_probe,
    fmo_functional,
)

logger = logging.getLogger(__name__)

Outcome = Tuple[Dict[str, Any], Optional[bool], List[Dict[str, Any]], Dict[str, List[Dict[str, Any]]]]

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BUDGET = 2
EXIT_CONFIG = 3

# present on every sampled estimate; --strict ignores them
INFORMATIONAL_CAVEATS = {"discrete_modulus", "monte_carlo"}


@dataclass
class RunOutcome:
    report: ExperimentReport
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    exit_status: int = EXIT_OK


@contextmanager
def budget_overrides(config: ExperimentConfig, threads: Optional[int]) -> Iterator[None]:
    """Temporarily apply the config budgets to the shared settings."""
    budgets = config.budgets
    overrides = {
        "max_elements": budgets.max_elements,
        "mc_samples": budgets.mc_samples,
        "grid_resolution": budgets.grid_resolution,
        "max_iterations": budgets.max_iterations,
        "default_max_word_len": budgets.max_word_len,
    }
    if threads is not None:
        overrides["threads"] = threads
    previous = {name: getattr(settings, name) for name in overrides}
    for name, value in overrides.items():
        setattr(settings, name, value)
    try:
        yield
    finally:
        for name, value in previous.items():
            setattr(settings, name, value)


class ExperimentService:
    """Service for running one experiment config."""

    def __init__(self, config: ExperimentConfig, threads: Optional[int] = None, strict: bool = False):
        self.config = config
        self.threads = threads
        self.strict = strict
        self.aggregator = ReportAggregator()
        self.max_word_len = config.budgets.max_word_len
        self._handlers: Dict[CommandName, Callable[[], Outcome]] = {
            CommandName.DISTANCE: self._distance,
            CommandName.ORBIT: self._orbit,
            CommandName.DIRICHLET: self._dirichlet,
            CommandName.MEASURE: self._measure,
            CommandName.MODULUS: self._modulus,
            CommandName.DILATATION: self._dilatation,
            CommandName.VERIFY_POLETSKY: self._verify_poletsky,
            CommandName.VERIFY_INVERSE: self._verify_inverse,
            CommandName.FMO: self._fmo,
            CommandName.EQUICONTINUITY: self._equicontinuity,
        }

    def run(self) -> RunOutcome:
        """
        Execute the configured command.

        BudgetExceededError and ConvergenceError propagate to the caller.
        """
        command = self.config.command
        logger.info(f"running '{command.value}' (seed {self.config.seed})")
        with budget_overrides(self.config, self.threads):
            self.group = self.config.group.build()
            result, passed, caveats, tables = self._handlers[command]()

        report = self.aggregator.aggregate(self.config, result, passed, caveats)
        if passed is False:
            status = EXIT_FAILED
        elif self.strict and any(c.get("kind") not in INFORMATIONAL_CAVEATS for c in caveats):
            status = EXIT_BUDGET
        else:
            status = EXIT_OK
        logger.info(f"finished '{command.value}': {report.summary}")
        return RunOutcome(report, tables, status)

    # helpers

    @property
    def n(self) -> int:
        return self.group.dimension

    def _point(self, values: Optional[List[float]]):
        return as_point(values, self.n)

    def _quotient_point(self, values: Optional[List[float]]) -> QuotientPoint:
        return QuotientPoint(self._point(values), self.group)

    def _grid(self) -> Optional[Grid]:
        spec = self.config.grid
        if spec is None:
            return None
        return Grid(tuple(spec.low), tuple(spec.high), spec.resolution)

    def _sampler(self):
        return self.config.sampler.build() if self.config.sampler is not None else None

    def _family(self):
        return self.config.family.build(self.n, self.group, self.max_word_len, self.config.seed)

    def _density(self):
        return self.config.density.build(self.n, self.group, self.max_word_len)

    def _quotient_map(self) -> QuotientMap:
        built = self.config.map.build(self.group, self.max_word_len)
        if not isinstance(built, QuotientMap):
            raise ValueError(f"map '{self.config.map.kind}' is not a quotient map")
        return built

    # commands

    def _distance(self) -> Outcome:
        p1, p2 = (self._quotient_point(p) for p in self.config.points)
        found = quotient_dist_report(p1, p2, self.max_word_len)
        caveats = [] if found.complete else [{"kind": "incomplete_search", "floor": 0.0, "message": "distance is an upper bound"}]
        result = {
            "distance": found.value,
            "word": list(found.word),
            "complete": found.complete,
            "hyperbolic": hyp_dist(p1.rep, p2.rep),
        }
        return result, None, caveats, {}

    def _orbit(self) -> Outcome:
        seed = self._point(self.config.points[0])
        center = self._point(self.config.center)
        search = orbit_in_ball(self.group, seed, center, self.config.radius, self.max_word_len)
        discreteness = check_discreteness(self.group, self.max_word_len, 64, seed=self.config.seed)
        rows = [
            {"word": " ".join(map(str, o.word)), "distance": o.distance, "displacement": o.displacement, **{f"x{k}": v for k, v in enumerate(o.point.coords.tolist())}}
            for o in search.points
        ]
        caveats = [] if search.complete else [{"kind": "incomplete_search", "floor": 0.0, "message": "orbit search did not close"}]
        result = {
            "radius": self.config.radius,
            "points": [{"word": list(o.word), "coords": o.point.coords.tolist(), "distance": o.distance} for o in search.points],
            "complete": search.complete,
            "visited": search.visited,
            "pruned": search.pruned,
            "delta": search.delta,
            "discreteness": discreteness.to_dict(),
        }
        return result, None, caveats, {"orbit": rows}

    def _dirichlet(self) -> Outcome:
        p0 = self._point(self.config.center)
        rows = []
        incomplete = False
        for index, values in enumerate(self.config.points):
            membership = dirichlet_membership(self.group, p0, self._point(values), self.max_word_len)
            incomplete |= not membership.complete
            rows.append(
                {
                    "index": index,
                    "inside": membership.inside,
                    "boundary": membership.boundary,
                    "margin": membership.margin,
                    "nearest_word": " ".join(map(str, membership.nearest_word or ())),
                    "complete": membership.complete,
                }
            )
        caveats = [{"kind": "incomplete_search", "floor": 0.0, "message": "word list was truncated"}] if incomplete else []
        return {"center": p0.coords.tolist(), "points": rows}, None, caveats, {"dirichlet": rows}

    def _measure(self) -> Outcome:
        region = self.config.region.build(self.group, self.max_word_len)
        sampler = self._sampler()
        seed = self.config.seed
        if self.config.center is not None and not self.group.is_trivial:
            estimate = quotient_measure(self.group, self._point(self.config.center), region, seed, self.max_word_len, sampler)
        else:
            estimate = hyp_measure(region, self.n, sampler, seed)
        result = estimate.to_dict()
        spec = self.config.region
        if spec.kind == "hyperbolic_ball" and self.group.is_trivial:
            result["reference"] = hyp_ball_volume_reference(self.n, spec.radius)
        return result, None, [], {}

    def _modulus(self) -> Outcome:
        fam = self._family()
        estimate = discrete_modulus(fam, self._grid(), self.config.element)
        result = estimate.to_dict()
        spec = self.config.family
        if spec.kind == "annulus" and not spec.spirals:
            result["reference"] = annulus_modulus_reference(self.n, spec.r1, spec.r2)
        elif spec.kind == "hyperbolic_ring":
            result["reference"] = hyperbolic_ring_modulus_reference(self.n, spec.r1, spec.r2)
        if self.config.density is not None:
            bound = modulus_upper_bound(self._density(), fam.domain, self.n, self.config.seed, self.config.element, sampler=self._sampler())
            result["upper_bound"] = bound.to_dict()
        return result, None, [Caveat("discrete_modulus", MODULUS_FLOOR, SAMPLED_FAMILY_NOTE).to_dict()], {}

    def _dilatation(self) -> Outcome:
        built = self.config.map.build(self.group, self.max_word_len)
        smooth = built.lifted if isinstance(built, QuotientMap) else built
        X = np.asarray(self.config.points, dtype=float)
        d = dilatations(jacobian_field(smooth, X))
        rows = [
            {"index": i, "k_inner": float(d.inner[i]), "k_outer": float(d.outer[i]), "stretch": float(d.stretch[i]), "jacobian": float(d.jacobian[i])}
            for i in range(X.shape[0])
        ]
        passed = None
        result: Dict[str, Any] = {"map": self.config.map.kind, "k_inner_max": float(np.max(d.inner)), "k_outer_max": float(np.max(d.outer)), "points": rows}
        if self.config.map.kind == "radial_example":
            alpha = self.config.map.alpha
            bound = alpha * np.log(np.e / np.linalg.norm(X, axis=1)) ** (alpha - 1.0)
            passed = bool(np.all(d.inner <= bound * (1.0 + 1e-3)))
            result["bound_holds"] = passed
            for row, b in zip(rows, bound):
                row["bound"] = float(b)
        return result, passed, [], {"dilatation": rows}

    def _verify_poletsky(self) -> Outcome:
        report = check_poletsky(
            self._quotient_map(),
            self._family(),
            self._density(),
            m_tilde=self.config.m_tilde,
            tol=self.config.tolerances.inequality,
            seed=self.config.seed,
            grid=self._grid(),
            element=self.config.element,
            sampler=self._sampler(),
            config=self.config.canonical(),
        )
        return report.to_dict(), report.passed, [c.to_dict() for c in report.caveats], {}

    def _verify_inverse(self) -> Outcome:
        report = check_inverse_inequality(
            self._quotient_map(),
            self._family(),
            self._density(),
            tol=self.config.tolerances.inequality,
            seed=self.config.seed,
            grid=self._grid(),
            element=self.config.element,
            sampler=self._sampler(),
            config=self.config.canonical(),
        )
        return report.to_dict(), report.passed, [c.to_dict() for c in report.caveats], {}

    def _fmo(self) -> Outcome:
        eps = dyadic(self.config.eps_max, self.config.levels)
        samples = min(self.config.budgets.mc_samples, 200_000)
        report = fmo_functional(self._density(), self._quotient_point(self.config.center), eps, self.config.seed, samples, self.max_word_len)
        rows = [r.to_dict() for r in report.rows]
        return report.to_dict(), None, [c.to_dict() for c in report.caveats], {"fmo": rows}

    def _equicontinuity(self) -> Outcome:
        family = self.config.map.build_family(self.group, self.max_word_len)
        table = equicontinuity_probe(family, self._quotient_point(self.config.center), self.config.radii, seed=self.config.seed, max_word_len=self.max_word_len)
        rows = [{"radius": r.radius, "sup_omega": r.sup_omega} for r in table.rows]
        return table.to_dict(), None, [], {"equicontinuity": rows}


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None, strict: bool = False) -> RunOutcome:
    """Run one config; ConvergenceError is re-raised after logging."""
    try:
        return ExperimentService(config, threads, strict).run()
    except ConvergenceError:
        logger.error("experiment stopped on a non-converged optimizer", exc_info=True)
        raise
