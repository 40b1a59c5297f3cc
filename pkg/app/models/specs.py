"""JSON-facing specs for groups, regions, families, maps and densities."""

from __future__ import annotations

import math
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.services.group import Circle, GroupPresentation, make_cyclic_translation, make_schottky_2d
from app.services.maps import (
    QuotientMap,
    SmoothMap,
    build_fm_family,
    fm_family_members,
    identity_map,
    jump_map,
    linear_chart,
    moebius_induced,
    radial_example_map,
)
from app.services.mobius import MobiusMap, Point, axis_translation, primitive_from_dict
from app.services.modulus import (
    DensityField,
    PathFamily,
    annulus_extremal_density,
    constant_weight,
    extremal_ring_weight,
    log_weight,
    ring_test_density,
)
from app.services.paths import polyline
from app.services.quotient import QuotientPoint
from app.services.regions import (
    Annulus,
    BallSampler,
    Box,
    BoxSampler,
    Complement,
    EmptyRegion,
    EuclideanBall,
    HalfSpace,
    HyperbolicBall,
    Intersection,
    QuotientRing,
    Region,
    Sampler,
)
from app.services.regions import Union as RegionUnion

Vector = List[float]


class StrictModel(BaseModel):
    """Rejects unknown keys."""

    model_config = ConfigDict(extra="forbid")


class PrimitiveSpec(StrictModel):
    kind: Literal["orthogonal", "inversion", "reflection"]
    matrix: Optional[List[Vector]] = None
    center: Optional[Vector] = None
    radius: Optional[float] = None
    normal: Optional[Vector] = None

    def to_chain_item(self) -> dict:
        return self.model_dump(exclude_none=True)


class MobiusSpec(StrictModel):
    """A primitive chain applied right to left, or an axis translation shorthand."""

    primitives: Optional[List[PrimitiveSpec]] = None
    translation: Optional[float] = None
    axis: int = 0

    @model_validator(mode="after")
    def one_form(self) -> "MobiusSpec":
        if (self.primitives is None) == (self.translation is None):
            raise ValueError("give exactly one of 'primitives' or 'translation'")
        return self

    def build(self, n: int) -> MobiusMap:
        if self.translation is not None:
            return axis_translation(n, self.translation, self.axis)
        return MobiusMap(n, tuple(primitive_from_dict(p.to_chain_item()) for p in self.primitives))


class CircleSpec(StrictModel):
    """Either {center, radius} or the geodesic {angle, distance}."""

    center: Optional[Vector] = None
    radius: Optional[float] = None
    angle: Optional[float] = None
    distance: Optional[float] = None

    @model_validator(mode="after")
    def one_form(self) -> "CircleSpec":
        explicit = self.center is not None and self.radius is not None
        geodesic = self.angle is not None and self.distance is not None
        if explicit == geodesic:
            raise ValueError("circle needs either center and radius or angle and distance")
        return self

    def build(self) -> Circle:
        if self.angle is not None:
            return Circle.from_geodesic(self.angle, self.distance)
        return Circle((float(self.center[0]), float(self.center[1])), float(self.radius))


class CirclePairSpec(StrictModel):
    a: CircleSpec
    b: CircleSpec


class GroupSpec(StrictModel):
    kind: Literal["identity", "cyclic", "schottky2d", "generators"] = "generators"
    dimension: int = Field(2, ge=2)
    length: Optional[float] = Field(None, gt=0)
    pairs: Optional[List[CirclePairSpec]] = None
    generators: List[MobiusSpec] = Field(default_factory=list)
    label: str = ""

    def build(self) -> GroupPresentation:
        if self.kind == "cyclic":
            if self.length is None:
                raise ValueError("cyclic group needs 'length'")
            return make_cyclic_translation(self.dimension, self.length)
        if self.kind == "schottky2d":
            if self.dimension != 2 or not self.pairs:
                raise ValueError("schottky2d needs dimension 2 and at least one circle pair")
            return make_schottky_2d([(p.a.build(), p.b.build()) for p in self.pairs], self.label or "schottky2d")
        if self.kind == "identity":
            return GroupPresentation(self.dimension, (), self.label or "identity")
        return GroupPresentation(self.dimension, tuple(g.build(self.dimension) for g in self.generators), self.label)


class RegionSpec(StrictModel):
    kind: Literal[
        "empty",
        "ball",
        "hyperbolic_ball",
        "annulus",
        "hyperbolic_annulus",
        "half_space",
        "box",
        "complement",
        "intersection",
        "union",
        "quotient_ball",
        "quotient_annulus",
    ]
    center: Optional[Vector] = None
    radius: Optional[float] = None
    r1: Optional[float] = None
    r2: Optional[float] = None
    normal: Optional[Vector] = None
    offset: float = 0.0
    low: Optional[Vector] = None
    high: Optional[Vector] = None
    parts: List["RegionSpec"] = Field(default_factory=list)

    def build(self, group: Optional[GroupPresentation] = None, max_word_len: int = 8) -> Region:
        kind = self.kind
        if kind == "empty":
            return EmptyRegion()
        if kind == "ball":
            return EuclideanBall(np.asarray(self.center, dtype=float), float(self.radius))
        if kind == "hyperbolic_ball":
            return HyperbolicBall(np.asarray(self.center, dtype=float), float(self.radius))
        if kind in ("annulus", "hyperbolic_annulus"):
            metric = "hyperbolic" if kind == "hyperbolic_annulus" else "euclidean"
            return Annulus(np.asarray(self.center, dtype=float), float(self.r1), float(self.r2), metric)
        if kind == "half_space":
            return HalfSpace(np.asarray(self.normal, dtype=float), self.offset)
        if kind == "box":
            return Box(np.asarray(self.low, dtype=float), np.asarray(self.high, dtype=float))
        if kind == "complement":
            return Complement(self.parts[0].build(group, max_word_len))
        if kind == "intersection":
            return Intersection([p.build(group, max_word_len) for p in self.parts])
        if kind == "union":
            return RegionUnion([p.build(group, max_word_len) for p in self.parts])
        if group is None:
            raise ValueError(f"region '{kind}' needs a group")
        if kind == "quotient_ball":
            return QuotientRing(group, np.asarray(self.center, dtype=float), -1.0, float(self.radius), max_word_len)
        return QuotientRing(group, np.asarray(self.center, dtype=float), float(self.r1), float(self.r2), max_word_len)


class SamplerSpec(StrictModel):
    kind: Literal["ball", "box"]
    center: Optional[Vector] = None
    radius: Optional[float] = None
    low: Optional[Vector] = None
    high: Optional[Vector] = None

    def build(self) -> Sampler:
        if self.kind == "ball":
            return BallSampler(np.asarray(self.center, dtype=float), float(self.radius))
        return BoxSampler(np.asarray(self.low, dtype=float), np.asarray(self.high, dtype=float))


class GridSpec(StrictModel):
    low: Vector
    high: Vector
    resolution: int = Field(64, gt=0)


class FamilySpec(StrictModel):
    kind: Literal["annulus", "hyperbolic_ring", "box_crossing", "explicit"]
    center: Optional[Vector] = None
    r1: Optional[float] = None
    r2: Optional[float] = None
    count: int = Field(256, gt=0)
    spirals: int = Field(0, ge=0)
    twist: float = 1.0
    low: Optional[Vector] = None
    high: Optional[Vector] = None
    axis: int = 0
    paths: Optional[List[List[Vector]]] = None
    domain: Optional[RegionSpec] = None

    def build(self, n: int, group: Optional[GroupPresentation] = None, max_word_len: int = 8, seed: int = 0) -> PathFamily:
        center = as_point(self.center, n).coords
        if self.kind == "annulus":
            return PathFamily.annulus(center, self.r1, self.r2, n, self.count, self.spirals, self.twist, seed)
        if self.kind == "hyperbolic_ring":
            return PathFamily.hyperbolic_ring(center, self.r1, self.r2, n, self.count, seed)
        if self.kind == "box_crossing":
            return PathFamily.box_crossing(self.low, self.high, self.axis, self.count)
        paths = [polyline(points) for points in self.paths]
        return PathFamily.explicit(paths, self.domain.build(group, max_word_len))


class MapSpec(StrictModel):
    kind: Literal["identity", "moebius", "radial_example", "linear_chart", "fm_family", "jump"]
    mobius: Optional[MobiusSpec] = None
    center: Optional[Vector] = None
    matrix: Optional[List[Vector]] = None
    radius: Optional[float] = Field(None, gt=0)
    r0: Optional[float] = Field(None, gt=0)
    alpha: float = Field(2.0, ge=1)
    m: int = Field(4, ge=1)
    ms: Optional[List[int]] = None
    shift: Optional[Vector] = None

    def build(self, group: GroupPresentation, max_word_len: int = 8) -> Union[QuotientMap, SmoothMap]:
        """The configured map; the h_m example is a map of the ball, every other kind a quotient map."""
        n = group.dimension
        center = as_point(self.center, n)
        if self.kind == "identity":
            return identity_map(group)
        if self.kind == "moebius":
            return moebius_induced(group, self.mobius.build(n))
        if self.kind == "radial_example":
            return radial_example_map(self.alpha, self.m, n)
        if self.kind == "linear_chart":
            return linear_chart(group, center, np.asarray(self.matrix, dtype=float), self.radius, max_word_len)
        if self.kind == "jump":
            return jump_map(group, center, self.shift, self.radius, max_word_len)
        return build_fm_family(group, QuotientPoint(center, group), self.r0, self.alpha, self.m, max_word_len)

    def build_family(self, group: GroupPresentation, max_word_len: int = 8) -> List[QuotientMap]:
        """Every f_m for m in `ms`, or the single configured map."""
        if self.kind == "fm_family" and self.ms:
            p0 = QuotientPoint(as_point(self.center, group.dimension), group)
            return fm_family_members(group, p0, self.r0, self.alpha, self.ms, max_word_len)
        built = self.build(group, max_word_len)
        if not isinstance(built, QuotientMap):
            raise ValueError(f"map '{self.kind}' is not a quotient map")
        return [built]


class DensitySpec(StrictModel):
    kind: Literal["constant", "annulus_extremal", "ring_test", "log_e_over_r", "inverse_r"]
    value: float = 1.0
    region: Optional[RegionSpec] = None
    center: Optional[Vector] = None
    r1: Optional[float] = None
    r2: Optional[float] = None
    weight: Literal["constant", "log", "extremal"] = "extremal"
    element: Literal["euclidean", "hyperbolic"] = "hyperbolic"

    def build(self, n: int, group: Optional[GroupPresentation] = None, max_word_len: int = 8) -> DensityField:
        c = as_point(self.center, n).coords
        if self.kind == "constant":
            region = self.region.build(group, max_word_len) if self.region is not None else None
            return DensityField.constant(self.value, region)
        if self.kind == "annulus_extremal":
            return annulus_extremal_density(c, self.r1, self.r2, self.element)
        if self.kind == "ring_test":
            if group is None:
                raise ValueError("ring_test density needs a group")
            weight = WEIGHTS[self.weight](self.r1, self.r2)
            return ring_test_density(QuotientPoint(Point(c), group), self.r1, self.r2, weight, max_word_len)
        if self.kind == "log_e_over_r":
            return DensityField(lambda X: np.log(math.e / np.linalg.norm(X - c, axis=1)), "log(e/r)")
        return DensityField(lambda X: 1.0 / np.linalg.norm(X - c, axis=1), "1/r")


WEIGHTS = {"constant": constant_weight, "log": log_weight, "extremal": extremal_ring_weight}


def as_point(values: Optional[Vector], n: int) -> Point:
    if values is None:
        return Point.origin(n)
    return Point(np.asarray(values, dtype=float))


def dyadic(largest: float, levels: int) -> List[float]:
    """largest, largest/2, ..., largest/2^(levels-1)."""
    return [largest / 2.0**k for k in range(levels)]


RegionSpec.model_rebuild()
