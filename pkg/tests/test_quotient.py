"""Tests for the factor-space metric, Dirichlet domains, measures and normal neighborhoods."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.config import settings as engine_settings
from app.services.group import ElementTable, make_cyclic_translation
from app.services.mobius import BoundaryError, Point, hyp_dist, hyp_dist_array, sample_ball
from app.services.quotient import (
    DirichletRegion,
    QuotientPoint,
    chart_transition,
    dirichlet_mask,
    dirichlet_membership,
    hyp_ball_volume_reference,
    hyp_measure,
    integrate_region,
    lift_nearest,
    local_isometry_radius,
    normal_neighborhood,
    projected_pseudo_dist,
    quotient_dist,
    quotient_dist_many,
    quotient_dist_report,
    quotient_dist_two_sided,
    quotient_measure,
)
from app.services.regions import BoxSampler, Complement, EmptyRegion, HyperbolicBall, quotient_ball

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def on_axis(g, s):
    return QuotientPoint(Point.on_axis(g.dimension, s), g)


class TestQuotientDistance:
    def test_cyclic_example(self, cyclic_group):
        found = quotient_dist_report(on_axis(cyclic_group, 0.0), on_axis(cyclic_group, 0.7), 4)
        assert found.value == pytest.approx(0.3, abs=1e-9)
        assert found.word == (1,)
        assert found.complete

    def test_two_sided_agrees(self, cyclic_group):
        p, q = on_axis(cyclic_group, 0.0), on_axis(cyclic_group, 0.7)
        assert quotient_dist_two_sided(p, q, 3) == pytest.approx(quotient_dist(p, q, 6), abs=1e-9)

    def test_same_orbit_is_zero(self, schottky_group, rng):
        x = sample_ball(rng, 1, 2, 0.8)[0]
        p = QuotientPoint(Point(x), schottky_group)
        q = QuotientPoint(Point(schottky_group.apply_word((2, 1), x[None, :])[0]), schottky_group)
        assert quotient_dist(p, q, 4) == pytest.approx(0.0, abs=1e-9)
        assert p == q

    def test_rejects_mixed_groups(self, cyclic_group):
        other = make_cyclic_translation(2, 1.0)
        with pytest.raises(ValueError):
            quotient_dist(on_axis(cyclic_group, 0.0), on_axis(other, 0.0))

    def test_rejects_dimension_mismatch(self, cyclic_group):
        with pytest.raises(ValueError):
            QuotientPoint(Point.origin(3), cyclic_group)

    def test_trivial_group_is_hyperbolic(self, trivial_group):
        p, q = on_axis(trivial_group, 0.2), on_axis(trivial_group, 1.5)
        assert quotient_dist(p, q) == pytest.approx(1.3, abs=1e-9)

    @given(seed=seeds)
    @settings(max_examples=25, deadline=None)
    def test_metric_properties(self, schottky_group, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (QuotientPoint(Point(x), schottky_group) for x in sample_ball(rng, 3, 2, 0.7))
        ab, ba = quotient_dist(a, b, 5), quotient_dist(b, a, 5)
        assert ab == pytest.approx(ba, abs=1e-9)
        assert ab <= hyp_dist(a.rep, b.rep) + 1e-12
        assert ab <= quotient_dist(a, c, 5) + quotient_dist(c, b, 5) + 1e-9

    def test_projected_pseudo_distance(self, cyclic_group):
        z1, z2 = Point.on_axis(2, 0.0), Point.on_axis(2, 1.8)
        assert projected_pseudo_dist(z1, z2, cyclic_group, 4) == pytest.approx(0.2, abs=1e-9)

    def test_many(self, cyclic_group):
        reps1 = np.zeros((3, 2))
        reps2 = np.array([[math.tanh(s / 2.0), 0.0] for s in (0.2, 0.7, 2.4)])
        dist, complete = quotient_dist_many(cyclic_group, reps1, reps2, 6)
        np.testing.assert_allclose(dist, [0.2, 0.3, 0.4], atol=1e-9)
        assert complete.all()


class TestLocalIsometry:
    def test_cyclic_radius(self, cyclic_group):
        assert local_isometry_radius(cyclic_group, [Point.origin(2)], 4) == pytest.approx(0.5, abs=1e-12)

    def test_quotient_is_local_isometry(self, cyclic_group, rng):
        X = sample_ball(rng, 200, 2, math.tanh(0.1))
        for x, y in zip(X[::2], X[1::2]):
            p, q = QuotientPoint(Point(x), cyclic_group), QuotientPoint(Point(y), cyclic_group)
            assert quotient_dist(p, q, 4) == pytest.approx(hyp_dist(p.rep, q.rep), abs=1e-9)

    def test_rejects_empty_sample(self, cyclic_group):
        with pytest.raises(ValueError):
            local_isometry_radius(cyclic_group, [])


class TestNormalNeighborhood:
    def test_radius(self, cyclic_group):
        U = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 0.0), 4)
        assert U.radius == pytest.approx(0.45, abs=1e-3)
        assert U.radius <= 0.45 + 1e-12

    def test_identity_group_is_capped_at_boundary_guard(self, trivial_group):
        edge = 2.0 * math.atanh(1.0 - engine_settings.boundary_guard)
        at_origin = normal_neighborhood(trivial_group, on_axis(trivial_group, 0.0), 2)
        assert math.isfinite(at_origin.radius)
        assert at_origin.radius == pytest.approx(edge)
        assert math.isfinite(at_origin.lifted_ball().radius)
        off_center = normal_neighborhood(trivial_group, on_axis(trivial_group, 0.7), 2)
        assert off_center.radius == pytest.approx(edge - 0.7, rel=1e-9)

    def test_lift_and_project(self, cyclic_group):
        U = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 0.0), 4)
        y = np.array([0.1, 0.05])
        far = QuotientPoint(Point(cyclic_group.apply_word((1, 1), y[None, :])[0]), cyclic_group)
        assert U.contains(far)
        np.testing.assert_allclose(U.lift(far).coords, y, atol=1e-9)
        assert U.project(U.lift(far)) == far

    def test_lift_outside_raises(self, cyclic_group):
        U = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 0.0), 4)
        with pytest.raises(ValueError):
            U.lift(on_axis(cyclic_group, 0.48))

    def test_chart_distance_is_hyperbolic(self, cyclic_group, rng):
        U = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 0.0), 4)
        radius = math.tanh(U.radius / 4.0)
        for x, y in sample_ball(rng, 40, 2, radius).reshape(20, 2, 2):
            p, q = QuotientPoint(Point(x), cyclic_group), QuotientPoint(Point(y), cyclic_group)
            assert hyp_dist(U.lift(p), U.lift(q)) == pytest.approx(quotient_dist(p, q, 4), abs=1e-9)

    def test_chart_transition(self, cyclic_group):
        U1 = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 0.0), 4)
        U2 = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 0.1), 4)
        assert chart_transition(U1, U2, Point.on_axis(2, 0.2)) == ()
        U3 = normal_neighborhood(cyclic_group, on_axis(cyclic_group, 2.1), 4)
        assert chart_transition(U1, U3, Point.on_axis(2, 0.2)) == (1, 1)

    def test_lift_nearest(self, cyclic_group):
        z = lift_nearest(cyclic_group, Point.on_axis(2, 0.1), Point.on_axis(2, 3.0), 6)
        assert hyp_dist(z, Point.on_axis(2, 3.1)) == pytest.approx(0.0, abs=1e-9)


class TestDirichlet:
    def test_membership(self, cyclic_group):
        p0 = Point.origin(2)
        inside = dirichlet_membership(cyclic_group, p0, Point.on_axis(2, 0.2), 4)
        assert inside.inside and not inside.boundary
        assert inside.margin == pytest.approx(0.6, abs=1e-9)
        assert inside.nearest_word == (1,)

        outside = dirichlet_membership(cyclic_group, p0, Point.on_axis(2, 0.7), 4)
        assert not outside.inside
        assert outside.margin == pytest.approx(-0.4, abs=1e-9)

    def test_bisector(self, cyclic_group):
        m = dirichlet_membership(cyclic_group, Point.origin(2), Point.on_axis(2, 0.5), 4)
        assert m.boundary and not m.inside

    def test_trivial_group(self, trivial_group):
        m = dirichlet_membership(trivial_group, Point.origin(2), Point.on_axis(2, 2.0))
        assert m.inside and m.complete

    def test_mask_matches_membership(self, schottky_group, rng):
        p0 = Point.origin(2)
        X = sample_ball(rng, 50, 2, 0.9)
        mask = dirichlet_mask(schottky_group, p0, X, 4)
        expected = [dirichlet_membership(schottky_group, p0, Point(x), 4).inside for x in X]
        assert mask.tolist() == expected

    @pytest.mark.parametrize("group_name, length", [("cyclic_group", 4), ("schottky_group", 3)])
    def test_translates_tile_the_ball(self, group_name, length, request, rng):
        g = request.getfixturevalue(group_name)
        p0 = Point.origin(2)
        Z = sample_ball(rng, 40, 2, 0.7)
        orbit = ElementTable(g, 2 * length).images(p0.coords[None, :])[:, 0, :]
        d = np.sort(hyp_dist_array(Z[:, None, :], orbit[None, :, :]), axis=1)
        Z = Z[d[:, 1] - d[:, 0] > 1e-6]
        assert len(Z) > 30
        table = ElementTable(g, length)
        hits = np.zeros(len(Z), dtype=int)
        for index in range(len(table)):
            inverse = tuple(-a for a in reversed(table.word(index)))
            hits += dirichlet_mask(g, p0, g.apply_word(inverse, Z), 2 * length)
        assert hits.tolist() == [1] * len(Z)

    def test_region_wraps_mask(self, cyclic_group):
        region = DirichletRegion(cyclic_group, Point.origin(2), 4)
        X = np.array([[math.tanh(0.1), 0.0], [math.tanh(0.4), 0.0]])
        assert region(X).tolist() == [True, False]


class TestMeasure:
    def test_ball_reference(self):
        assert hyp_ball_volume_reference(2, 1.0) == pytest.approx(4 * math.pi * math.sinh(0.5) ** 2)
        expected = 4 * math.pi * (math.sinh(2.0) / 4 - 0.5)
        assert hyp_ball_volume_reference(3, 1.0) == pytest.approx(expected, rel=1e-8)
        assert hyp_ball_volume_reference(2, 0.0) == 0.0

    def test_hyperbolic_ball(self):
        estimate = hyp_measure(HyperbolicBall(np.zeros(2), 1.0), 2, seed=11, samples=200_000)
        assert estimate.estimate == pytest.approx(hyp_ball_volume_reference(2, 1.0), rel=0.02)
        assert estimate.stderr > 0

    def test_deterministic_across_threads(self):
        region = HyperbolicBall(np.array([0.2, 0.1]), 0.8)
        one = hyp_measure(region, 2, seed=5, samples=40_000, threads=1)
        many = hyp_measure(region, 2, seed=5, samples=40_000, threads=4)
        assert one.estimate == many.estimate
        assert one.batches == many.batches

    def test_euclidean_element(self):
        region = HyperbolicBall(np.zeros(2), math.log(3.0))
        estimate = integrate_region(None, region, 2, seed=3, samples=100_000, element="euclidean")
        assert estimate.estimate == pytest.approx(math.pi * 0.25, rel=1e-9)

    def test_quotient_ball_inside_injectivity_radius(self, cyclic_group):
        region = quotient_ball(cyclic_group, np.zeros(2), 0.3, 4)
        estimate = quotient_measure(cyclic_group, Point.origin(2), region, seed=2, max_word_len=4, samples=100_000)
        assert estimate.estimate == pytest.approx(hyp_ball_volume_reference(2, 0.3), rel=0.03)

    def test_boundary_margin(self):
        sampler = BoxSampler(np.array([0.9999991, -1e-4]), np.array([0.9999999, 1e-4]))
        with pytest.raises(BoundaryError):
            integrate_region(None, Complement(EmptyRegion()), 2, sampler, samples=100)
        with pytest.raises(ValueError):
            integrate_region(None, Complement(EmptyRegion()), 2, sampler, samples=100, margin=1e-8)
