"""Tests for dilatations, the radial example maps and quotient self-maps."""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from app.services.maps import (
    DomainProximityError,
    HmProfile,
    SmoothMap,
    build_fm_family,
    chart_inner_dilatation,
    chart_scaled,
    dilatation_summary,
    dilatations,
    directional_stretch,
    fm_family_members,
    identity_map,
    inner_dilatation,
    jacobian_field,
    jump_map,
    linear_chart,
    max_stretch,
    moebius_induced,
    outer_dilatation,
    radial_example_map,
)
from app.services.mobius import Point, axis_translation, rotation_2d, sample_ball
from app.services.quotient import QuotientPoint

R0 = 0.4
R0_CHART = math.tanh(R0 / 2.0)


class TestDilatations:
    def test_diagonal(self):
        J = np.diag([2.0, 1.0])
        assert inner_dilatation(J) == pytest.approx(2.0)
        assert outer_dilatation(J) == pytest.approx(2.0)

    def test_anisotropic_3d(self):
        J = np.diag([4.0, 2.0, 1.0])
        # det 8: K_I = 8/1, K_O = 64/8
        assert inner_dilatation(J) == pytest.approx(8.0)
        assert outer_dilatation(J) == pytest.approx(8.0)

    def test_zero_derivative(self):
        d = dilatations(np.zeros((2, 2)))
        assert d.inner[0] == 1.0 and d.outer[0] == 1.0

    def test_singular_derivative(self):
        assert math.isinf(inner_dilatation(np.diag([1.0, 0.0])))

    def test_conformal_is_one(self, rng):
        theta = rng.uniform(0, 2 * math.pi)
        J = 3.0 * np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        assert inner_dilatation(J) == pytest.approx(1.0)
        assert outer_dilatation(J) == pytest.approx(1.0)

    def test_stacked(self):
        J = np.stack([np.eye(2), np.diag([3.0, 1.0]), np.zeros((2, 2))])
        np.testing.assert_allclose(dilatations(J).inner, [1.0, 3.0, 1.0])

    def test_stretch(self):
        linear = SmoothMap.linear(np.diag([2.0, 1.0]))
        x = Point(np.array([0.1, 0.2]))
        assert max_stretch(linear, x) == pytest.approx(2.0)
        assert directional_stretch(linear, x) == pytest.approx(2.0, rel=1e-9)


class TestJacobian:
    def test_finite_differences_match_analytic(self):
        h = radial_example_map(2.0, 4)
        X = np.array([[0.85, 0.0], [0.3, -0.6], [0.1, 0.2]])
        np.testing.assert_allclose(jacobian_field(h, X, analytic=False), jacobian_field(h, X), rtol=1e-5, atol=1e-7)

    def test_stencil_leaves_domain(self):
        m = SmoothMap(lambda X: X.copy(), 2, domain_radius=0.5)
        with pytest.raises(DomainProximityError):
            jacobian_field(m, np.array([[0.5 - 1e-9, 0.0]]))

    def test_linear_inverse(self):
        linear = SmoothMap.linear(np.array([[2.0, 1.0], [0.0, 1.0]]))
        Y = linear(np.array([[0.1, 0.2]]))
        np.testing.assert_allclose(linear.inverse(Y), [[0.1, 0.2]])

    def test_missing_inverse(self):
        with pytest.raises(NotImplementedError):
            SmoothMap(lambda X: X, 2).inverse(np.zeros((1, 2)))


class TestHmProfile:
    def test_validation(self):
        with pytest.raises(ValueError):
            HmProfile(0.5, 2)
        with pytest.raises(ValueError):
            HmProfile(2.0, 0)

    def test_seam_is_continuous(self):
        profile = HmProfile(2.0, 4)
        c = profile.seam
        below, above = profile.value(np.array([c - 1e-12, c]))
        assert below == pytest.approx(above, abs=1e-10)

    def test_fixes_unit_sphere_and_center(self):
        profile = HmProfile(3.0, 5)
        np.testing.assert_allclose(profile.value(np.array([0.0, 1.0])), [0.0, 1.0], atol=1e-12)

    def test_inverse(self):
        profile = HmProfile(2.0, 4)
        s = np.linspace(0.05, 0.99, 40)
        np.testing.assert_allclose(profile.inverse(profile.value(s)), s, rtol=1e-9)

    def test_m_one_has_no_linear_piece(self):
        profile = HmProfile(2.0, 1)
        s = np.array([0.5])
        assert profile.value(s)[0] == pytest.approx(math.e * math.exp(-math.log(math.e / 0.5) ** 2))

    @pytest.mark.parametrize("alpha", [1.0, 2.0, 3.5])
    def test_dilatation_matches_bound(self, alpha):
        h = radial_example_map(alpha, 4)
        s = np.array([0.8, 0.9, 0.97])
        X = np.column_stack([s * math.cos(0.3), s * math.sin(0.3)])
        d = dilatations(jacobian_field(h, X))
        bound = h.profile.dilatation_bound(s)
        np.testing.assert_allclose(d.inner, bound, rtol=1e-9)
        np.testing.assert_allclose(d.outer, bound, rtol=1e-9)

    @pytest.mark.parametrize("alpha", [1.0, 2.0, 3.0])
    @pytest.mark.parametrize("m", [2, 4, 8])
    def test_bound_on_random_points(self, alpha, m, rng):
        h = radial_example_map(alpha, m)
        X = sample_ball(rng, 10_000, 2, 0.999)
        bound = h.profile.dilatation_bound(np.linalg.norm(X, axis=1))
        assert np.all(dilatations(jacobian_field(h, X)).inner <= bound * (1.0 + 1e-3))

    @pytest.mark.parametrize("alpha", [1.0, 2.0, 3.0])
    @pytest.mark.parametrize("m", [2, 8])
    def test_injective_on_samples(self, alpha, m, rng):
        h = radial_example_map(alpha, m)
        X = sample_ball(rng, 10_000, 2, 0.999)
        collisions = cKDTree(h(X)).query_pairs(1e-9)
        assert all(np.linalg.norm(X[i] - X[j]) < 1e-7 for i, j in collisions)

    def test_linear_piece_is_conformal(self):
        h = radial_example_map(2.0, 4)
        d = dilatations(jacobian_field(h, np.array([[0.2, 0.1], [-0.5, 0.3]])))
        np.testing.assert_allclose(d.inner, 1.0)

    def test_radial_inverse(self):
        h = radial_example_map(2.0, 3, n=3)
        X = np.array([[0.1, 0.2, 0.3], [0.0, 0.0, 0.0], [0.5, -0.4, 0.2]])
        np.testing.assert_allclose(h.inverse(h(X)), X, atol=1e-10)


class TestChartScaled:
    def test_identity_outside(self):
        g = chart_scaled(radial_example_map(2.0, 4), 0.2)
        X = np.array([[0.3, 0.0], [0.0, -0.25]])
        np.testing.assert_array_equal(g(X), X)

    def test_scaled_inside(self):
        h = radial_example_map(2.0, 4)
        g = chart_scaled(h, 0.2)
        y = np.array([[0.1, 0.05]])
        np.testing.assert_allclose(g(y), 0.2 * h(y / 0.2))
        np.testing.assert_allclose(g.inverse(g(y)), y, atol=1e-12)


class TestQuotientMaps:
    def test_identity_has_unit_dilatation(self, cyclic_group, rng):
        summary = dilatation_summary(identity_map(cyclic_group), sample_ball(rng, 20, 2, 0.8))
        assert summary["k_inner_max"] == 1.0 and summary["k_outer_min"] == 1.0

    def test_moebius_has_unit_dilatation(self, cyclic_group, rng):
        f = moebius_induced(cyclic_group, axis_translation(2, 0.37))
        summary = dilatation_summary(f, sample_ball(rng, 20, 2, 0.5))
        assert summary["k_inner_max"] == pytest.approx(1.0, rel=1e-5)
        assert summary["k_outer_max"] == pytest.approx(1.0, rel=1e-5)

    def test_moebius_must_normalize(self, cyclic_group):
        moebius_induced(cyclic_group, rotation_2d(math.pi))
        with pytest.raises(ValueError):
            moebius_induced(cyclic_group, rotation_2d(math.pi / 2))

    def test_linear_chart(self, cyclic_group):
        f = linear_chart(cyclic_group, Point.origin(2), np.diag([2.0, 1.0]), 0.2)
        np.testing.assert_allclose(f.apply(np.array([[0.01, 0.02]])), [[0.02, 0.02]], atol=1e-12)
        outside = np.array([[0.0, 0.3]])
        np.testing.assert_array_equal(f.apply(outside), outside)
        p = QuotientPoint(Point.origin(2), cyclic_group)
        assert chart_inner_dilatation(f, p) == pytest.approx(2.0, rel=1e-5)

    def test_linear_chart_must_stay_in_ball(self, cyclic_group):
        with pytest.raises(ValueError):
            linear_chart(cyclic_group, Point.origin(2), np.diag([20.0, 1.0]), 0.2)

    def test_jump(self, cyclic_group):
        f = jump_map(cyclic_group, Point.origin(2), [0.05, 0.0], 0.3)
        out = f.apply(np.array([[0.01, 0.0], [-0.01, 0.0]]))
        np.testing.assert_allclose(out, [[0.06, 0.0], [-0.01, 0.0]], atol=1e-12)


class TestFmFamily:
    @pytest.fixture
    def p0(self, cyclic_group):
        return QuotientPoint(Point.origin(2), cyclic_group)

    def test_chart_radius(self, cyclic_group, p0):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        assert f.r0_chart == pytest.approx(R0_CHART)

    def test_rejects_large_ball(self, cyclic_group, p0):
        with pytest.raises(ValueError):
            build_fm_family(cyclic_group, p0, 0.6, 2.0, 4, max_word_len=4)

    def test_identity_outside_ball(self, cyclic_group, p0):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        X = np.array([[math.tanh(0.25), 0.0], [0.0, math.tanh(0.225)]])
        np.testing.assert_array_equal(f.apply(X), X)

    def test_fixes_center(self, cyclic_group, p0):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        np.testing.assert_allclose(f.apply(np.zeros((1, 2))), [[0.0, 0.0]], atol=1e-12)

    def test_acts_on_every_translate(self, cyclic_group, p0):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        y = np.array([[0.1, 0.05]])
        moved = cyclic_group.apply_word((1,), y)
        np.testing.assert_allclose(f.apply(moved), cyclic_group.apply_word((1,), f.apply(y)), atol=1e-10)

    def test_orbit_compatible(self, cyclic_group, p0):
        assert build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4).check_well_defined()

    def test_inner_dilatation_bound(self, cyclic_group, p0):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        s = 0.9
        p = QuotientPoint(Point(np.array([s * R0_CHART, 0.0])), cyclic_group)
        expected = float(f.profile.dilatation_bound(np.array([s]))[0])
        assert chart_inner_dilatation(f, p) == pytest.approx(expected, rel=1e-4)

    def test_chart_change_invariance(self, cyclic_group, p0, rng):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        X = sample_ball(rng, 100, 2, 0.95 * R0_CHART)
        deviation = 0.0
        for i, x in enumerate(X):
            word = (1,) if i % 2 else (-1,)
            moved = cyclic_group.apply_word(word, x[None, :])[0]
            here = chart_inner_dilatation(f, QuotientPoint(Point(x), cyclic_group))
            there = chart_inner_dilatation(f, QuotientPoint(Point(moved), cyclic_group))
            deviation = max(deviation, abs(there - here) / here)
        assert deviation < 1e-6

    def test_members(self, cyclic_group, p0):
        family = fm_family_members(cyclic_group, p0, R0, 2.0, [1, 2, 3], max_word_len=4)
        assert [f.profile.m for f in family] == [1, 2, 3]
        assert len({f.label for f in family}) == 3
