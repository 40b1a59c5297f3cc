"""Tests for sampled paths, lengths and line integrals."""

import math

import numpy as np
import pytest

from app.services.mobius import Point, conformal_factor, hyp_dist, random_mobius
from app.services.paths import (
    QUOTIENT,
    LengthFunction,
    SampledPath,
    circle,
    geodesic_segment,
    hyp_length,
    hyperbolic_speed,
    length_function,
    line_integral,
    line_integral_smooth,
    normal_representation,
    polyline,
    quotient_length,
    quotient_length_report,
    radial_segment,
    transport,
)


def ones(X):
    return np.ones(len(X))


class TestSampledPath:
    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            SampledPath(np.array([0.0]), np.zeros((1, 2)))

    def test_params_increase(self):
        with pytest.raises(ValueError):
            SampledPath(np.array([0.0, 0.0]), np.zeros((2, 2)))

    def test_stays_in_ball(self):
        with pytest.raises(ValueError):
            polyline([[0.0, 0.0], [1.0, 0.0]])

    def test_quotient_needs_group(self):
        with pytest.raises(ValueError):
            SampledPath(np.array([0.0, 1.0]), np.zeros((2, 2)), space=QUOTIENT)

    def test_refine_respects_gap(self):
        refined = radial_segment([0.0, 0.0], [0.9, 0.0]).refine(0.01)
        assert np.all(refined.gaps() <= 0.01)
        np.testing.assert_allclose(refined.points[:, 1], 0.0)

    def test_polyline_refines_by_interpolation(self):
        refined = polyline([[0.0, 0.0], [0.5, 0.0], [0.5, 0.5]]).refine(0.05)
        assert np.all(np.isclose(refined.points[:, 0], 0.5) | np.isclose(refined.points[:, 1], 0.0))

    def test_quotient_refinement_stays_on_one_lift(self, cyclic_group):
        # samples at axis coordinates 0.4 and -0.45 = 0.55 - 1 on different lifts
        reps = np.array([[math.tanh(0.2), 0.0], [math.tanh(-0.225), 0.0]])
        path = SampledPath(np.array([0.0, 1.0]), reps, QUOTIENT, cyclic_group)
        refined = path.refine(0.01)
        s = 2.0 * np.arctanh(refined.points[:, 0])
        assert np.all((s >= 0.4 - 1e-9) & (s <= 0.55 + 1e-9))
        np.testing.assert_allclose(refined.points[:, 1], 0.0, atol=1e-12)
        assert np.all(refined.gaps() <= 0.01)
        assert quotient_length(path, 4, gap=0.01) == pytest.approx(0.15, abs=1e-9)

    def test_json_rows(self):
        path = radial_segment([0.0, 0.0], [0.3, 0.1], samples=5)
        restored = SampledPath.from_json(path.to_json())
        np.testing.assert_allclose(restored.points, path.points)


class TestLengths:
    def test_radial_segment(self):
        assert hyp_length(radial_segment([0.0, 0.0], [0.5, 0.0])) == pytest.approx(math.log(3.0), abs=1e-9)

    def test_geodesic_segment(self):
        x, y = Point(np.array([0.3, -0.4])), Point(np.array([-0.5, 0.2]))
        assert hyp_length(geodesic_segment(x, y)) == pytest.approx(hyp_dist(x, y), rel=1e-9)

    def test_circle(self):
        assert hyp_length(circle([0.0, 0.0], 0.5), gap=1e-3) == pytest.approx(8.0 * math.pi / 3.0, rel=1e-5)

    def test_chordal_sum_from_below(self):
        path = circle([0.0, 0.0], 0.5, samples=16)
        assert hyp_length(path, gap=0.5) <= hyp_length(path, gap=1e-3) + 1e-12

    def test_isometry_invariance(self, rng):
        path = circle([0.1, 0.0], 0.3)
        m = random_mobius(2, rng, max_radius=0.5)
        assert hyp_length(transport(path, m)) == pytest.approx(hyp_length(path), rel=1e-5)

    def test_ball_only(self, cyclic_group):
        path = radial_segment([0.0, 0.0], [0.5, 0.0]).lift_to(QUOTIENT, cyclic_group)
        with pytest.raises(ValueError):
            hyp_length(path)

    def test_quotient_length_is_local(self, cyclic_group):
        end = math.tanh(1.5)
        path = radial_segment([0.0, 0.0], [end, 0.0]).lift_to(QUOTIENT, cyclic_group)
        report = quotient_length_report(path, max_word_len=4)
        assert report.value == pytest.approx(3.0, rel=1e-9)
        assert report.complete
        assert quotient_length(path, 4) == pytest.approx(report.value)

    def test_quotient_length_needs_quotient_path(self):
        with pytest.raises(ValueError):
            quotient_length(radial_segment([0.0, 0.0], [0.5, 0.0]))


class TestLengthFunction:
    def test_cumulative(self):
        lf = length_function(radial_segment([0.0, 0.0], [0.5, 0.0]))
        assert lf.total == pytest.approx(math.log(3.0), abs=1e-9)
        assert lf.value_at(np.array([0.0]))[0] == 0.0

    def test_inverse_of_flat_piece(self):
        lf = LengthFunction(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 1.0, 1.0, 2.0]))
        assert lf.inverse(np.array([1.0]))[0] == 1.0
        assert lf.inverse(np.array([1.5]))[0] == pytest.approx(2.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            LengthFunction(np.array([0.0, 1.0]), np.array([0.5, 1.0]))
        with pytest.raises(ValueError):
            LengthFunction(np.array([0.0, 1.0]), np.array([0.0, -1.0]))

    def test_compose(self):
        a = LengthFunction(np.array([0.0, 1.0]), np.array([0.0, 2.0]))
        b = LengthFunction(np.array([0.0, 1.0]), np.array([0.0, 4.0]))
        composed = a.compose(b)
        assert composed.value_at(np.array([1.0]))[0] == pytest.approx(2.0)


class TestLineIntegrals:
    def test_constant_density_gives_length(self):
        path = radial_segment([0.0, 0.0], [0.5, 0.0])
        assert line_integral(path, ones) == pytest.approx(math.log(3.0), abs=1e-9)

    def test_constant_path(self):
        assert line_integral(SampledPath.constant(np.zeros(2)), ones) == 0.0

    def test_normal_representation(self):
        normal = normal_representation(radial_segment([0.0, 0.0], [0.5, 0.0]))
        assert normal.params[-1] == pytest.approx(math.log(3.0), abs=1e-9)
        assert normal_representation(SampledPath.constant(np.zeros(2))).degenerate

    def test_rejects_negative_density(self):
        with pytest.raises(ValueError):
            line_integral(radial_segment([0.0, 0.0], [0.5, 0.0]), lambda X: -np.ones(len(X)))

    def test_trapezoid_matches_quadrature(self):
        path = circle([0.1, 0.0], 0.4)

        def rho(X):
            return 1.0 + X[:, 0] ** 2

        assert line_integral(path, rho, gap=1e-3) == pytest.approx(line_integral_smooth(path, rho), rel=1e-4)

    def test_smooth_circle(self):
        assert line_integral_smooth(circle([0.0, 0.0], 0.5), ones) == pytest.approx(8.0 * math.pi / 3.0, rel=1e-7)

    def test_geodesic_speed(self):
        x, y = Point(np.array([0.2, 0.1])), Point(np.array([-0.4, 0.3]))
        speeds = hyperbolic_speed(geodesic_segment(x, y), np.linspace(0.1, 0.9, 5))
        np.testing.assert_allclose(speeds, hyp_dist(x, y), rtol=1e-5)

    def test_euclidean_density_cancels_factor(self):
        # ρ = 1/λ turns the hyperbolic arc element back into the Euclidean one
        path = radial_segment([0.0, 0.0], [0.5, 0.0])
        assert line_integral(path, lambda X: 1.0 / conformal_factor(X), gap=1e-4) == pytest.approx(0.5, rel=1e-6)
