"""Tests for the modulus inequality checks, the FMO functional and equicontinuity probes."""

import math

import numpy as np
import pytest

from app.config import settings as engine_settings
from app.services.maps import build_fm_family, fm_family_members, identity_map, jump_map, linear_chart, moebius_induced
from app.services.mobius import Point, rotation_2d
from app.services.modulus import DensityField, PathFamily, annulus_extremal_density
from app.services.quotient import QuotientPoint
from app.services.regions import Box
from app.services.verify import (
    Caveat,
    InequalityReport,
    check_inverse_inequality,
    check_poletsky,
    equicontinuity_probe,
    fingerprint,
    fmo_functional,
)

R0 = 0.4
R0_CHART = math.tanh(R0 / 2.0)
EPS = [0.4 / 2**k for k in range(8)]


@pytest.fixture
def p0(cyclic_group):
    return QuotientPoint(Point.origin(2), cyclic_group)


class TestInequalityReport:
    def test_caveats_raise_tolerance(self):
        report = InequalityReport(lhs=1.04, rhs=1.0, tol=0.01)
        assert not report.passed
        report.caveats.append(Caveat("discrete_modulus", 0.05, "sampled"))
        assert report.effective_tol == 0.05
        assert report.passed

    def test_inadmissible_fails(self):
        assert not InequalityReport(lhs=0.5, rhs=1.0, tol=0.0, admissible=False).passed

    def test_nan_lhs_fails(self):
        assert not InequalityReport(lhs=math.nan, rhs=1.0, tol=0.05).passed

    def test_to_dict(self):
        data = InequalityReport(lhs=0.5, rhs=1.0, tol=0.05, caveats=[Caveat("monte_carlo", 0.01, "mc")]).to_dict()
        assert data["slack"] == 0.5
        assert data["pass"] is True
        assert data["caveats"][0]["kind"] == "monte_carlo"


class TestFingerprint:
    def test_key_order_is_irrelevant(self):
        a = {"command": "fmo", "seeds": {"root": 1}, "levels": 8}
        b = {"levels": 8, "seeds": {"root": 1}, "command": "fmo"}
        assert fingerprint(a) == fingerprint(b)
        assert len(fingerprint(a)) == 64

    def test_content_matters(self):
        assert fingerprint({"levels": 8}) != fingerprint({"levels": 9})


class TestPoletsky:
    def test_rejects_bad_multiplicity(self, cyclic_group):
        fam = PathFamily.annulus([0.0, 0.0], 0.25, 0.5, count=8)
        with pytest.raises(ValueError):
            check_poletsky(identity_map(cyclic_group), fam, annulus_extremal_density([0.0, 0.0], 0.25, 0.5), m_tilde=0)

    def test_inadmissible_density_fails(self, cyclic_group):
        fam = PathFamily.box_crossing([-0.15, -0.05], [0.15, 0.05], count=16)
        report = check_poletsky(
            identity_map(cyclic_group), fam, DensityField.constant(1.0), element="euclidean", samples=20_000
        )
        assert not report.admissible
        assert not report.passed

    def test_config_fingerprint(self, cyclic_group):
        fam = PathFamily.box_crossing([-0.15, -0.05], [0.15, 0.05], count=8)
        rho = DensityField.constant(1.0 / 0.3, Box(np.array([-0.151, -0.051]), np.array([0.151, 0.051])))
        config = {"command": "verify-poletsky"}
        report = check_poletsky(identity_map(cyclic_group), fam, rho, element="euclidean", samples=20_000, config=config)
        assert report.fingerprint == fingerprint(config)
        assert report.details["k_inner_max"] == 1.0

    def test_k_inner_max_independent_of_threads(self, cyclic_group, p0, monkeypatch):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, 4, max_word_len=4)
        fam = PathFamily.box_crossing([0.16, -0.01], [0.19, 0.01], count=8)
        rho = DensityField.constant(1.0 / 0.03)
        monkeypatch.setattr(engine_settings, "mc_batch_size", 100)
        maxima = []
        for threads in (1, 8):
            monkeypatch.setattr(engine_settings, "threads", threads)
            report = check_poletsky(f, fam, rho, element="euclidean", seed=4, samples=4_000)
            maxima.append(report.details["k_inner_max"])
        assert maxima[0] == maxima[1]
        assert maxima[0] > 1.0

    @pytest.mark.slow
    @pytest.mark.parametrize("rotation", [None, math.pi])
    def test_conformal_maps_are_sharp(self, cyclic_group, rotation):
        f = identity_map(cyclic_group) if rotation is None else moebius_induced(cyclic_group, rotation_2d(rotation))
        fam = PathFamily.annulus([0.0, 0.0], 0.25, 0.5, count=512)
        rho = annulus_extremal_density([0.0, 0.0], 0.25, 0.5)
        report = check_poletsky(f, fam, rho, element="euclidean", seed=3, samples=200_000)
        assert report.passed
        assert report.lhs == pytest.approx(report.rhs, rel=0.05)

    @pytest.mark.slow
    @pytest.mark.parametrize("m", [2, 4, 8])
    def test_fm_passes(self, cyclic_group, p0, m):
        f = build_fm_family(cyclic_group, p0, R0, 2.0, m, max_word_len=4)
        r1, r2 = 0.9 * R0_CHART, 0.99 * R0_CHART
        fam = PathFamily.annulus([0.0, 0.0], r1, r2, count=128)
        rho = annulus_extremal_density([0.0, 0.0], r1, r2, element="hyperbolic")
        report = check_poletsky(f, fam, rho, seed=5, samples=100_000)
        assert report.admissible
        assert report.passed
        assert report.slack >= 0.0
        assert report.details["k_inner_max"] > 2.0


class TestInverseInequality:
    @pytest.mark.slow
    def test_linear_chart_box(self, cyclic_group):
        f = linear_chart(cyclic_group, Point.origin(2), np.diag([2.0, 1.0]), 0.4)
        fam = PathFamily.box_crossing([-0.05, -0.05], [0.05, 0.05], count=64)
        # image paths have Euclidean length 0.2
        rho_star = DensityField.constant(5.0, Box(np.array([-0.101, -0.051]), np.array([0.101, 0.051])))
        report = check_inverse_inequality(f, fam, rho_star, tol=0.05, seed=7, element="euclidean", samples=100_000)
        assert report.admissible
        assert report.passed
        # ∫ K_O ρ_*² over the image box: 2 · 25 · 0.02
        assert report.rhs == pytest.approx(1.0, rel=0.03)


class TestFmo:
    def test_constant_has_zero_oscillation(self, p0):
        report = fmo_functional(lambda X: np.full(len(X), 3.0), p0, EPS, seed=1, samples=2_000)
        assert all(row.value == pytest.approx(0.0, abs=1e-12) for row in report.rows)
        assert report.bounded

    def test_log_singularity_is_bounded(self, p0):
        def log_e_over_r(X):
            return np.log(math.e / np.maximum(np.linalg.norm(X, axis=1), 1e-300))

        report = fmo_functional(log_e_over_r, p0, EPS, seed=2, samples=20_000)
        assert report.bounded
        assert 0.0 < report.tail_max < 1.0
        assert not report.caveats

    def test_power_singularity_grows(self, p0):
        def inverse_r(X):
            return 1.0 / np.maximum(np.linalg.norm(X, axis=1), 1e-12)

        report = fmo_functional(inverse_r, p0, EPS, seed=2, samples=20_000)
        assert not report.bounded
        assert report.rows[-1].value > 4.0 * report.rows[-4].value
        values = [row.value for row in report.rows]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_large_ball_caveat(self, p0):
        report = fmo_functional(lambda X: X[:, 0], p0, [0.6, 0.3], samples=500)
        assert [c.kind for c in report.caveats] == ["outside_normal_neighborhood"]

    def test_levels_must_decrease(self, p0):
        with pytest.raises(ValueError):
            fmo_functional(lambda X: X[:, 0], p0, [0.1, 0.2])
        with pytest.raises(ValueError):
            fmo_functional(lambda X: X[:, 0], p0, [0.1, 0.0])


class TestEquicontinuity:
    def test_isometries(self, cyclic_group, p0):
        family = [identity_map(cyclic_group), moebius_induced(cyclic_group, rotation_2d(math.pi))]
        radii = [0.32, 0.16, 0.08]
        table = equicontinuity_probe(family, p0, radii, samples=64, max_word_len=4)
        np.testing.assert_allclose([r.sup_omega for r in table.rows], radii, rtol=1e-6)
        assert table.decreasing and table.vanishing

    def test_fm_family(self, cyclic_group, p0):
        family = fm_family_members(cyclic_group, p0, R0, 2.0, range(1, 51), max_word_len=4)
        table = equicontinuity_probe(family, p0, [0.32, 0.16, 0.08, 0.04, 0.02], samples=64, max_word_len=4)
        assert table.decreasing
        assert table.vanishing
        assert all(row.sup_omega <= row.radius + 1e-9 for row in table.rows)
        assert len(table.rows[0].per_map) == 50

    def test_jump_does_not_vanish(self, cyclic_group, p0):
        f = jump_map(cyclic_group, Point.origin(2), [0.1, 0.0], 0.3, max_word_len=4)
        table = equicontinuity_probe([f], p0, [0.08, 0.04, 0.02, 0.01], samples=64, max_word_len=4)
        assert not table.vanishing
        assert table.rows[-1].sup_omega > 0.19

    def test_validation(self, cyclic_group, p0):
        with pytest.raises(ValueError):
            equicontinuity_probe([identity_map(cyclic_group)], p0, [0.1, 0.2])
        with pytest.raises(ValueError):
            equicontinuity_probe([], p0, [0.2, 0.1])
