import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfolding_atlas import (PolynomialFamily, SaddleLinearizer, check_nonresonance,
                             find_periodic_point,
                             henon_family, linear_family, linearize)
from unfolding_atlas.exceptions import NearResonanceError, RadiusTooLargeError, SpectralDegeneracyError
from unfolding_atlas.saddle import conjugacy_residual

HENON = henon_family()
P = [-1.4, -0.3]


def test_golden_saddle_of_quadratic_slice():
    s = find_periodic_point(HENON, [-1.0, 0.0], 1, [1.5, 1.5])
    phi = (1 + math.sqrt(5)) / 2
    assert s.kind == "saddle"
    assert np.allclose(s.location, [phi, phi], atol=1e-15)
    assert s.mu == pytest.approx(2 * phi, rel=1e-15)
    assert s.lam == 0.0


@settings(max_examples=30)
@given(a=st.floats(-1.8, -0.9), b=st.floats(-0.5, 0.5).filter(lambda v: abs(v) > 1e-3))
def test_henon_fixed_point_matches_closed_form(a, b):
    # x^2 - (1 + b) x + a = 0, the root with the larger x
    x = ((1 + b) + math.sqrt((1 + b) ** 2 - 4 * a)) / 2
    s = find_periodic_point(HENON, [a, b], 1, [x + 0.01, x - 0.01])
    assert np.allclose(s.location, [x, x], atol=1e-12)
    tr, det = 2 * x, b
    assert float(s.lam) * float(s.mu) == pytest.approx(det, abs=1e-12)
    assert float(s.lam) + float(s.mu) == pytest.approx(tr, abs=1e-12)


def test_period_two_orbit():
    s = find_periodic_point(HENON, P, 2, [0.97, -0.57])
    assert s.period == 2
    z = s.orbit
    assert np.allclose(HENON.eval(P, z[0]), z[1], atol=1e-12)
    assert np.allclose(HENON.eval(P, z[1]), z[0], atol=1e-12)


def test_dissipative_flag_uses_three_powers_of_mu():
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    assert s.dissipative3 == (abs(s.lam) * abs(s.mu) ** 3 < 1)


def test_literal_nonresonance_scan():
    # for a real saddle lam = mu^k and mu = lam^k cannot hold, so the scan passes
    s = find_periodic_point(linear_family(), [0.25, 2.0], 1, [0.0, 0.0])
    assert check_nonresonance(s, 10) == (True, None)
    s.mu = 1.0
    with pytest.raises(SpectralDegeneracyError):
        check_nonresonance(s, 10)


def test_sink_is_not_linearized():
    s = find_periodic_point(HENON, [-0.3, 0.0], 1, [-0.3, -0.3])
    assert s.kind != "saddle"
    with pytest.raises(SpectralDegeneracyError):
        linearize(HENON, [-0.3, 0.0], s)


def test_resonant_saddle_raises_small_divisor():
    # lam mu^3 = mu, and the x y^3 term of the second component hits it
    fam = PolynomialFamily({"x": {"x": 0.25}, "y": {"y": 2.0, "x y^3": 1.0}}, ("s",), degree=4)
    s = find_periodic_point(fam, [0.0], 1, [0.0, 0.0])
    linearize(fam, [0.0], s, degree=3)
    with pytest.raises(NearResonanceError):
        linearize(fam, [0.0], s, degree=4)


@pytest.mark.parametrize("degree", [2, 3, 4])
def test_linearization_residual_order(degree):
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    chart = linearize(HENON, P, s, degree=degree, radius=0.04, residual_cap=1.0)
    radii = np.geomspace(0.005, 0.04, 6)
    res = [conjugacy_residual(HENON, P, s, chart, r) for r in radii]
    slope = np.polyfit(np.log(radii), np.log(res), 1)[0]
    assert abs(slope - (degree + 1)) < 0.5


def test_radius_cap():
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    with pytest.raises(RadiusTooLargeError):
        linearize(HENON, P, s, degree=2, radius=0.5, residual_cap=1e-8)


def test_chart_conjugates_to_diagonal():
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    chart = linearize(HENON, P, s, degree=5, radius=0.02)
    rng = np.random.default_rng(3)
    z = s.location + 0.01 * rng.uniform(-1, 1, (50, 2))
    lhs = chart.forward(HENON.eval(P, z))
    rhs = chart.forward(z) * np.array([chart.lam, chart.mu])
    assert np.max(np.abs(lhs - rhs)) < 1e-9
    assert chart.inverse_residual < 1e-10
    assert json.loads(chart.to_json())["degree"] == 5


def test_linearizer_estimator_round_trip():
    est = SaddleLinearizer(family=HENON, params=P, seed=[-0.9, -0.9], degree=4, radius=0.02)
    est.fit()
    z = est.saddle_.location + np.array([[0.004, -0.003], [-0.002, 0.001]])
    back = est.inverse_transform(est.transform(z))
    assert np.allclose(back, z, atol=1e-9)
    assert est.get_params()["degree"] == 4


def test_small_b_continuation_keeps_determinant():
    s = find_periodic_point(HENON, [-1.0, 0.05], 1, [1.62, 1.62])
    assert float(s.lam) * float(s.mu) == pytest.approx(0.05, abs=1e-10)


def test_linear_family_chart_is_identity():
    lin = linear_family()
    s = find_periodic_point(lin, [0.5, 2.0], 1, [0.1, 0.1])
    assert np.allclose(s.location, 0.0) and s.lam == 0.5 and s.mu == 2.0
    for degree in (2, 4):
        chart = linearize(lin, [0.5, 2.0], s, degree=degree, radius=0.5)
        assert chart.residual_bound == 0.0


def test_degree_sweep_decreases_residual():
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    res = [conjugacy_residual(HENON, P, s, linearize(HENON, P, s, degree=D, radius=0.02,
                                                     residual_cap=1.0), 0.02) for D in range(2, 7)]
    assert np.all(np.diff(res) < 0)


def test_quadratic_chart_of_golden_saddle():
    p = [-1.0, 0.0]
    s = find_periodic_point(HENON, p, 1, [1.6, 1.6])
    chart = linearize(HENON, p, s, degree=2, radius=0.05, residual_cap=1.0)
    r05 = conjugacy_residual(HENON, p, s, chart, 0.05)
    r025 = conjugacy_residual(HENON, p, s, chart, 0.025)
    assert r025 < 0.5 ** 3 * 1.05 * r05
    assert r05 < 1e-5
