import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfolding_atlas import (ParamPoint, PolynomialFamily, UnfoldingModel, cubic_henon_family,
                             henon_family, iterate_orbit, linear_family, load_family)
from unfolding_atlas.exceptions import ParameterShapeError
from unfolding_atlas.family import iterate, iterate_dd, orbit_jacobian

coord = st.floats(-2.0, 2.0, allow_nan=False)


def fd_jacobian(fam, p, z, h=1e-6):
    J = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        J[:, k] = (fam.eval(p, z + e) - fam.eval(p, z - e)) / (2 * h)
    return J


@given(a=coord, b=st.floats(-0.9, 0.9), x=coord, y=coord)
def test_henon_eval_matches_formula(a, b, x, y):
    h = henon_family()
    out = h.eval([a, b], [x, y])
    assert out[0] == pytest.approx(a + x * x - b * y, abs=1e-13)
    assert out[1] == x


@settings(max_examples=60)
@given(a=coord, b=st.floats(-0.9, 0.9), x=coord, y=coord)
def test_jacobian_matches_finite_differences(a, b, x, y):
    for fam, p in ((henon_family(), [a, b]), (cubic_henon_family(), [a, b, 0.1])):
        z = np.array([x, y])
        assert np.allclose(fam.jacobian(p, z), fd_jacobian(fam, p, z), atol=1e-7)


@settings(max_examples=60)
@given(t=st.floats(-0.5, 0.5), a=st.floats(-0.1, 0.1), x=st.floats(-0.9, 0.9),
       y=st.floats(0.8, 1.4))
def test_model_fold_jacobian_matches_finite_differences(t, a, x, y):
    m = UnfoldingModel()
    z = np.array([x, y])
    assert np.allclose(m.jacobian([t, a], z), fd_jacobian(m, [t, a], z, 1e-7), atol=1e-6)


@given(a=coord, b=st.floats(0.05, 0.9), x=coord, y=coord)
def test_henon_inverse_round_trip(a, b, x, y):
    h = henon_family()
    z = np.array([x, y])
    back = h.inverse([a, b], h.eval([a, b], z))
    assert np.allclose(back, z, atol=1e-10 / b)


def test_param_jet_is_derivative_in_parameters():
    h = henon_family()
    z = np.array([0.3, -0.7])
    jet = h.param_jet([-1.2, 0.4], z)
    assert np.allclose(jet[0], [1.0, 0.0])
    assert np.allclose(jet[1], [0.7, 0.0])


def test_model_regions_and_linear_part():
    m = UnfoldingModel()
    assert np.allclose(m.eval([0.0, 0.0], [0.5, 0.2]), [0.02, 0.5])
    assert m.mu([0.4, 0.0]) == pytest.approx(2.7)
    # fold: (0, 1) lands on the tangency point (q1x, a)
    assert np.allclose(m.eval([0.0, 0.01], [0.0, 1.0]), [2.0, 0.01])


def test_orbit_cocycle_reassembles_derivative():
    h = henon_family()
    p = [-1.4, -0.3]
    seg = iterate_orbit(h, p, [0.1, 0.1], 25)
    z, J = orbit_jacobian(h, p, [0.1, 0.1], 25)
    assert np.allclose(seg.points[-1], z)
    assert np.allclose(seg.derivative(), J, rtol=1e-10)
    assert seg.condition[-1] > 0


def test_extended_orbit_agrees_and_is_tighter():
    h = henon_family()
    p = [-1.4, -0.3]
    hi, lo = iterate_dd(h, p, [0.1, 0.1], 20)
    dbl = iterate(h, p, [0.1, 0.1], 20)
    assert np.allclose(hi, dbl, atol=1e-6)
    seg = iterate_orbit(h, p, [0.1, 0.1], 20, mode="extended")
    assert np.allclose(seg.points[-1], hi)
    assert seg.condition[-1] < iterate_orbit(h, p, [0.1, 0.1], 20).condition[-1]


def test_escape_is_reported():
    seg = iterate_orbit(henon_family(), [1.0, 0.0], [3.0, 0.0], 200)
    assert seg.escaped
    assert seg.escape_index is not None and seg.escape_index < 20


def test_param_point_names():
    pp = henon_family().point(-1.4, -0.3)
    assert pp["a"] == -1.4
    assert pp.replace(b=0.2)["b"] == 0.2
    assert pp.as_dict() == {"a": -1.4, "b": -0.3}
    with pytest.raises(ParameterShapeError):
        ParamPoint((1.0,), ("a", "b"))


def test_wrong_parameter_count_raises():
    with pytest.raises(ParameterShapeError):
        henon_family().eval([1.0], [0.0, 0.0])


def test_family_dict_round_trip():
    for fam in (henon_family(), linear_family(), cubic_henon_family(), UnfoldingModel(c2=0.1)):
        again = load_family(json.dumps(fam.to_dict()))
        z = np.array([0.3, 0.9])
        p = np.full(len(fam.param_names), 0.1)
        assert np.allclose(again.eval(p, z), fam.eval(p, z))


def test_user_table_family():
    fam = PolynomialFamily({"x": {"1": 0.5, "x^2": -1.0}, "y": {"x": 1.0}}, ("s",), kind="user-table")
    assert np.allclose(fam.eval([0.0], [2.0, 1.0]), [-3.5, 2.0])
    with pytest.raises(ValueError):
        PolynomialFamily({"x": {"x^3": 1.0}}, ("s",), degree=2)
