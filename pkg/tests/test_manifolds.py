import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfolding_atlas import (ManifoldArc, ManifoldPairSource, UnfoldingModel,
                             continue_tangency_locus, detect_tangency, find_homoclinic_intersections,
                             find_periodic_point, grow_manifold, henon_family, unfolding_speed)
from unfolding_atlas.exceptions import BracketError, DegenerateTangencyError
from unfolding_atlas.manifolds import ExplicitCurves, clip_pieces

HENON = henon_family()
P = [-1.4, -0.3]


@pytest.fixture(scope="module")
def henon_arcs():
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    U = grow_manifold(HENON, P, s, "unstable", 6.0)
    S = grow_manifold(HENON, P, s, "stable", 6.0)
    return s, U, S


def _invariance_error(arc, image_fn, margin=2.0):
    # the last level of each branch is cut by the budget, so skip nodes whose image lies past it
    tops = [np.max(np.abs(arc.tau[np.sign(arc.tau) == sg])) for sg in (1, -1)
            if np.any(np.sign(arc.tau) == sg)]
    sel = np.isfinite(arc.tau) & (np.abs(arc.tau) < min(tops) - margin)
    return float(np.max(arc.distance(image_fn(arc.nodes[sel]))))


def test_outer_saddle_unstable_arc_is_invariant():
    p = [-1.0, 0.3]
    s = find_periodic_point(HENON, p, 1, [1.8, 1.8])
    U = grow_manifold(HENON, p, s, "unstable", 10.0)
    assert _invariance_error(U, lambda z: HENON.eval(p, z)) < 1e-6
    # the bounded branch folds back: its x-direction reverses
    dx = np.diff(U.nodes[U.tau < 0][:, 0])
    assert np.any(dx > 0) and np.any(dx < 0)


def test_negative_multiplier_arcs_within_chord_tolerance(henon_arcs):
    _, U, S = henon_arcs
    assert _invariance_error(U, lambda z: HENON.eval(P, z)) < 10 * 1e-2 ** 2
    assert _invariance_error(S, lambda z: HENON.inverse_many(P, z)) < 10 * 1e-2 ** 2


def test_linear_unstable_arc_is_the_axis():
    from unfolding_atlas import linear_family
    lin = linear_family()
    s = find_periodic_point(lin, [0.5, 2.0], 1, [0.0, 0.0])
    U = grow_manifold(lin, [0.5, 2.0], s, "unstable", 3.0)
    assert np.max(np.abs(U.nodes[:, 0])) < 1e-15
    assert U.length == pytest.approx(6.0, rel=0.2)


def test_refinement_caps_hold(henon_arcs):
    _, U, S = henon_arcs
    for arc in (U, S):
        assert arc.max_angle <= 0.2 + 1e-12
        assert arc.max_segment <= 1e-2 + 1e-12
        assert arc.length == pytest.approx(arc.s[-1])


def test_arclength_budget_is_respected(henon_arcs):
    _, U, _ = henon_arcs
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    small = grow_manifold(HENON, P, s, "unstable", 2.0)
    assert small.length < U.length
    assert small.length >= 2.0


def test_angle_cap_controls_density():
    p = [-1.0, 0.3]
    s = find_periodic_point(HENON, p, 1, [1.8, 1.8])
    fine = grow_manifold(HENON, p, s, "unstable", 10.0, angle_cap=0.1, seg_cap=10.0)
    coarse = grow_manifold(HENON, p, s, "unstable", 10.0, angle_cap=0.2, seg_cap=10.0)
    assert fine.max_angle <= 0.1 + 1e-12 and coarse.max_angle <= 0.2 + 1e-12
    ratio = coarse.nodes.shape[0] / fine.nodes.shape[0]
    assert 0.5 / 3 <= ratio <= 0.5 * 3


def test_transversal_homoclinic_points(henon_arcs):
    s, U, S = henon_arcs
    X = find_homoclinic_intersections(U, S)
    assert len(X) >= 4
    polished = [h for h in X if h.polished]
    assert polished
    for h in polished:
        assert h.angle > 1e-9
        assert np.allclose(U.evaluator(h.tau_u)[0], h.point, atol=1e-9)
        assert np.allclose(S.evaluator(h.tau_s)[0], h.point, atol=1e-9)
        # polished points sit on the true curves, the polylines carry chord error
        assert U.distance(h.point[None, :])[0] < 1e-4
    assert min(h.angle for h in X) > 1e-3


def test_crossing_lines_and_overlap():
    A = ManifoldArc.from_polyline([[-1, 0], [1, 0]])
    B = ManifoldArc.from_polyline([[0, -1], [0, 1]])
    X = find_homoclinic_intersections(A, B, polish=False)
    assert len(X) == 1
    assert np.allclose(X[0].point, [0, 0])
    assert X[0].angle == pytest.approx(math.pi / 2)
    C = ManifoldArc.from_polyline([[-0.5, 0], [0.5, 0]])
    Y = find_homoclinic_intersections(A, C, polish=False)
    assert Y.degenerate_overlap and len(Y) == 0


def test_counts_stable_under_refinement():
    s = find_periodic_point(HENON, P, 1, [-0.9, -0.9])
    counts = []
    for cap in (0.2, 0.1):
        U = grow_manifold(HENON, P, s, "unstable", 4.0, angle_cap=cap)
        S = grow_manifold(HENON, P, s, "stable", 4.0, angle_cap=cap)
        counts.append(len(find_homoclinic_intersections(U, S, polish=False)))
    assert counts[0] == counts[1] > 0


def test_explicit_curves_tangency():
    src = ExplicitCurves(lambda x, t, a: x ** 2 + a + 0.1 * t, lambda x, t, a: 0 * x,
                         x_range=(-1, 1), samples=801)
    ev = detect_tangency(src, 0.5, (-0.2, 0.1))
    assert ev.a == pytest.approx(-0.05, abs=1e-10)
    assert abs(ev.quad_coeff) == pytest.approx(1.0, rel=1e-6)
    assert abs(ev.unfolding_speed) == pytest.approx(1.0, rel=1e-6)
    assert np.allclose(ev.q1, [0.0, 0.0], atol=1e-6)


@pytest.mark.parametrize("k, speed", [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0)])
def test_explicit_quad_and_speed(k, speed):
    src = ExplicitCurves(lambda x, t, a: k * x ** 2 + speed * a, lambda x, t, a: 0 * x,
                         samples=801)
    ev = detect_tangency(src, 0.0, (-0.2, 0.2))
    assert abs(ev.a) < 1e-10
    assert abs(ev.quad_coeff) == pytest.approx(k, rel=1e-6)
    assert abs(ev.unfolding_speed) == pytest.approx(speed, rel=1e-6)


def test_quad_coeff_covariant_under_rescaling():
    f = lambda x, t, a: 1.5 * x ** 2 + a  # noqa: E731
    base = detect_tangency(ExplicitCurves(f, lambda x, t, a: 0 * x, samples=801), 0.0, (-1, 1))
    for s_ in (0.5, 4.0):
        ev = detect_tangency(ExplicitCurves(f, lambda x, t, a: 0 * x, samples=801, scale=1 / s_),
                             0.0, (-1, 1))
        assert abs(ev.quad_coeff) == pytest.approx(abs(base.quad_coeff) / s_, rel=1e-6)


def test_parabolic_locus():
    src = ExplicitCurves(lambda x, t, a: x ** 2 + a + t ** 2, lambda x, t, a: 0 * x, samples=801)
    seed = detect_tangency(src, 0.0, (-0.5, 0.5))
    curve = continue_tangency_locus(src, np.linspace(-0.3, 0.3, 7), seed)
    assert np.allclose(curve.a, -curve.t ** 2, atol=1e-6)


def test_explicit_cubic_contact_is_degenerate():
    src = ExplicitCurves(lambda x, t, a: x ** 4 + a, lambda x, t, a: 0 * x, samples=801)
    with pytest.raises(DegenerateTangencyError):
        detect_tangency(src, 0.0, (-0.2, 0.1), check_counts=False)


def test_bracket_without_tangency():
    src = ExplicitCurves(lambda x, t, a: x ** 2 + a, lambda x, t, a: 0 * x)
    with pytest.raises(BracketError):
        detect_tangency(src, 0.0, (0.1, 0.3))


@pytest.fixture(scope="module")
def model_source():
    m = UnfoldingModel()
    return m, ManifoldPairSource(m, [0, 0], window=(1.0, 3.0, -0.5, 0.5), budget_u=5.0,
                                 budget_s=5.0, branches_u="+", branches_s="+")


def test_model_primary_tangency(model_source):
    m, src = model_source
    ev = detect_tangency(src, 0.0, (-0.05, 0.05), family=m)
    assert abs(ev.a) < 1e-10
    assert np.allclose(ev.q1, [2.0, 0.0], atol=1e-6)
    # the fold is y = a + kappa Y^2 on the unstable side, and c = -1 makes x ~ 2 - Y
    assert abs(ev.quad_coeff) == pytest.approx(2.0, rel=1e-3)
    assert abs(ev.unfolding_speed) == pytest.approx(1.0, rel=1e-3)
    assert ev.param["t"] == 0.0
    ev_s = detect_tangency(src, 0.0, (-0.05, 0.05), moving="S")
    assert abs(ev_s.a - ev.a) < 1e-9
    assert abs(unfolding_speed(ev)) == pytest.approx(1.0, rel=1e-3)


def test_model_tangency_locus_follows_tilt():
    m = UnfoldingModel(theta=0.2)
    src = ManifoldPairSource(m, [0, 0], window=(1.0, 3.0, -0.5, 0.5), budget_u=5.0,
                             budget_s=5.0, branches_u="+", branches_s="+")
    seed = detect_tangency(src, 0.0, (-0.05, 0.05), family=m)
    curve = continue_tangency_locus(src, np.linspace(-0.1, 0.1, 5), seed)
    assert not curve.gaps
    assert np.allclose(curve.a, -0.2 * curve.t, atol=1e-9)
    assert "t,a,quad_coeff,speed" in curve.to_csv()


def test_henon_tangency_closed_form_at_zero_b():
    # b = 0: W^s of the saddle at x = beta contains x = -beta' with beta'^2 = beta - a,
    # the unstable fold x = a + x^2 meets it when a = -2
    src = ManifoldPairSource(HENON, [2, 2], (-2.4, -1.6, -0.6, 0.6), budget_u=12, budget_s=12)
    ev = detect_tangency(src, 0.0, (-2.05, -1.95), family=HENON)
    assert ev.a == pytest.approx(-2.0, abs=1e-12)
    assert np.allclose(ev.q1, [-2.0, 0.0], atol=1e-6)
    assert abs(ev.quad_coeff) == pytest.approx(1.0, rel=1e-8)
    assert abs(ev.unfolding_speed) == pytest.approx(2.0 / 3.0, rel=1e-6)
    ev_s = detect_tangency(src, 0.0, (-2.05, -1.95), moving="S")
    assert abs(ev_s.a - ev.a) < 1e-9
    s1 = unfolding_speed(ev, h_step=1e-4)
    s2 = unfolding_speed(ev, h_step=5e-5)
    assert abs(s1 - s2) < 0.05 * abs(s2)


@settings(max_examples=25)
@given(x0=st.floats(-1, 1), w=st.floats(0.1, 1.0))
def test_clip_keeps_only_window_nodes(x0, w):
    P_ = np.column_stack([np.linspace(-3, 3, 301), np.sin(np.linspace(-3, 3, 301))])
    win = (x0 - w, x0 + w, -0.5, 0.5)
    for piece in clip_pieces([P_], win):
        assert np.all((piece[:, 0] >= win[0]) & (piece[:, 0] <= win[1]))
        assert np.all(np.abs(piece[:, 1]) <= 0.5)


def test_polyline_arc_distance():
    arc = ManifoldArc.from_polyline([[0, 0], [1, 0], [1, 1]])
    assert arc.length == pytest.approx(2.0)
    d = arc.distance(np.array([[0.5, 0.5], [2.0, 0.5]]))
    assert np.allclose(d, [0.5, 1.0])
    assert arc.max_angle == pytest.approx(math.pi / 2)
