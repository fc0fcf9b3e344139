import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfolding_atlas import (ReturnMapNormalizer, UnfoldingModel, build_strip,
                             find_critical_point, find_periodic_point, linear_family,
                             model_transit, scaling_probe, strong_sink, strong_sink_locus)
from unfolding_atlas import strip as S
from unfolding_atlas.exceptions import ProbeError, TransitError
from unfolding_atlas.manifolds import TangencyEvent
from unfolding_atlas.saddle import monodromy

MODEL = UnfoldingModel()
TR = model_transit(MODEL)
MU = 2.5

# strong sink parameter sa_n(0) of the default model, frozen from the closed form in
# _sink_oracle below (trace of diag(lam^n, mu^n) followed by the fold set to zero)
SA_FROZEN = {
    3: 0.06406396929591948,
    4: 0.02560255979357195,
    6: 0.004096004095991419,
    8: 0.0006553600065535997,
    10: 0.00010485760001048577,
    12: 1.6777216000016778e-05,
}


def _sink_oracle(n, t=0.0):
    lam, kap, kap3, c, c2, d, e = 0.04, 2.0, 0.5, -1.0, 0.2, 0.5, -0.5
    L, M = lam ** n, (2.5 + 0.5 * t) ** n
    r = np.roots([3 * kap3 * M, 2 * kap * M, d * L])
    Y = r[np.argmin(abs(r))].real
    x0 = (2 + c * Y + c2 * Y ** 2) / (1 - d * L)
    y0 = (1 + Y) / M
    return y0 - kap * Y ** 2 - kap3 * Y ** 3 - e * L * x0, np.array([x0, y0])


@pytest.fixture(scope="module")
def strips():
    out = {}
    for n in range(4, 11):
        loc = strong_sink_locus(MODEL, n, [0.0], TR)
        out[n] = build_strip(MODEL, loc, TR)
    return out


def test_frozen_values_match_oracle():
    for n, a in SA_FROZEN.items():
        assert _sink_oracle(n)[0] == pytest.approx(a, rel=1e-14)


@pytest.mark.parametrize("n", sorted(SA_FROZEN))
def test_strong_sink_matches_frozen_oracle(n):
    sa, orb, res = strong_sink(MODEL, n, 0.0, TR)
    assert sa == pytest.approx(SA_FROZEN[n], rel=1e-9, abs=1e-15)
    assert np.allclose(orb[0], _sink_oracle(n)[1], atol=1e-8)
    assert res < 1e-9


@pytest.mark.parametrize("t", [-0.3, 0.5])
def test_strong_sink_off_center(t):
    sa, _, _ = strong_sink(MODEL, 6, t, TR)
    assert sa == pytest.approx(_sink_oracle(6, t)[0], rel=1e-9)


def test_trace_zero_spectral_identity():
    n = 6
    sa, orb, _ = strong_sink(MODEL, n, 0.0, TR)
    M = monodromy(MODEL, [0.0, sa], orb)
    assert abs(np.trace(M)) < 1e-9 * np.max(np.abs(M))
    rho = np.max(np.abs(np.linalg.eigvals(M)))
    # with det < 0 the eigenvalues are real and move off sqrt|det| by at most |tr|/2
    assert abs(rho - math.sqrt(abs(np.linalg.det(M)))) <= abs(np.trace(M)) / 2 + 1e-12
    assert rho < 1


def test_consecutive_loci_shrink_like_one_over_mu():
    sa = [strong_sink(MODEL, n, 0.0, TR)[0] for n in range(4, 10)]
    gaps = np.abs(np.diff(sa))
    assert np.allclose(gaps[1:] / gaps[:-1], 1 / MU, rtol=0.05)


def test_locus_records_samples_and_skips():
    loc = strong_sink_locus(MODEL, 5, [-0.2, 0.0, 0.2], TR)
    assert [s[0] for s in loc.samples] == [-0.2, 0.0, 0.2]
    assert loc.sa(0.1) == pytest.approx(0.5 * (loc.samples[1][1] + loc.samples[2][1]))
    assert json.loads(json.dumps(loc.to_dict()))["n"] == 5


def test_transit_length_of_model_variants():
    ev = TangencyEvent(param=[0, 0], q1=np.array([2.0, 0.0]), quad_coeff=2.0, unfolding_speed=1.0)
    for N in (1, 3):
        m = UnfoldingModel(N=N)
        s = find_periodic_point(m, [0, 0], 1, [0, 0])
        assert S.detect_transit_length(m, [0, 0], ev, s, r_loc=1.5) == N
        # stable under a finer sampling of the local segment
        assert S.detect_transit_length(m, [0, 0], ev, s, r_loc=1.5, samples=800) == N


def test_linear_map_has_no_transit():
    lin = linear_family()
    s = find_periodic_point(lin, [0.5, 2.0], 1, [0, 0])
    ev = TangencyEvent(param=[0.5, 2.0], q1=np.array([2.0, 0.0]), quad_coeff=1.0, unfolding_speed=1.0)
    with pytest.raises(TransitError):
        S.detect_transit_length(lin, [0.5, 2.0], ev, s, max_N=20)


def test_strip_width_scaling(strips):
    w = [strips[n].samples[0].width for n in sorted(strips)]
    ratios = np.array(w[1:]) / np.array(w[:-1])
    assert np.all(np.abs(ratios * MU ** 2 - 1) < 0.15)
    assert "t,sa_n,halfwidth" in strips[6].to_csv()


def test_nu_vanishes_at_strong_sink(strips):
    for n, st_ in strips.items():
        s = st_.samples[0]
        d = S._Normalizer(MODEL, TR, n, 0.0)(s.sa, s.c_seed)
        assert abs(d.nu) < 1e-6 * abs(d.rescale)
        assert np.allclose(d.c, d.v, atol=1e-10)
        assert np.allclose(d.c, s.orbit[0], atol=1e-10)


def test_edge_of_strip_escapes(strips):
    s = strips[6].samples[0]
    norm = S._Normalizer(MODEL, TR, 6, 0.0)
    assert S.escapes_normalized(norm(s.a_lo, s.c_seed))
    assert not S.escapes_normalized(norm(s.sa, s.c_seed))


def test_nu_is_monotone_across_the_strip(strips):
    s = strips[7].samples[0]
    norm = S._Normalizer(MODEL, TR, 7, 0.0)
    nus = [norm(a, s.c_seed).nu for a in np.linspace(s.a_lo, s.a_hi, 9)]
    assert np.all(np.diff(nus) > 0) or np.all(np.diff(nus) < 0)


def test_straighten_identities(strips):
    n = 6
    s = strips[n].samples[0]
    pv = [0.0, s.sa]
    p = s.orbit[0]
    assert np.allclose(S.straighten(MODEL, pv, n, 1, p), [p[0], p[0]], atol=1e-12)
    rng = np.random.default_rng(11)
    for _ in range(100):
        z = p + rng.uniform(-1, 1, 2) * np.array([0.15, 0.15 * MU ** (-n)])
        w = S.straighten(MODEL, pv, n, 1, z)
        assert w[1] == z[0]
        back = S.straighten_inverse(MODEL, pv, n, 1, w, p[1])
        assert np.allclose(back, z, atol=1e-8)


def test_box_membership(strips):
    ext = []
    ns = sorted(strips)
    for n in ns:
        s = strips[n].samples[0]
        rep = S.box_membership(MODEL, [0.0, s.sa], n, 1, s.orbit[0], 2.0, 0.2)
        assert rep.inside
        ext.append(rep.extent)
    slope = np.polyfit(ns, np.log(ext), 1)[0]
    assert abs(slope + math.log(MU)) < 0.1 * math.log(MU)
    far = S.box_membership(MODEL, [0.0, 1e-3], 5, 1, [5.0, 0.0], 2.0, 0.2)
    assert not far.inside


def test_critical_point_geometry(strips):
    ns = sorted(strips)
    gaps = []
    for n in ns:
        s = strips[n].samples[0]
        seed = s.orbit[0] + np.array([0.3 * MU ** -n, 0.3 * MU ** (-2 * n)])
        worst = 0.0
        for a in np.linspace(s.a_lo, s.a_hi, 5):
            cp = find_critical_point(MODEL, [0.0, a], n, 1, seed, mu=MU)
            assert cp.phi_residual < 1e-10 and cp.steps <= 20
            assert abs(cp.v[0] - cp.c[0]) < 1e-10
            worst = max(worst, abs(cp.v[1] - cp.c[1]))
        gaps.append(worst)
    slope = np.polyfit(ns, np.log(gaps), 1)[0]
    assert abs(slope + 2 * math.log(MU)) < 0.15 * 2 * math.log(MU)


def test_critical_point_drift_in_a_is_bounded(strips):
    # a enters only the fold's y-output here, so dc_y/da vanishes; the n/mu^n rate is an upper bound
    for n in (5, 7, 9):
        s = strips[n].samples[0]
        h = 0.1 * s.halfwidth
        seed = s.orbit[0] + np.array([1e-3, 1e-3 * MU ** -n])
        cs = [find_critical_point(MODEL, [0.0, s.sa + sg * h], n, 1, seed, mu=MU, phi_tol=1e-13).c
              for sg in (1, -1)]
        assert abs(cs[0][1] - cs[1][1]) / (2 * h) < n / MU ** n


def test_raw_newton_needs_preconditioner():
    n = 10
    sa, orb, _ = strong_sink(MODEL, n, 0.0, TR)
    r = S.phi(MODEL, [0.0, sa], n, 1, orb[0] + np.array([1e-4, 1e-9]))
    assert abs(r[1]) > 1e6 * abs(r[0])


def test_normalized_map_structure(strips):
    eps = []
    ns = sorted(strips)
    for n in ns:
        s = strips[n].samples[0]
        d = S._Normalizer(MODEL, TR, n, 0.0)(s.sa, s.c_seed)
        k = d.grid.size // 2
        assert d.eps_grid[k, k] == 0.0
        assert d.grid[-1] - d.grid[0] >= 2.0
        assert d.containment_margin > 0 and d.quadratic_like
        assert d.modulus >= math.log(1.5) - 0.1
        X = np.linspace(-1, 1, 5)
        assert np.allclose(d.alpha_inv(d.alpha(X)), X, atol=1e-8)
        eps.append(d.eps_sup)
        x, y = 0.7, -0.4
        assert d.f(x, y) == pytest.approx(x * x + d.nu + d.eps(x, y), abs=1e-4)
        rep = json.loads(S.normalization_report(d))
        assert {"n", "N", "t", "a", "c", "v", "rescale", "nu", "eps_sup"} <= set(rep)
    ratios = np.array(eps[1:]) / np.array(eps[:-1])
    assert np.all((ratios * MU < 1.3) & (ratios * MU > 1 / 1.3))


def test_decoupled_fold_gives_y_independent_eps():
    # with d = e = 0 the fold ignores x, the model analogue of the b = 0 slice
    m0 = UnfoldingModel(d=0.0, e=0.0)
    loc = strong_sink_locus(m0, 6, [0.0], TR)
    sa, orb = loc.samples[0][1], loc.samples[0][3]
    d = S._Normalizer(m0, TR, 6, 0.0)(sa, orb[0])
    assert np.max(np.ptp(d.eps_grid, axis=1)) < 1e-8


def test_scaling_probe_rates():
    pr = scaling_probe(MODEL, 0.0, [4, 5, 6, 7, 8], TR)
    lm = math.log(MU)
    assert pr.log_mu == pytest.approx(lm)
    assert abs(pr.slope_a - 2 * lm) < 0.1 * 2 * lm
    assert abs(pr.slope_t - lm) < 0.1 * lm
    assert abs(pr.slope_width + 2 * lm) < 0.15 * 2 * lm
    dbeta = np.abs(pr.dnu_dbeta)
    assert dbeta.max() / dbeta.min() < 2.0
    assert json.loads(json.dumps(pr.to_dict()))["n_list"] == [4, 5, 6, 7, 8]
    with pytest.raises(ProbeError):
        scaling_probe(MODEL, 0.0, [4, 5], TR)


@settings(max_examples=8)
@given(t=st.floats(-0.4, 0.4), frac=st.floats(-0.9, 0.9))
def test_normalizer_estimator(t, frac):
    n = 5
    sa = _sink_oracle(n, t)[0]
    est = ReturnMapNormalizer(family=MODEL, transit=TR, n=n)
    X = np.array([[t, sa], [t, sa + frac * 0.3 * (2.5 + 0.5 * t) ** (-2 * n)]])
    out = est.fit_transform(X)
    assert out.shape == (2, 4)
    assert abs(out[0, 0]) < 1e-6 * abs(out[0, 2])
    assert np.all(np.abs(out[:, 2]) > 0)
    assert np.all(out[:, 3] > 0)
