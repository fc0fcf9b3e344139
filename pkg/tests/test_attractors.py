import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unfolding_atlas import (AttractorCensus, basin_census, cascade_in_slice, classify_attractor,
                             collet_eckmann_proxy, henon_family, iterate_orbit, linear_family,
                             lyapunov)
from unfolding_atlas import _kernels as K
from unfolding_atlas.attractors import (census_jsonl, clusters_disjoint, detect_period,
                                        lyapunov_with_error, seed_grid)
from unfolding_atlas.exceptions import EscapeError

HENON = henon_family()
LIN = linear_family()


def _tail(p, z0=(0.0, 0.0), transient=400_000, window=16_384):
    tails, esc = K.tails_many(HENON.kind_code, HENON.coef(p), np.array([z0], float),
                              transient, window, 1e6)
    assert not esc[0]
    return tails[0]


def test_linear_exponents_are_log_two():
    assert lyapunov(LIN, [0.5, 2.0], [0.0, 0.0], 1000) == pytest.approx(math.log(2), abs=1e-12)
    ce = collet_eckmann_proxy(LIN, [0.5, 2.0], [1e-8, 1e-8], [0.0, 1.0], 40)
    assert ce == pytest.approx(math.log(2), abs=1e-12)


@settings(max_examples=10)
@given(a=st.floats(-0.7, 0.2))
def test_sink_exponent_is_fixed_point_multiplier(a):
    # b = 0: the attracting fixed point x = (1 - sqrt(1 - 4a))/2 has multiplier 2x
    x = (1 - math.sqrt(1 - 4 * a)) / 2
    # seeded off x = 0, where DF^2 vanishes and the exponent is -inf
    lam = lyapunov(HENON, [a, 0.0], [x + 0.05, x], 20_000)
    if abs(x) > 1e-3:
        assert lam == pytest.approx(math.log(abs(2 * x)), abs=1e-3)
    assert lam < 0
    assert lyapunov(HENON, [a, 0.0], [0.0, 0.0], 100) == -math.inf
    assert collet_eckmann_proxy(HENON, [a, 0.0], [x + 0.01, x], [1.0, 0.0], 200) < 0


def test_escape_raises():
    with pytest.raises(EscapeError):
        lyapunov(HENON, [1.0, 0.0], [3.0, 0.0], 1000)


def test_canonical_strange_exponent_with_error_bar():
    mean, se = lyapunov_with_error(HENON, [-1.4, -0.3], [0.1, 0.1], 10**6)
    assert abs(mean - 0.419) < 0.02
    assert 0 < se < 0.01


def test_detect_period():
    cyc = np.tile([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], (50, 1))
    assert detect_period(cyc, 10, 1e-12) == 3
    assert detect_period(np.random.default_rng(0).random((300, 2)), 10, 1e-12) is None


def test_period_three_sink():
    w = iterate_orbit(HENON, [-1.76, 0.0], [0, 0], 20_000).points[-4096:]
    rec = classify_attractor(HENON, [-1.76, 0.0], w)
    assert rec.label == "sink(3)"
    assert rec.diagnostics["spectral_radius"] < 1
    assert rec.lyapunov_top < 0


def test_cascade_proxy_depth():
    rec = cascade_in_slice(HENON, [0, 0], [1, 0], (-0.5, -1.45), K_depth=7, seed=[0, 0])
    f = rec.flip_params
    a6 = 0.5 * (f[5] + f[6])
    out = classify_attractor(HENON, [a6, 0.0], _tail([a6, 0.0]))
    assert out.label == "pd_cascade(6)"


def test_chebyshev_slice_is_strange():
    w = iterate_orbit(HENON, [-2.0, 0.0], [0.3, 0.0], 4096).points[100:]
    rec = classify_attractor(HENON, [-2.0, 0.0], w)
    assert rec.kind == "strange"
    assert rec.lyapunov_top == pytest.approx(math.log(2), abs=1e-3)
    assert rec.ce_kappa > 0


def test_superattracting_census():
    recs, info = basin_census(HENON, [0.0, 0.0], seed_grid((-1, 1, -1, 1), 10, 10))
    assert [r.label for r in recs] == ["sink(1)"]
    assert np.allclose(recs[0].clusters, [[0.0, 0.0]], atol=1e-12)
    assert recs[0].basin_fraction + info["escape_fraction"] == pytest.approx(1.0)
    assert not info["partial"]


def test_census_budget_flags_partial():
    seeds = seed_grid((-1, 1, -1, 1), 10, 10)
    recs, info = basin_census(HENON, [0.0, 0.0], seeds, budget=20 * (10_000 + 4096))
    assert info["partial"]
    assert info["unprocessed_fraction"] == pytest.approx(0.8)


@pytest.fixture(scope="module")
def coexisting():
    return basin_census(HENON, [-1.0, 0.5], seed_grid((-2.5, 2.5, -2.5, 2.5), 32, 32))


def test_coexisting_sinks(coexisting):
    recs, info = coexisting
    labels = sorted(r.label for r in recs)
    assert labels == ["sink(1)", "sink(3)"]
    total = sum(r.basin_fraction for r in recs) + info["escape_fraction"]
    assert total == pytest.approx(1.0)
    assert all(r.basin_fraction > 0 for r in recs)
    assert clusters_disjoint(recs[0], recs[1]) > 0.5
    lines = census_jsonl(recs).splitlines()
    assert {json.loads(s)["kind"] for s in lines} == {"sink"}


def test_census_estimator_predicts_basins(coexisting):
    recs, info = coexisting
    seeds = seed_grid((-2.5, 2.5, -2.5, 2.5), 32, 32)
    est = AttractorCensus(family=HENON, params=[-1.0, 0.5]).fit(seeds)
    assert len(est.records_) == len(recs)
    pick = np.flatnonzero(est.labels_ >= 0)[::97]
    assert np.array_equal(est.predict(seeds[pick]), est.labels_[pick])
    assert est.predict([[50.0, 50.0]])[0] == -1
