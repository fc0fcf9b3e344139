"""Period-doubling cascades along parameter slices and PD-curve assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .exceptions import (BracketError, CascadeStructureError, DegenerateTangencyError,
                         NoConvergenceError)
from .family import MapFamily, ParamPoint
from .saddle import monodromy, solve_periodic_orbit
from .validation import as_point, check_int

FEIGENBAUM_DELTA = 4.669201609102990


@dataclass
class CascadeRecord:
    base: np.ndarray
    direction: np.ndarray
    flip_params: list
    beta_inf: float
    delta_est: float
    deltas: list = field(default_factory=list)
    period0: int = 1
    truncated: bool = False
    reason: str = ""
    orbits: list = field(default_factory=list)

    @property
    def K_achieved(self) -> int:
        return len(self.flip_params) - 1

    def param_at(self, s: float) -> np.ndarray:
        return self.base + s * self.direction

    def to_dict(self) -> dict:
        return {"base": self.base.tolist(), "direction": self.direction.tolist(),
                "flip_params": [float(v) for v in self.flip_params],
                "beta_inf": float(self.beta_inf), "delta_est": float(self.delta_est),
                "deltas": [float(v) for v in self.deltas], "period0": self.period0,
                "K_achieved": self.K_achieved, "truncated": self.truncated,
                "reason": self.reason}


class _Slice:
    """Parameter slice s -> base + s * direction with warm-started cycles."""

    def __init__(self, family: MapFamily, base, direction):
        self.family = family
        self.base = np.asarray(family.params(base), dtype=np.float64)
        self.direction = np.asarray(direction, dtype=np.float64)
        if self.direction.shape != self.base.shape:
            raise ValueError("direction must match the parameter dimension")

    def p(self, s):
        return self.base + s * self.direction

    def cycle(self, s, guess, tol=1e-13):
        orb, res = solve_periodic_orbit(self.family, self.p(s), guess, tol=tol, max_iter=40)
        return orb

    def multiplier(self, s, orb):
        M = monodromy(self.family, self.p(s), orb)
        tr = M[0, 0] + M[1, 1]
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        disc = tr * tr - 4.0 * det
        if disc < 0:
            return tr / 2.0, True
        r = math.sqrt(disc)
        ev = ((tr + r) / 2.0, (tr - r) / 2.0)
        dom = ev[0] if abs(ev[0]) >= abs(ev[1]) else ev[1]
        return dom, False


def _attracting_cycle(sl: _Slice, s: float, start: np.ndarray, period: int,
                      n_iter: int) -> np.ndarray:
    fam = sl.family
    coef = fam.coef(sl.p(s))
    x, y = K.iterate_point(fam.kind_code, coef, start[0], start[1], period * n_iter)
    orb = np.empty((period, 2))
    orb[0] = (x, y)
    for k in range(1, period):
        orb[k] = K.step(fam.kind_code, coef, *orb[k - 1])
    return orb


def _minimal_period_ok(orb: np.ndarray, tol: float) -> bool:
    P = orb.shape[0]
    if P % 2:
        return True
    half = P // 2
    return float(np.max(np.abs(orb[:half] - orb[half:]))) > tol


def cascade_in_slice(family: MapFamily, base, direction, bracket, K_depth: int = 6,
                     period: int = 1, seed=None, settle: int = 2000,
                     xtol: float = 1e-14) -> CascadeRecord:
    """Locate flips of the period-2^k cycles along s in bracket, k = 0..K_depth.

    At ``bracket[0]`` a stable cycle of period ``period`` must exist; the
    cascade proceeds towards ``bracket[1]``.
    """
    K_depth = check_int(K_depth, "K", 0)
    period = check_int(period, "period", 1)
    sl = _Slice(family, base, direction)
    s0, s1 = float(bracket[0]), float(bracket[1])
    sgn = 1.0 if s1 > s0 else -1.0
    span = abs(s1 - s0)
    start = np.zeros(2) if seed is None else np.asarray(seed, dtype=np.float64)
    if start.ndim == 2:
        orb = start.copy()
        period = orb.shape[0]
    else:
        orb = _attracting_cycle(sl, s0, as_point(start), period, settle)
    try:
        orb = sl.cycle(s0, orb)
    except NoConvergenceError as exc:
        raise BracketError(f"no period-{period} cycle at bracket start") from exc
    m0, cplx = sl.multiplier(s0, orb)
    if not (-1.0 < m0 < 1.0) and not cplx:
        raise BracketError(f"cycle at bracket start is not stable (multiplier {m0:.4g})")
    flips: list[float] = []
    orbits = []
    truncated, reason = False, ""
    s_cur = s0
    step = span / 40.0
    for k in range(K_depth + 1):
        P = period * 2 ** k
        try:
            s_flip, orb_flip, orb_cur = _locate_flip(sl, s_cur, orb, step, sgn, s1, xtol)
        except (BracketError, NoConvergenceError) as exc:
            truncated, reason = True, f"flip {k}: {exc}"
            break
        flips.append(s_flip)
        orbits.append(orb_flip)
        if k == K_depth:
            break
        # expected gap to the next flip
        if len(flips) >= 2:
            gap = abs(flips[-1] - flips[-2]) / FEIGENBAUM_DELTA
        else:
            gap = max(abs(flips[-1] - s0), span / 20.0) / FEIGENBAUM_DELTA
        try:
            orb = _double_branch(sl, s_flip, orb_flip, gap, sgn, P)
        except NoConvergenceError as exc:
            truncated, reason = True, f"branch {k + 1}: {exc}"
            break
        s_cur = s_flip + sgn * 0.4 * gap
        step = gap / 8.0
    if len(flips) >= 2 and np.any(np.diff(flips) * sgn <= 0):
        raise CascadeStructureError(f"non-monotone flips {flips}")
    deltas = [(flips[i - 1] - flips[i]) / (flips[i] - flips[i + 1])
              for i in range(1, len(flips) - 1)]
    if deltas:
        d_est = deltas[-1]
        beta_inf = flips[-1] + (flips[-1] - flips[-2]) / (d_est - 1.0)
    elif len(flips) >= 2:
        d_est = float("nan")
        beta_inf = flips[-1] + (flips[-1] - flips[-2]) / (FEIGENBAUM_DELTA - 1.0)
    else:
        d_est = float("nan")
        beta_inf = float("nan")
    return CascadeRecord(sl.base, sl.direction, flips, float(beta_inf), float(d_est), deltas,
                         period, truncated, reason, orbits)


def _locate_flip(sl: _Slice, s_start, orb, step, sgn, s_end, xtol):
    """March from s_start until the dominant multiplier passes -1, then brentq."""
    s_prev, orb_prev = s_start, orb
    m_prev, _ = sl.multiplier(s_prev, orb_prev)
    if m_prev <= -1.0:
        raise BracketError("cycle already past its flip at march start")
    limit = abs(s_end - s_start)
    travelled = 0.0
    h = step
    while True:
        s_new = s_prev + sgn * h
        try:
            orb_new = sl.cycle(s_new, orb_prev)
        except NoConvergenceError:
            if h < step * 1e-3:
                raise
            h *= 0.5
            continue
        m_new, cplx = sl.multiplier(s_new, orb_new)
        if m_new <= -1.0 and not cplx:
            break
        if cplx and abs(m_new) > 1.0:
            raise BracketError("complex multipliers left the unit circle")
        travelled += h
        s_prev, orb_prev = s_new, orb_new
        if travelled > limit:
            raise BracketError("no flip before bracket end")
        h = min(h * 1.5, step * 4)
    cache = {"orb": orb_prev}

    def f(s):
        o = sl.cycle(s, cache["orb"])
        cache["orb"] = o
        m, _ = sl.multiplier(s, o)
        return m + 1.0

    lo, hi = (s_prev, s_new)
    s_flip = brentq(f, lo, hi, xtol=xtol * max(1.0, abs(s_new)), rtol=4 * np.finfo(float).eps,
                    maxiter=200)
    orb_flip = sl.cycle(s_flip, cache["orb"])
    return s_flip, orb_flip, orb_prev


def _double_branch(sl: _Slice, s_flip, orb_flip, gap, sgn, P):
    """Find the period-2P cycle born at the flip, past it by a fraction of gap."""
    fam = sl.family
    for frac in (0.4, 0.25, 0.6, 0.15):
        s = s_flip + sgn * frac * gap
        p = sl.p(s)
        M = monodromy(fam, p, orb_flip)
        ev, V = np.linalg.eig(M)
        i = int(np.argmin(np.abs(ev + 1.0)))
        v = np.real(V[:, i])
        scale = 1.0 + float(np.max(np.abs(orb_flip)))
        for amp in (1e-3, 1e-2, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8):
            start = orb_flip[0] + amp * scale * v
            try:
                orb2 = _attracting_cycle(sl, s, start, 2 * P, 400)
                if not np.all(np.isfinite(orb2)):
                    continue
                orb2 = sl.cycle(s, orb2)
            except NoConvergenceError:
                continue
            if not np.all(np.isfinite(orb2)):
                continue
            # the born cycle stays within ~sqrt(distance to the flip) of the old one; a far
            # cycle is a coexisting attractor reached by the settling iterations
            if _cycle_distance(orb2, orb_flip) > 10.0 * math.sqrt(frac * gap) * scale:
                continue
            if _minimal_period_ok(orb2, 1e-9 * scale):
                m, _ = sl.multiplier(s, orb2)
                if -1.0 < m < 1.0:
                    return orb2
    raise NoConvergenceError("period-doubled branch not found")


def _cycle_distance(orb2: np.ndarray, orb: np.ndarray) -> float:
    """Max distance of a 2P-cycle from a P-cycle traversed twice, over cyclic shifts."""
    P = orb.shape[0]
    return min(float(np.max(np.abs(orb2 - np.tile(np.roll(orb, -j, axis=0), (2, 1)))))
               for j in range(P))


@dataclass
class PDCurve:
    n: int
    samples: list = field(default_factory=list)   # (t, PD_n(t), summary dict)
    gaps: list = field(default_factory=list)      # (t, reason)
    slopes: list = field(default_factory=list)    # (t_mid, secant slope)

    @property
    def t(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def a(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])

    def slope_at(self, t: float) -> float:
        """Central secant slope at the sample nearest to t."""
        ts, a = self.t, self.a
        if ts.size < 2:
            return float("nan")
        i = int(np.argmin(np.abs(ts - t)))
        lo, hi = max(i - 1, 0), min(i + 1, ts.size - 1)
        return float((a[hi] - a[lo]) / (ts[hi] - ts[lo]))

    def to_csv(self) -> str:
        lines = ["t,a,K_achieved,delta_est,beta_inf"]
        for t, a, info in self.samples:
            lines.append(f"{t:.17g},{a:.17g},{info['K_achieved']},{info['delta_est']:.17g},"
                         f"{info['beta_inf']:.17g}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"n": self.n, "samples": [{"t": t, "a": a, **info} for t, a, info in self.samples],
                "gaps": [{"t": t, "reason": r} for t, r in self.gaps],
                "slopes": [{"t": t, "slope": v} for t, v in self.slopes]}


def pd_curve(family: MapFamily, strip, t_grid, K_depth: int = 6, base=None) -> PDCurve:
    """PD_n(t): cascade accumulation along a from the strong sink towards a_lo.

    ``strip`` is a HenonStrip; each t in ``t_grid`` needs a strip sample
    (strips are built on the same grid).
    """
    from .strip import strong_sink  # local import to avoid a cycle

    tr = strip.transit
    curve = PDCurve(n=strip.n)
    ai, ti = tr.a_index, tr.t_index
    prev = None
    for t in np.asarray(t_grid, dtype=float):
        t = float(t)
        smp = strip.at(t)
        try:
            if smp.t == t:
                sa, orb = smp.sa, smp.orbit
            else:
                sa, orb, _ = strong_sink(family, strip.n, t, tr, base,
                                         a_guess=None if prev is None else prev[0],
                                         orbit_guess=None if prev is None else prev[1])
        except Exception as exc:  # noqa: BLE001 - recorded as a gap
            curve.gaps.append((t, f"strong sink: {exc}"))
            continue
        prev = (sa, orb)
        pv = tr.param(family, t, sa, base)
        direction = np.zeros_like(pv)
        direction[ai] = 1.0
        span = smp.a_lo - smp.sa
        try:
            rec = cascade_in_slice(family, pv, direction, (0.0, span), K_depth=K_depth,
                                   seed=orb)
        except (BracketError, CascadeStructureError, NoConvergenceError) as exc:
            curve.gaps.append((t, str(exc)))
            continue
        if rec.K_achieved < 3 or not math.isfinite(rec.beta_inf):
            curve.gaps.append((t, f"cascade too shallow (K={rec.K_achieved}) {rec.reason}"))
            continue
        if not (min(0.0, span) < rec.beta_inf < max(0.0, span)):
            curve.gaps.append((t, "accumulation outside the strip"))
            continue
        info = {"K_achieved": rec.K_achieved, "delta_est": rec.delta_est,
                "beta_inf": rec.beta_inf, "sa": sa, "flips": list(rec.flip_params)}
        curve.samples.append((t, sa + rec.beta_inf, info))
        _ = ti
    ts = curve.t
    a = curve.a
    for i in range(1, ts.size):
        curve.slopes.append((0.5 * (ts[i] + ts[i - 1]), float((a[i] - a[i - 1]) / (ts[i] - ts[i - 1]))))
    return curve


def pd_slope_formula(n: int, mu: float, dmu_dt: float) -> float:
    """Leading-order slope -(n / mu^{n+1}) dmu/dt of the PD_n curve."""
    return -n / mu ** (n + 1) * dmu_dt


# ---------------------------------------------------------------------------
# single PD points, secondary tangencies and two-cascade coexistence


@dataclass
class PDPoint:
    t: float
    a: float
    record: CascadeRecord
    sa: float
    orbit: np.ndarray
    a_lo: float
    a_hi: float

    @property
    def uncertainty(self) -> float:
        """Extrapolation error of the accumulation estimate, in a."""
        f = self.record.flip_params
        d = self.record.delta_est if math.isfinite(self.record.delta_est) else FEIGENBAUM_DELTA
        return abs(f[-1] - f[-2]) / max(d - 1.0, 1.0)


def pd_point(family: MapFamily, n: int, t: float, transit, K_depth: int = 6, base=None,
             nu_range=(-3.5, 0.5), guess=None) -> PDPoint:
    """PD_n at one t, with the strip edge located by normalization at that t.

    ``guess`` is an optional (sa, orbit) pair from a nearby t.
    """
    from .strip import StrongSinkLocus, build_strip, strong_sink

    sa, orb, res = strong_sink(family, n, t, transit, base,
                               a_guess=None if guess is None else guess[0],
                               orbit_guess=None if guess is None else guess[1])
    loc = StrongSinkLocus(n=n, N=transit.N, samples=[(float(t), float(sa), float(res), orb)])
    st = build_strip(family, loc, transit, nu_range=nu_range, base=base)
    if not st.samples:
        raise CascadeStructureError(f"strip not normalizable at t={t}: {st.failures}")
    smp = st.samples[0]
    pv = transit.param(family, t, sa, base)
    direction = np.zeros_like(pv)
    direction[transit.a_index] = 1.0
    rec = cascade_in_slice(family, pv, direction, (0.0, smp.a_lo - sa), K_depth=K_depth, seed=orb)
    if rec.K_achieved < 3 or not math.isfinite(rec.beta_inf):
        raise CascadeStructureError(f"cascade too shallow (K={rec.K_achieved}) {rec.reason}")
    return PDPoint(float(t), float(sa + rec.beta_inf), rec, float(sa), orb, smp.a_lo, smp.a_hi)


def secondary_tangencies(family: MapFamily, strip, source, t_list=None, n_scan: int = 2,
                         main_N: int | None = None, r_loc: float | None = None,
                         xtol: float = 1e-13) -> list:
    """Tangencies of W^u(p) with W^s(p) met along a-transects of a strip.

    For each t (strip sample times by default) the crossing counts of the arcs
    supplied by ``source`` are compared on ``n_scan`` equally spaced a values
    over [a_lo, a_hi]; every jump by 2 is refined with the fold functional.
    The label ``n0`` is the excess of the new transit length over the primary
    one (``main_N``, default the strip's N).
    """
    from .manifolds import _count_crossings, detect_tangency
    from .saddle import find_periodic_point
    from .strip import detect_transit_length

    n_scan = check_int(n_scan, "n_scan", 2)
    main_N = strip.transit.N if main_N is None else main_N
    events = []
    ts = [s.t for s in strip.samples] if t_list is None else [float(v) for v in t_list]
    for t in ts:
        smp = strip.at(t)
        grid = np.linspace(smp.a_lo, smp.a_hi, n_scan)
        counts = []
        for a in grid:
            U, S = source(t, a)
            counts.append(_count_crossings(U, S))
        for i in range(n_scan - 1):
            if abs(counts[i + 1] - counts[i]) != 2:
                continue
            try:
                ev = detect_tangency(source, t, (grid[i], grid[i + 1]), xtol=xtol, family=family)
            except (BracketError, DegenerateTangencyError, NoConvergenceError):
                continue
            ev.kind = "secondary"
            ev.n = strip.n
            sad = find_periodic_point(family, ev.param, 1, strip.transit.saddle)
            try:
                N2 = detect_transit_length(family, ev.param, ev, sad, r_loc=r_loc, max_N=60)
                ev.n0 = int(N2 - main_N)
            except Exception:  # noqa: BLE001 - label stays unknown
                ev.n0 = None
            events.append(ev)
    events.sort(key=lambda e: (e.n0 if e.n0 is not None else 10**9, e.t))
    return events


@dataclass
class CoexistencePoint:
    param: object
    t: float
    a: float
    n: int
    m: int
    members: list = field(default_factory=list)
    angle_est: float = float("nan")
    locator_tol: float = float("nan")
    probe: dict = field(default_factory=dict)
    accepted: bool = False
    reason: str = ""
    min_gap: float = float("nan")
    tau: float = 0.0

    def to_dict(self) -> dict:
        pv = self.param.coords if isinstance(self.param, ParamPoint) else self.param
        return {"t": self.t, "a": self.a, "tau": self.tau,
                "param": [] if pv is None else [float(v) for v in np.atleast_1d(pv)], "n": self.n, "m": self.m,
                "members": self.members, "angle_est": self.angle_est,
                "locator_tol": self.locator_tol, "probe": self.probe,
                "accepted": self.accepted, "reason": self.reason, "min_gap": self.min_gap}


def attractor_depth(family: MapFamily, p, z0, base_period: int, transient: int = 400_000,
                    window: int = 16_384, cluster_tol: float = 1e-10):
    """(depth, record, tail) of the attractor reached from z0.

    A sink of period base_period * 2^j has depth j; a cluster hierarchy over
    the base period gives its 2-adic depth directly.
    """
    from .attractors import classify_attractor

    coef = family.coef(p)
    tails, esc = K.tails_many(family.kind_code, coef, np.atleast_2d(np.asarray(z0, float)),
                              int(transient), int(window), 1e6)
    if esc[0]:
        return -1, None, None
    W = tails[0]
    rec = classify_attractor(family, p, W, cluster_tol=cluster_tol, lyap_n=20_000, ce_n=200,
                             ce_samples=2)
    if rec.kind == "sink":
        ratio = rec.period_or_depth / base_period
        j = int(round(math.log2(ratio))) if ratio >= 1 else -1
        depth = j if ratio >= 1 and 2 ** j * base_period == rec.period_or_depth else 0
    elif rec.kind == "pd_cascade":
        depth = int(rec.period_or_depth)
    else:
        depth = int(rec.diagnostics.get("depth", 0))
    return depth, rec, W


class _TwoCascades:
    """PD_n of the primary return and PD_m of a daughter return as functions of t."""

    def __init__(self, family, n, m, main_transit, daughter_transit, K_depth, base):
        self.family, self.n, self.m = family, n, m
        self.tr = (main_transit, daughter_transit)
        self.K, self.base = K_depth, base
        self.guess = [None, None]
        self.cache: dict = {}

    def points(self, t):
        key = float(t)
        if key not in self.cache:
            out = []
            for i, (tr, k) in enumerate(zip(self.tr, (self.n, self.m))):
                pt = pd_point(self.family, k, key, tr, self.K, self.base, guess=self.guess[i])
                self.guess[i] = (pt.sa, pt.orbit)
                out.append(pt)
            self.cache[key] = tuple(out)
        return self.cache[key]

    def gap(self, t):
        p1, p2 = self.points(t)
        return p1.a - p2.a

    def slopes(self, t, h):
        lo, hi = self.points(t - h), self.points(t + h)
        return ((hi[0].a - lo[0].a) / (2 * h), (hi[1].a - lo[1].a) / (2 * h))


def _coexistence_at(tc: _TwoCascades, t_star, probe: bool, min_depth: int, h_slope: float,
                    transient: int, window: int, tau: float = 0.0) -> CoexistencePoint:
    fam = tc.family
    main, dau = tc.points(t_star)
    s_n, s_d = tc.slopes(t_star, h_slope)
    angle = abs(math.atan(s_n) - math.atan(s_d))
    rel = abs(s_n - s_d)
    loc_tol = max(main.uncertainty, dau.uncertainty) / rel if rel > 0 else float("inf")
    a_star = main.a
    pv = tc.tr[0].param(fam, t_star, a_star, tc.base)
    periods = (tc.n + tc.tr[0].N, tc.m + tc.tr[1].N)
    members, clouds = [], []
    for pt, P, label in ((main, periods[0], "primary"), (dau, periods[1], "daughter")):
        z0 = pt.record.orbits[-1][0] if pt.record.orbits else pt.orbit[0]
        depth, rec, W = attractor_depth(fam, pv, z0, P, transient, window)
        members.append({"role": label, "base_period": P, "depth": depth,
                        "kind": None if rec is None else rec.kind,
                        "K_achieved": pt.record.K_achieved, "delta_est": pt.record.delta_est,
                        "beta_inf": pt.record.beta_inf, "pd_a": pt.a,
                        "clusters": [] if rec is None else
                        np.asarray(rec.clusters).reshape(-1, 2).tolist()})
        clouds.append(W)
    from .attractors import _min_set_distance

    gap = _min_set_distance(clouds[0], clouds[1]) if all(c is not None for c in clouds) else 0.0
    pt = CoexistencePoint(param=ParamPoint(tuple(pv), fam.param_names), t=float(t_star),
                          a=float(a_star), n=tc.n, m=tc.m, members=members, angle_est=angle,
                          locator_tol=float(loc_tol), min_gap=float(gap), tau=tau)
    depths = [mb["depth"] for mb in members]
    if gap <= 0:
        pt.reason = "clusters overlap"
    elif min(depths) < min_depth:
        pt.reason = f"proxy depth {min(depths)} below {min_depth}"
    elif not angle > 0:
        pt.reason = "PD curves not transverse"
    else:
        pt.accepted = True
    if probe and math.isfinite(loc_tol):
        # move along PD_n towards the daughter's periodic side
        side = math.copysign(1.0, dau.sa - dau.a) * math.copysign(1.0, s_n - s_d)
        t_p = t_star + side * 10.0 * loc_tol
        m_p, d_p = tc.points(t_p)
        pv_p = tc.tr[0].param(fam, t_p, m_p.a, tc.base)
        zs = [m_p.record.orbits[-1][0], d_p.record.orbits[-1][0]]
        dp = [attractor_depth(fam, pv_p, z, P, transient, window)[0] for z, P in zip(zs, periods)]
        pt.probe = {"dt": float(t_p - t_star), "depth_primary": dp[0], "depth_daughter": dp[1],
                    "primary_kept": dp[0] >= min_depth, "daughter_dropped": dp[1] < depths[1]}
    return pt


def daughter_transit(family: MapFamily, secondary, saddle=None, r_loc: float | None = None,
                     max_N: int = 60):
    """TransitData for the return through a secondary tangency."""
    from .saddle import find_periodic_point
    from .strip import transit_from_tangency

    if saddle is None:
        saddle = find_periodic_point(family, secondary.param, 1, np.zeros(2))
    if r_loc is None:
        r_loc = float(np.linalg.norm(np.asarray(secondary.q1) - saddle.location))
    return transit_from_tangency(family, secondary.param, secondary, saddle, r_loc=r_loc,
                                 max_N=max_N)


def find_2pd_points(family: MapFamily, n: int, secondary, m_list, K_depth: int = 6,
                    main_transit=None, t_grid=None, base=None, saddle=None,
                    r_loc: float | None = None, t_xtol: float = 1e-10, probe: bool = True,
                    min_depth: int = 5, transient: int = 400_000, window: int = 16_384) -> list:
    """Intersections of PD_n with daughter curves PD_m through a secondary tangency.

    For each m the sign of PD_n(t) - PD_m(t) is scanned over ``t_grid``; every
    sign change is refined by Brent's method in t.  At the intersection both
    attractors are followed from their cascade orbits and their cluster
    hierarchies compared.  Candidates whose clusters overlap are dropped;
    shallow ones are kept with ``accepted = False``.
    """
    from .strip import model_transit

    n = check_int(n, "n", 1)
    if main_transit is None:
        main_transit = model_transit(family)
    dtr = daughter_transit(family, secondary, saddle, r_loc)
    if t_grid is None:
        t_grid = secondary.t + np.linspace(-1.0, 1.0, 9)
    t_grid = np.asarray(t_grid, dtype=float)
    out = []
    for m in m_list:
        tc = _TwoCascades(family, n, int(m), main_transit, dtr, K_depth, base)
        vals = []
        for t in t_grid:
            try:
                vals.append((float(t), tc.gap(t)))
            except Exception:  # noqa: BLE001 - t outside the reachable range
                continue
        for (t0, g0), (t1, g1) in zip(vals[:-1], vals[1:]):
            if g0 * g1 > 0:
                continue
            try:
                t_star = brentq(tc.gap, t0, t1, xtol=t_xtol, maxiter=100)
            except (ValueError, RuntimeError):
                continue
            h = 1e-3 * (t1 - t0)
            pt = _coexistence_at(tc, t_star, probe, min_depth, h, transient, window)
            if pt.reason == "clusters overlap":
                continue
            out.append(pt)
    return out


def continue_coexistence(family3: MapFamily, point: CoexistencePoint, tau_path, main_transit,
                         daughter, K_depth: int = 6, tau_index: int = 2, dt_bracket: float = 0.05,
                         t_xtol: float = 1e-10, verify: bool = False) -> list:
    """Follow a 2PD point along tau: predictor in t, corrector by Brent's method.

    ``daughter`` is the daughter TransitData.  Each leaf sample re-solves
    PD_n(t) = PD_m(t) at the new tau.  A corrector failure ends the leaf with
    an unaccepted record whose ``reason`` holds the diagnostic.
    """
    leaf = []
    hist: list = []
    for tau in np.asarray(tau_path, dtype=float):
        base = np.zeros(len(family3.param_names))
        base[tau_index] = tau
        tc = _TwoCascades(family3, point.n, point.m, main_transit, daughter, K_depth, base)
        if len(hist) >= 2:
            (ta, ua), (tb, ub) = hist[-2], hist[-1]
            t_pred = tb + (tb - ta) * (tau - ub) / (ub - ua) if ub != ua else tb
        else:
            t_pred = hist[-1][0] if hist else point.t
        try:
            lo, hi = t_pred - dt_bracket, t_pred + dt_bracket
            g_lo, g_hi = tc.gap(lo), tc.gap(hi)
            widen = 0
            while g_lo * g_hi > 0 and widen < 3:
                dt_bracket *= 2
                lo, hi = t_pred - dt_bracket, t_pred + dt_bracket
                g_lo, g_hi = tc.gap(lo), tc.gap(hi)
                widen += 1
            t_star = brentq(tc.gap, lo, hi, xtol=t_xtol, maxiter=100)
        except Exception as exc:  # noqa: BLE001 - leaf truncated
            leaf.append(CoexistencePoint(param=None, t=float(t_pred), a=float("nan"), n=point.n,
                                         m=point.m, tau=float(tau), accepted=False,
                                         reason=f"leaf truncated at tau={tau}: {exc}"))
            break
        if verify:
            cp = _coexistence_at(tc, t_star, False, 5, 1e-3 * dt_bracket, 400_000, 16_384, tau)
        else:
            main, _ = tc.points(t_star)
            pv = main_transit.param(family3, t_star, main.a, base)
            cp = CoexistencePoint(param=ParamPoint(tuple(pv), family3.param_names),
                                  t=float(t_star), a=float(main.a), n=point.n, m=point.m,
                                  tau=float(tau), accepted=True)
        leaf.append(cp)
        hist.append((float(t_star), float(tau)))
    return leaf
