"""Strong sink loci, Hénon strips, straightening and the normalized return map.

The (n+N)-th return map near a homoclinic tangency is studied through a
fixed window ``|x - center| <= r1`` around the tangency point.  Parameters are
addressed by name: ``a`` is the unfolding parameter and ``t`` the transverse
one (``TransitData.a_index`` / ``t_index`` select them).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels as K
from . import _strip_kernels as SK
from .exceptions import (NoConvergenceError, NormalizationError, OutsideBoxError, ProbeError,
                         StripError, TransitError)
from .family import MapFamily, ParamPoint, UnfoldingModel
from .saddle import find_periodic_point, monodromy, solve_periodic_orbit
from .validation import as_point, check_int, check_positive


@dataclass(frozen=True)
class TransitData:
    """Tangency geometry needed to seed the return-map constructions."""

    q1: np.ndarray
    q3: np.ndarray
    N: int
    saddle: np.ndarray
    normal: np.ndarray
    speed: float
    a_tangency: float = 0.0
    t_ref: float = 0.0
    a_slope: float = 0.0
    r1: float = 0.5
    a_index: int = 1
    t_index: int = 0

    def a_tang(self, t: float) -> float:
        return self.a_tangency + self.a_slope * (t - self.t_ref)

    def param(self, family: MapFamily, t: float, a: float, base=None) -> np.ndarray:
        pv = np.zeros(len(family.param_names)) if base is None else np.array(base, dtype=float)
        pv[self.t_index] = t
        pv[self.a_index] = a
        return pv

    def to_dict(self) -> dict:
        return {"q1": self.q1.tolist(), "q3": self.q3.tolist(), "N": self.N,
                "saddle": self.saddle.tolist(), "normal": self.normal.tolist(),
                "speed": self.speed, "a_tangency": self.a_tangency, "r1": self.r1}


def model_transit(model: UnfoldingModel, t: float = 0.0) -> TransitData:
    """Transit data of the unfolding model, read off its construction."""
    c = model.constants
    theta = c["theta"]
    return TransitData(q1=np.array([c["q1x"], 0.0]), q3=np.array([0.0, 1.0]), N=c["N"],
                       saddle=np.zeros(2), normal=np.array([0.0, 1.0]), speed=1.0,
                       a_tangency=-theta * t, t_ref=t, a_slope=-theta,
                       r1=0.25 * abs(c["q1x"]))


def transit_from_tangency(family: MapFamily, p, tangency, saddle, r_loc: float | None = None,
                          max_N: int = 50, a_index: int | None = None) -> TransitData:
    """Assemble TransitData from a located tangency and its saddle."""
    N, q3 = detect_transit_length(family, p, tangency, saddle, r_loc=r_loc, max_N=max_N,
                                  return_point=True)
    names = family.param_names
    ai = names.index("a") if a_index is None and "a" in names else (a_index or 0)
    ti = next(i for i in range(len(names)) if i != ai) if len(names) > 1 else ai
    pv = family.params(p)
    nrm = np.asarray(tangency.normal, dtype=float)
    speed = float(tangency.unfolding_speed)
    if speed < 0:
        nrm, speed = -nrm, -speed
    q1 = np.asarray(tangency.q1, dtype=float)
    return TransitData(q1=q1, q3=q3, N=N, saddle=np.asarray(saddle.location, dtype=float),
                       normal=nrm, speed=speed, a_tangency=float(pv[ai]), t_ref=float(pv[ti]),
                       r1=0.25 * float(np.linalg.norm(q1 - saddle.location)),
                       a_index=ai, t_index=ti)


def detect_transit_length(family: MapFamily, p, tangency, saddle, r_loc: float | None = None,
                          max_N: int = 50, samples: int = 400, tol: float | None = None,
                          return_point: bool = False):
    """Shortest N carrying the local unstable segment to the tangency point.

    The local segment is ``saddle + s v_u`` for ``|s| <= r_loc`` (linear
    approximation of the local unstable manifold, refined around the best
    sample by golden-section search).
    """
    max_N = check_int(max_N, "max_N", 1)
    loc = np.asarray(saddle.location, dtype=float)
    vu = np.asarray(saddle.unstable_vector, dtype=float)
    q1 = as_point(tangency.q1, "q1")
    if r_loc is None:
        r_loc = 0.5 * float(np.linalg.norm(q1 - loc))
    if tol is None:
        tol = 1e-3 * max(1.0, float(np.linalg.norm(q1 - loc)))
    coef = family.coef(p)
    kc = family.kind_code
    s = np.linspace(-r_loc, r_loc, samples)
    pts = loc[None, :] + s[:, None] * vu[None, :]
    for k in range(1, max_N + 1):
        pts = K.eval_many(kc, coef, pts)
        ok = np.all(np.isfinite(pts), axis=1)
        if not np.any(ok):
            break
        dist = np.where(ok, np.linalg.norm(pts - q1, axis=1), np.inf)
        i = int(np.argmin(dist))
        lo = s[max(i - 1, 0)]
        hi = s[min(i + 1, samples - 1)]

        def d(sv, k=k):
            z = loc + sv * vu
            w = np.array(K.iterate_point(kc, coef, z[0], z[1], k))
            return float(np.linalg.norm(w - q1)) if np.all(np.isfinite(w)) else np.inf

        g = (math.sqrt(5) - 1) / 2
        x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
        f1, f2 = d(x1), d(x2)
        for _ in range(80):
            if f1 < f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - g * (hi - lo)
                f1 = d(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + g * (hi - lo)
                f2 = d(x2)
        best = min(f1, f2, dist[i])
        if best < tol:
            sb = x1 if f1 <= f2 else x2
            q3 = loc + sb * vu
            return (k, q3) if return_point else k
    raise TransitError(f"no transit to the tangency point within {max_N} iterates")


@dataclass
class StrongSinkLocus:
    n: int
    N: int
    samples: list = field(default_factory=list)   # (t, sa, trace_residual, orbit)
    skipped: list = field(default_factory=list)   # (t, reason)

    def sa(self, t: float) -> float:
        ts = np.array([s[0] for s in self.samples])
        sa = np.array([s[1] for s in self.samples])
        if ts.size == 0:
            raise StripError("empty strong sink locus")
        if ts.size == 1:
            return float(sa[0])
        return float(np.interp(t, ts, sa))

    def sample(self, t: float):
        for s in self.samples:
            if s[0] == t:
                return s
        raise KeyError(t)

    def to_dict(self) -> dict:
        return {"n": self.n, "N": self.N,
                "samples": [{"t": s[0], "sa": s[1], "trace_residual": s[2]} for s in self.samples],
                "skipped": [{"t": t, "reason": r} for t, r in self.skipped]}


def _mu_estimate(family: MapFamily, pv, transit: TransitData) -> float:
    if isinstance(family, UnfoldingModel):
        return abs(family.mu(pv))
    s = find_periodic_point(family, pv, 1, transit.saddle)
    return abs(float(np.real(s.mu)))


def pseudo_orbit(family: MapFamily, pv, transit: TransitData, n: int) -> np.ndarray:
    """Excursion pseudo-orbit of length n+N starting near q1.

    The start is corrected only along the dominant singular direction of
    DF^n(q1), so that the unstable component lands on q3 after n steps.
    """
    kc = family.kind_code
    coef = family.coef(pv)
    q1 = transit.q1
    x, y, J = K.orbit_jacobian(kc, coef, q1[0], q1[1], n)
    U, S, Vt = np.linalg.svd(J)
    r = transit.q3 - np.array([x, y])
    z0 = q1 + Vt[0] * (U[:, 0] @ r) / S[0]
    P = n + transit.N
    orb = np.empty((P, 2))
    orb[0] = z0
    for k in range(1, P):
        orb[k] = K.step(kc, coef, *orb[k - 1])
    if n < P:
        orb[n] = transit.q3
        for k in range(n + 1, P):
            orb[k] = K.step(kc, coef, *orb[k - 1])
    return orb


def _trace(family, pv, orb):
    M = monodromy(family, pv, orb)
    return float(M[0, 0] + M[1, 1]), M


def _augmented_sink(family, t, transit, base, a, orb, tol=1e-12, max_iter=60):
    """Damped Newton on (orbit, a) for F(z_k) = z_{k+1} and trace(DF^P) = 0."""
    Z = np.array(orb, dtype=float)
    P = Z.shape[0]
    ai = transit.a_index
    T_scale = [None]

    def R(u):
        Zu, au = u[:-1].reshape(P, 2), u[-1]
        p = transit.param(family, t, au, base)
        FZ = K.eval_many(family.kind_code, family.coef(p), Zu)
        M = monodromy(family, p, Zu)
        if T_scale[0] is None:
            T_scale[0] = max(1.0, float(np.max(np.abs(M))))
        tr = (M[0, 0] + M[1, 1]) / T_scale[0]
        return np.concatenate([(FZ - np.roll(Zu, -1, axis=0)).ravel(), [tr]])

    u = np.concatenate([Z.ravel(), [a]])
    r = R(u)
    res = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if not math.isfinite(res):
            break
        if res <= tol:
            return float(u[-1]), u[:-1].reshape(P, 2)
        Zu, au = u[:-1].reshape(P, 2), u[-1]
        p = transit.param(family, t, au, base)
        J = np.zeros((2 * P + 1, 2 * P + 1))
        Jf = K.jac_many(family.kind_code, family.coef(p), Zu)
        jet = family.param_jet(p, Zu)[:, ai, :]
        for i in range(P):
            J[2 * i:2 * i + 2, 2 * i:2 * i + 2] = Jf[i]
            j = (i + 1) % P
            J[2 * i:2 * i + 2, 2 * j:2 * j + 2] -= np.eye(2)
            J[2 * i:2 * i + 2, -1] = jet[i]
        for k in range(2 * P + 1):
            h = 1e-7 * max(1e-3, abs(u[k]))
            up, um = u.copy(), u.copy()
            up[k] += h
            um[k] -= h
            J[-1, k] = (R(up)[-1] - R(um)[-1]) / (2 * h)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-6:
            un = u + lam * step
            rn = R(un)
            rn_norm = float(np.linalg.norm(rn)) if np.all(np.isfinite(rn)) else np.inf
            if rn_norm < res:
                break
            lam *= 0.5
        else:
            break
        u, r, res = un, rn, rn_norm
    raise StripError(f"augmented strong-sink Newton failed at t={t} (residual {res:.3e})")


def strong_sink(family: MapFamily, n: int, t: float, transit: TransitData, base=None,
                trace_tol: float = 1e-9, max_iter: int = 40, a_guess: float | None = None,
                orbit_guess=None):
    """(sa, orbit, trace residual) at one t.  trace residual is relative to |DF^{n+N}|."""
    n = check_int(n, "n", 1)
    pv = transit.param(family, t, transit.a_tang(t), base)
    mu = _mu_estimate(family, pv, transit)
    if a_guess is None:
        off = pseudo_orbit(family, pv, transit, n)[0] - transit.q1
        a_guess = transit.a_tang(t) + float(transit.normal @ off) / transit.speed
    orb = pseudo_orbit(family, transit.param(family, t, a_guess, base), transit, n) \
        if orbit_guess is None else np.array(orbit_guess, dtype=float)

    def solve(a, guess):
        p = transit.param(family, t, a, base)
        o, _ = solve_periodic_orbit(family, p, guess, tol=1e-14, max_iter=60)
        tr, M = _trace(family, p, o)
        return tr, M, o

    def finish(a, o):
        T, M, o = solve(a, o)
        scale = float(np.max(np.abs(M)))
        if abs(T) > trace_tol * scale:
            raise StripError(f"trace root not found at t={t}")
        if np.max(np.abs(np.linalg.eigvals(M))) >= 1.0:
            raise StripError("trace-zero orbit is not a sink")
        return a, o, abs(T) / scale

    def joint(a, o):
        # the iterate can sit past the saddle-node of the return orbit; solve
        # orbit, a and trace = 0 jointly instead
        return finish(*_augmented_sink(family, t, transit, base, a, o))

    a0 = a_guess
    try:
        T0, M0, orb = solve(a0, orb)
        h = 1e-3 * mu ** (-2 * n) * max(1.0, 1.0 / transit.speed)
        a1 = a0 + h
        T1, M1, orb1 = solve(a1, orb)
    except NoConvergenceError:
        return joint(a0, orb)
    for _ in range(max_iter):
        scale = float(np.max(np.abs(M1)))
        if abs(T1) <= trace_tol * scale:
            return finish(a1, orb1)
        if T1 == T0:
            break
        a2 = a1 - T1 * (a1 - a0) / (T1 - T0)
        if not math.isfinite(a2):
            break
        step = a2 - a1
        lim = 50 * abs(h) + 10 * abs(a1 - a0)
        if abs(step) > lim:
            a2 = a1 + math.copysign(lim, step)
        a0, T0, orb = a1, T1, orb1
        try:
            T1, M1, orb1 = solve(a2, orb1)
        except NoConvergenceError:
            return joint(a1, orb1)
        a1 = a2
    return joint(a1, orb1)


def strong_sink_locus(family: MapFamily, n: int, t_grid, transit: TransitData, base=None,
                      trace_tol: float = 1e-9) -> StrongSinkLocus:
    """sa_n(t) on a t grid; failed samples are skipped with a diagnostic."""
    n = check_int(n, "n", 1)
    loc = StrongSinkLocus(n=n, N=transit.N)
    prev = None
    for t in np.asarray(t_grid, dtype=float):
        t = float(t)
        try:
            guess = None if prev is None else prev
            sa, orb, res = strong_sink(family, n, t, transit, base, trace_tol,
                                       a_guess=None if guess is None else guess[0],
                                       orbit_guess=None if guess is None else guess[1])
        except (StripError, NoConvergenceError) as exc:
            try:
                sa, orb, res = strong_sink(family, n, t, transit, base, trace_tol)
            except (StripError, NoConvergenceError):
                loc.skipped.append((t, str(exc)))
                continue
        loc.samples.append((t, float(sa), float(res), orb))
        prev = (sa, orb)
    return loc


# ---------------------------------------------------------------------------
# straightening box


def _ret(family, pv, m, z):
    x, y, a, b, c, d = SK.ret(family.kind_code, family.coef(pv), m, float(z[0]), float(z[1]))
    return np.array([x, y]), np.array([[a, b], [c, d]])


def straighten(family: MapFamily, p, n: int, N: int, z) -> np.ndarray:
    """sigma(z) = ((F^{n+N} z)_x, z_x)."""
    z = as_point(z)
    w, _ = _ret(family, family.params(p), n + N, z)
    if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > K_BAIL:
        raise OutsideBoxError("orbit escaped while straightening")
    return np.array([w[0], z[0]])


K_BAIL = 1e8


def straighten_inverse(family: MapFamily, p, n: int, N: int, w, y_seed: float) -> np.ndarray:
    """sigma^{-1}(X, Y) = (Y, y*) with pi_x F^{n+N}(Y, y*) = X (1-d Newton)."""
    w = as_point(w)
    pv = family.params(p)
    y, ok = SK.solve_fiber(family.kind_code, family.coef(pv), n + N, w[1], w[0],
                           float(y_seed), 1e-15, 80)
    if not ok:
        raise OutsideBoxError("fiber equation did not converge")
    return np.array([w[1], y])


@dataclass
class BoxReport:
    inside: bool
    center: float
    r1: float
    x: float
    y_range: tuple | None

    @property
    def extent(self) -> float:
        return float("nan") if self.y_range is None else self.y_range[1] - self.y_range[0]


def box_membership(family: MapFamily, p, n: int, N: int, z, center: float, r1: float,
                   y_seed: float | None = None) -> BoxReport:
    """z and F^{n+N}(z) both in the x-window; reports the vertical fiber at z_x."""
    z = as_point(z)
    pv = family.params(p)
    kc, coef, m = family.kind_code, family.coef(pv), n + N
    w, _ = _ret(family, pv, m, z)
    inside = bool(abs(z[0] - center) <= r1 and np.all(np.isfinite(w)) and abs(w[0] - center) <= r1)
    y0 = z[1] if y_seed is None else y_seed
    ends = []
    for target in (center - r1, center + r1):
        y, ok = SK.solve_fiber(kc, coef, m, z[0], target, y0, 1e-15, 80)
        if not ok:
            ends = None
            break
        ends.append(y)
    rng = None if ends is None else (min(ends), max(ends))
    return BoxReport(inside, center, r1, float(z[0]), rng)


# ---------------------------------------------------------------------------
# critical point


@dataclass
class CriticalPoint:
    c: np.ndarray
    v: np.ndarray
    phi_residual: float
    phi_raw: np.ndarray
    steps: int
    jac_cond: float
    hy: float = float("nan")


def composition_extent(family: MapFamily, p, n: int, N: int, z, r1: float = 0.5):
    """Vertical extents at z of the box fiber and of the twice-returned fiber.

    ``e1 = 2 r1 / |d_y pi_x F^m|`` is the fiber of the straightening box;
    ``e2 = sqrt(2 r1 / |d_yy pi_x F^{2m}|)`` is where the composition stays
    within the window.  Both are first-order estimates.
    """
    z = as_point(z)
    pv = family.params(p)
    kc, coef, m = family.kind_code, family.coef(pv), n + N
    _, J = _ret(family, pv, m, z)
    e1 = 2.0 * r1 / max(abs(J[0, 1]), 1e-300)
    h = 1e-4 * e1
    f = lambda y: SK.phi_system(kc, coef, m, z[0], y, h, 1)[1]  # noqa: E731
    psi_yy = (f(z[1] + h) - f(z[1] - h)) / (2 * h)
    e2 = math.sqrt(2.0 * r1 / abs(psi_yy)) if psi_yy != 0 and math.isfinite(psi_yy) else e1
    return e1, e2


def phi(family: MapFamily, p, n: int, N: int, z, hy: float | None = None,
        mode: str = "fd5", fd_frac: float = 1e-2, r1: float = 0.5) -> np.ndarray:
    """Phi(z) = (pi_x F^m z - z_x, d/dy pi_x F^{2m} z), m = n+N."""
    z = as_point(z)
    pv = family.params(p)
    kc, coef, m = family.kind_code, family.coef(pv), n + N
    if hy is None:
        hy = fd_frac * min(composition_extent(family, pv, n, N, z, r1))
    p1, p2 = SK.phi_system(kc, coef, m, z[0], z[1], hy, 1 if mode == "tangent" else 0)
    return np.array([p1, p2])


def find_critical_point(family: MapFamily, p, n: int, N: int, seed, mu: float | None = None,
                        phi_tol: float = 1e-10, max_steps: int = 20, mode: str = "fd5",
                        fd_frac: float = 1e-2, r1: float = 0.5,
                        hy: float | None = None) -> CriticalPoint:
    """Damped, preconditioned Newton on Phi.

    Rows are scaled by (1, mu^{-2n}) and columns by (1, mu^{-n}); convergence
    is measured as ``max(|Phi_1|, mu^{-3n} |Phi_2|)``.  The y-difference step
    is fixed at the seed as ``fd_frac`` times the smaller vertical extent from
    ``composition_extent``.
    """
    n = check_int(n, "n", 1)
    pv = family.params(p)
    if mu is None:
        raise ValueError("mu estimate required for the preconditioner")
    z = as_point(seed, "seed").copy()
    kc, coef, m = family.kind_code, family.coef(pv), n + N
    Dr = np.array([1.0, mu ** (-2 * n)])
    Dc = np.array([1.0, mu ** (-n)])
    P = np.array([1.0, mu ** (-3 * n)])
    if hy is None:
        hy = fd_frac * min(composition_extent(family, pv, n, N, z, r1))
    imode = 1 if mode == "tangent" else 0

    def F(zz):
        return np.array(SK.phi_system(kc, coef, m, zz[0], zz[1], hy, imode))

    def jacobian(zz):
        _, J = _ret(family, pv, m, zz)
        row1 = np.array([J[0, 0] - 1.0, J[0, 1]])
        hx = 1e-6 * max(1.0, abs(zz[0]))
        f = lambda x, y: SK.phi_system(kc, coef, m, x, y, hy, 1)[1]  # noqa: E731
        dx = (f(zz[0] + hx, zz[1]) - f(zz[0] - hx, zz[1])) / (2 * hx)
        dy = (f(zz[0], zz[1] + hy) - f(zz[0], zz[1] - hy)) / (2 * hy)
        return np.vstack([row1, [dx, dy]])

    r = F(z)
    res = float(np.max(np.abs(P * r))) if np.all(np.isfinite(r)) else np.inf
    if not math.isfinite(res):
        raise NoConvergenceError("Phi undefined at the seed", res)
    cond = float("nan")
    for k in range(max_steps + 1):
        if res < phi_tol:
            v, _ = _ret(family, pv, m, z)
            return CriticalPoint(z, v, res, r, k, cond, hy)
        if k == max_steps:
            break
        J = jacobian(z)
        Js = (Dr[:, None] * J) * Dc[None, :]
        cond = float(np.linalg.cond(Js))
        try:
            d = Dc * np.linalg.solve(Js, -Dr * r)
        except np.linalg.LinAlgError as exc:
            raise NoConvergenceError(f"singular Phi Jacobian (cond {cond:.2e})", res) from exc
        lam = 1.0
        while True:
            zn = z + lam * d
            rn = F(zn)
            rn_res = float(np.max(np.abs(P * rn))) if np.all(np.isfinite(rn)) else np.inf
            if rn_res < res or lam < 1e-6:
                break
            lam *= 0.5
        if not math.isfinite(rn_res):
            raise NoConvergenceError("critical point Newton left the box", res)
        z, r, res = zn, rn, rn_res
    raise NoConvergenceError(
        f"critical point Newton stagnated at {res:.3e} (preconditioned cond {cond:.2e})", res)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class ReturnMapData:
    param: ParamPoint
    n: int
    N: int
    box: dict
    c: np.ndarray
    v: np.ndarray
    phi_residual: float
    rescale: float
    nu: float
    eps_sup: float
    eps_grid: np.ndarray
    grid: np.ndarray
    U_radius: float
    V_radius: float
    containment_margin: float
    modulus: float
    quadratic_like: bool
    newton_steps: int = 0
    phi_raw: np.ndarray | None = None
    _family: MapFamily | None = field(default=None, repr=False, compare=False)

    def alpha(self, x):
        return self.c[0] + np.asarray(x, dtype=float) / self.rescale

    def alpha_inv(self, X):
        return (np.asarray(X, dtype=float) - self.c[0]) * self.rescale

    def f(self, x: float, y: float) -> float:
        """First component of the normalized map, evaluated exactly."""
        fam = self._family
        pv = fam.params(self.param)
        g, _ = SK.straight_g(fam.kind_code, fam.coef(pv), self.n + self.N,
                             float(self.alpha(x)), float(self.alpha(y)), float(self.c[1]))
        return self.rescale * (g - self.c[0])

    def map(self, z) -> np.ndarray:
        z = as_point(z)
        return np.array([self.f(z[0], z[1]), z[0]])

    def eps(self, x, y):
        """Bicubic interpolant of the sampled epsilon."""
        spl = RectBivariateSpline(self.grid, self.grid, self.eps_grid, kx=3, ky=3)
        return spl.ev(x, y)

    def to_dict(self) -> dict:
        pv = list(self.param.coords) if isinstance(self.param, ParamPoint) else list(self.param)
        names = list(self.param.names) if isinstance(self.param, ParamPoint) else None
        t = pv[0]
        a = pv[1] if len(pv) > 1 else None
        if names and "t" in names and "a" in names:
            t, a = pv[names.index("t")], pv[names.index("a")]
        return {"n": self.n, "N": self.N, "t": t, "a": a, "c": self.c.tolist(),
                "v": self.v.tolist(), "rescale": self.rescale, "nu": self.nu,
                "eps_sup": self.eps_sup, "containment_margin": self.containment_margin,
                "modulus": self.modulus, "phi_residual": self.phi_residual,
                "quadratic_like": self.quadratic_like}


def _quad_coefficient(qfun, x0, h, npts=4):
    ks = np.arange(-npts, npts + 1, dtype=float)
    vals = np.array([qfun(x0 + h * k) for k in ks])
    if not np.all(np.isfinite(vals)):
        raise NormalizationError("straightened slice undefined near the critical point")
    coef = np.polynomial.polynomial.polyfit(ks, vals, 4)
    return coef[2] / h ** 2


def normalize(family: MapFamily, p, n: int, N: int, seed, mu: float | None = None,
              center: float | None = None, r1: float = 0.5, U_radius: float = 3.0,
              grid_size: int = 33, phi_tol: float = 1e-10, fit_tol: float = 1e-4,
              crit: CriticalPoint | None = None) -> ReturnMapData:
    """Critical point, rescaling and the normalized map (x^2 + nu + eps, x)."""
    pv = family.params(p)
    if crit is None:
        crit = find_critical_point(family, pv, n, N, seed, mu=mu, phi_tol=phi_tol, r1=r1)
    c = crit.c
    kc, coef, m = family.kind_code, family.coef(pv), n + N

    def q(X):
        return SK.straight_g(kc, coef, m, float(X), float(c[0]), float(c[1]))[0]

    D0 = _quad_coefficient(q, c[0], 1e-6 * r1)
    if not math.isfinite(D0) or D0 == 0.0:
        raise NormalizationError("vanishing quadratic coefficient")
    h = 0.05 / abs(D0)
    D1 = _quad_coefficient(q, c[0], h)
    D2 = _quad_coefficient(q, c[0], 0.5 * h)
    if not (math.isfinite(D1) and math.isfinite(D2)) or abs(D1 - D2) > fit_tol * abs(D2):
        raise NormalizationError(f"ill-conditioned quadratic fit ({D1:.6e} vs {D2:.6e})")
    D = D2
    g00 = q(c[0])
    nu = D * (g00 - c[0])
    grid = np.linspace(-U_radius, U_radius, grid_size)
    if grid_size % 2 == 0:
        raise ValueError("grid_size must be odd so the origin is a node")
    G = SK.straight_g_grid(kc, coef, m, c[0] + grid / D, c[0] + grid / D, float(c[1]))
    if not np.all(np.isfinite(G)):
        raise NormalizationError("straightened map undefined on the normalized domain")
    f = D * (G - c[0])
    eps = f - grid[:, None] ** 2 - nu
    eps[grid_size // 2, grid_size // 2] = 0.0
    eps_sup = float(np.max(np.abs(eps)))
    edge = np.minimum(f[0, :], f[-1, :])
    V = float(np.min(edge))
    margin = min(V - U_radius, V + float(np.min(f)))
    modulus = math.log(V / U_radius) if V > 0 else float("-inf")
    box = {"center": center if center is not None else float(c[0]), "r1": r1,
           "extent_at_c": None}
    try:
        rep = box_membership(family, pv, n, N, c, box["center"], r1, y_seed=c[1])
        box["extent_at_c"] = rep.extent
        box["c_inside"] = rep.inside
    except OutsideBoxError:
        pass
    return ReturnMapData(param=pv if isinstance(p, ParamPoint) is False else p, n=n, N=N,
                         box=box, c=c, v=crit.v, phi_residual=crit.phi_residual, rescale=D,
                         nu=float(nu), eps_sup=eps_sup, eps_grid=eps, grid=grid,
                         U_radius=U_radius, V_radius=V, containment_margin=margin,
                         modulus=modulus, quadratic_like=margin > 0, newton_steps=crit.steps,
                         phi_raw=crit.phi_raw, _family=family)


def escapes_normalized(data: ReturnMapData, n_iter: int = 100, radius: float | None = None) -> bool:
    """Critical orbit of the normalized map leaves the domain U."""
    R = data.U_radius if radius is None else radius
    z = np.zeros(2)
    for _ in range(n_iter):
        try:
            z = np.array([data.f(z[0], z[1]), z[0]])
        except Exception:  # noqa: BLE001 - leaving the box counts as escape
            return True
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > R:
            return True
    return False


# ---------------------------------------------------------------------------
# strips


@dataclass
class StripSample:
    t: float
    sa: float
    a_lo: float
    a_hi: float
    nu_lo: float
    nu_hi: float
    orbit: np.ndarray
    c_seed: np.ndarray

    @property
    def halfwidth(self) -> float:
        return 0.5 * abs(self.a_hi - self.a_lo)

    @property
    def width(self) -> float:
        return abs(self.a_hi - self.a_lo)


@dataclass
class HenonStrip:
    n: int
    N: int
    samples: list
    nu_range: tuple
    transit: TransitData
    failures: list = field(default_factory=list)
    base: np.ndarray | None = None

    @property
    def t_range(self) -> tuple:
        ts = [s.t for s in self.samples]
        return (min(ts), max(ts)) if ts else (float("nan"), float("nan"))

    def at(self, t: float) -> StripSample:
        best = min(self.samples, key=lambda s: abs(s.t - t))
        return best

    def halfwidth(self, t: float) -> float:
        ts = np.array([s.t for s in self.samples])
        hw = np.array([s.halfwidth for s in self.samples])
        return float(np.interp(t, ts, hw))

    def contains(self, t: float, a: float) -> bool:
        s = self.at(t)
        return min(s.a_lo, s.a_hi) <= a <= max(s.a_lo, s.a_hi)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "sa_n", "halfwidth"])
        for s in self.samples:
            w.writerow([f"{s.t:.17g}", f"{s.sa:.17g}", f"{s.halfwidth:.17g}"])
        return buf.getvalue()


class _Normalizer:
    """Normalization at fixed (n, t) with warm-started critical points."""

    def __init__(self, family, transit, n, t, base=None, mu=None, **kw):
        self.family = family
        self.transit = transit
        self.n = n
        self.t = t
        self.base = base
        self.kw = kw
        pv = transit.param(family, t, transit.a_tang(t), base)
        self.mu = _mu_estimate(family, pv, transit) if mu is None else mu
        self.seed = None

    def __call__(self, a: float, seed=None) -> ReturnMapData:
        pv = self.transit.param(self.family, self.t, a, self.base)
        s = self.seed if seed is None else seed
        data = normalize(self.family, pv, self.n, self.transit.N, s, mu=self.mu,
                         center=float(self.transit.q1[0]), r1=self.transit.r1, **self.kw)
        return data


def _solve_nu(norm: _Normalizer, target: float, a0: float, nu0: float, slope: float,
              seed, tol: float = 1e-9, max_iter: int = 40):
    a_prev, nu_prev = a0, nu0
    a = a0 + (target - nu0) / slope
    s = seed
    for _ in range(max_iter):
        d = norm(a, s)
        s = d.c
        if abs(d.nu - target) < tol * max(1.0, abs(target)):
            return a, d
        if d.nu == nu_prev:
            break
        a_new = a - (d.nu - target) * (a - a_prev) / (d.nu - nu_prev)
        a_prev, nu_prev = a, d.nu
        a = a_new
    raise StripError(f"nu = {target} not reached")


def build_strip(family: MapFamily, locus: StrongSinkLocus, transit: TransitData,
                nu_range=(-3.5, 0.5), base=None, shrink: float = 0.8,
                min_fraction: float = 0.3, **norm_kw) -> HenonStrip:
    """Per t, find a_lo, a_hi with nu(a_lo) = nu_range[0], nu(a_hi) = nu_range[1]."""
    if not locus.samples:
        raise StripError("empty strong sink locus")
    strip = HenonStrip(n=locus.n, N=locus.N, samples=[], nu_range=tuple(nu_range),
                       transit=transit, base=base)
    for t, sa, _, orb in locus.samples:
        norm = _Normalizer(family, transit, locus.n, t, base, **norm_kw)
        seed = orb[0]
        try:
            d0 = norm(sa, seed)
        except (NormalizationError, NoConvergenceError, OutsideBoxError) as exc:
            strip.failures.append((t, f"center: {exc}"))
            continue
        da = 1e-4 * norm.mu ** (-2 * locus.n)
        dp = norm(sa + da, d0.c)
        slope = (dp.nu - d0.nu) / da
        ends = []
        for target in nu_range:
            tgt = target
            found = None
            while abs(tgt) >= min_fraction * abs(target):
                try:
                    found = _solve_nu(norm, tgt, sa, d0.nu, slope, d0.c)
                    break
                except (StripError, NormalizationError, NoConvergenceError, OutsideBoxError):
                    tgt *= shrink
            if found is None:
                break
            ends.append((found[0], tgt))
        if len(ends) < 2:
            strip.failures.append((t, "edge normalization failed down to the width floor"))
            continue
        strip.samples.append(StripSample(t=t, sa=sa, a_lo=ends[0][0], a_hi=ends[1][0],
                                         nu_lo=ends[0][1], nu_hi=ends[1][1], orbit=orb,
                                         c_seed=d0.c))
    if not strip.samples:
        raise StripError("no strip sample succeeded")
    return strip


# ---------------------------------------------------------------------------
# scaling probe


@dataclass
class ScalingProbe:
    n_list: list
    dnu_da: list
    dnu_dt: list
    widths: list
    eps_sup: list
    rescale: list
    dnu_dbeta: list
    slope_a: float
    slope_t: float
    slope_width: float
    slope_eps: float
    log_mu: float
    nu_center: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, np.ndarray) else v.tolist())
                for k, v in self.__dict__.items()}


def _fit_slope(ns, vals) -> float:
    ns = np.asarray(ns, dtype=float)
    vals = np.asarray(vals, dtype=float)
    return float(np.polyfit(ns, np.log(np.abs(vals)), 1)[0])


def scaling_probe(family: MapFamily, t: float, n_list, transit: TransitData, base=None,
                  nu_range=(-3.5, 0.5), with_widths: bool = True) -> ScalingProbe:
    """Finite-difference rates of nu at strip centers across n."""
    n_list = [check_int(n, "n", 1) for n in n_list]
    if len(n_list) < 3:
        raise ProbeError("need at least three n values for a fit with two degrees of freedom")
    pv0 = transit.param(family, t, transit.a_tang(t), base)
    mu = _mu_estimate(family, pv0, transit)
    da_list, dt_list, widths, eps, resc, dbeta, nuc = [], [], [], [], [], [], []
    for n in n_list:
        loc = strong_sink_locus(family, n, [t], transit, base)
        if not loc.samples:
            raise ProbeError(f"no strong sink for n={n}")
        _, sa, _, orb = loc.samples[0]
        norm = _Normalizer(family, transit, n, t, base, mu=mu)
        d0 = norm(sa, orb[0])
        h = 1e-3 * mu ** (-2 * n)
        dp, dm = norm(sa + h, d0.c), norm(sa - h, d0.c)
        dnda = (dp.nu - dm.nu) / (2 * h)
        ht = 1e-4 / n
        nt = []
        for tt in (t + ht, t - ht):
            normt = _Normalizer(family, transit, n, tt, base)
            nt.append(normt(sa, d0.c).nu)
        dndt = (nt[0] - nt[1]) / (2 * ht)
        da_list.append(dnda)
        dt_list.append(dndt)
        eps.append(d0.eps_sup)
        resc.append(d0.rescale)
        nuc.append(d0.nu)
        dbeta.append(dnda * mu ** (-2 * n))
        if with_widths:
            st = build_strip(family, loc, transit, nu_range, base)
            widths.append(st.samples[0].width)
    ns = np.array(n_list, dtype=float)
    return ScalingProbe(
        n_list=n_list, dnu_da=da_list, dnu_dt=dt_list, widths=widths, eps_sup=eps,
        rescale=resc, dnu_dbeta=dbeta, slope_a=_fit_slope(ns, da_list),
        slope_t=_fit_slope(ns, np.abs(dt_list) / ns),
        slope_width=_fit_slope(ns, widths) if widths else float("nan"),
        slope_eps=_fit_slope(ns, eps), log_mu=math.log(mu), nu_center=nuc)


# ---------------------------------------------------------------------------
# estimator


class ReturnMapNormalizer(BaseEstimator):
    """Normalizes the (n+N)-th return map at a batch of (t, a) points.

    ``fit`` records the strong sink at each distinct t; ``transform`` returns
    rows ``(nu, eps_sup, rescale, containment_margin)``.
    """

    def __init__(self, family=None, transit=None, n=4, base=None, U_radius=3.0, grid_size=33):
        self.family = family
        self.transit = transit
        self.n = n
        self.base = base
        self.U_radius = U_radius
        self.grid_size = grid_size

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != 2:
            raise ValueError("X must have columns (t, a)")
        ts = sorted(set(float(t) for t in X[:, 0]))
        self.locus_ = strong_sink_locus(self.family, self.n, ts, self.transit, self.base)
        self.seeds_ = {s[0]: s[3][0] for s in self.locus_.samples}
        return self

    def transform(self, X):
        check_is_fitted(self, "seeds_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], 4))
        for i, (t, a) in enumerate(X):
            seed = self.seeds_.get(float(t))
            if seed is None:
                raise StripError(f"t={t} was not seen in fit")
            norm = _Normalizer(self.family, self.transit, self.n, float(t), self.base,
                               U_radius=self.U_radius, grid_size=self.grid_size)
            d = norm(float(a), seed)
            out[i] = (d.nu, d.eps_sup, d.rescale, d.containment_margin)
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)


def normalization_report(data: ReturnMapData) -> str:
    return json.dumps(data.to_dict(), allow_nan=True)
