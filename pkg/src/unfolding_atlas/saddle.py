"""Periodic saddles, spectral checks and polynomial linearizing charts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels as K
from . import polyseries as ps
from .ddouble import dd_product_less_than_one
from .exceptions import (NearResonanceError, NoConvergenceError, RadiusTooLargeError,
                         SpectralDegeneracyError)
from .family import MapFamily, orbit_jacobian
from .validation import as_point, as_points, check_int, check_positive


@dataclass
class Saddle:
    location: np.ndarray
    period: int
    lam: complex | float
    mu: complex | float
    eigvecs: np.ndarray  # columns: stable, unstable
    kind: str = "saddle"
    dissipative3: bool = False
    nonres_order: int = 0
    nonres_ok: bool = True
    residual: float = 0.0
    orbit: np.ndarray | None = None
    monodromy: np.ndarray | None = None

    @property
    def stable_vector(self) -> np.ndarray:
        return self.eigvecs[:, 0]

    @property
    def unstable_vector(self) -> np.ndarray:
        return self.eigvecs[:, 1]

    def to_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "period": self.period, "kind": self.kind,
            "lambda": _num(self.lam), "mu": _num(self.mu),
            "eigvecs": [[float(v) for v in self.eigvecs[:, k]] for k in range(2)],
            "dissipative3": self.dissipative3, "nonres_order": self.nonres_order,
            "nonres_ok": self.nonres_ok, "residual": self.residual,
        }


def _num(v):
    if isinstance(v, complex) or np.iscomplexobj(v):
        return [float(np.real(v)), float(np.imag(v))]
    return float(v)


def solve_periodic_orbit(family: MapFamily, p, seed_orbit, tol: float = 1e-12,
                         max_iter: int = 50) -> tuple[np.ndarray, float]:
    """Multiple-shooting Newton for a period-P orbit z_{i+1} = F(z_i), z_P = z_0.

    ``seed_orbit`` has shape (P, 2).  Returns (orbit, residual).
    """
    Z = as_points(seed_orbit, "seed_orbit").copy()
    P = Z.shape[0]
    coef = family.coef(p)
    kc = family.kind_code

    def resid(Z):
        FZ = K.eval_many(kc, coef, Z)
        return FZ - np.roll(Z, -1, axis=0)

    r = resid(Z)
    scale = max(1.0, float(np.max(np.abs(Z))))
    res = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if res <= tol * scale:
            return Z, res
        J = K.jac_many(kc, coef, Z)
        if P == 1:
            step = np.linalg.solve(J[0] - np.eye(2), -r[0]).reshape(1, 2)
        else:
            rows, cols, vals = [], [], []
            for i in range(P):
                for a in range(2):
                    for b in range(2):
                        rows.append(2 * i + a)
                        cols.append(2 * i + b)
                        vals.append(J[i, a, b])
                    rows.append(2 * i + a)
                    cols.append(2 * ((i + 1) % P) + a)
                    vals.append(-1.0)
            A = sp.csc_matrix((vals, (rows, cols)), shape=(2 * P, 2 * P))
            step = spla.spsolve(A, -r.ravel()).reshape(P, 2)
        if not np.all(np.isfinite(step)):
            raise NoConvergenceError("singular periodic-orbit Jacobian", res)
        t = 1.0
        while True:
            Zn = Z + t * step
            rn = resid(Zn)
            rn_max = float(np.max(np.abs(rn))) if np.all(np.isfinite(rn)) else np.inf
            if rn_max < res or t < 1e-4:
                break
            t *= 0.5
        Z, r, res = Zn, rn, rn_max
        scale = max(1.0, float(np.max(np.abs(Z))))
    if res <= tol * scale:
        return Z, res
    raise NoConvergenceError(f"periodic orbit Newton stalled at residual {res:.3e}", res)


def monodromy(family: MapFamily, p, orbit: np.ndarray) -> np.ndarray:
    """DF^P at orbit[0] as the product of Jacobians along the orbit."""
    J = family.jacobian(p, orbit)
    M = np.eye(2)
    for k in range(orbit.shape[0]):
        M = J[k] @ M
    return M


def classify_multipliers(ev) -> str:
    m = np.abs(ev)
    if np.any(np.abs(m - 1.0) < 1e-12):
        return "non-hyperbolic"
    if np.iscomplexobj(ev) and np.any(np.abs(np.imag(ev)) > 0):
        return "focus-sink" if np.all(m < 1) else "focus-source"
    if np.all(m < 1):
        return "sink"
    if np.all(m > 1):
        return "source"
    return "saddle"


def find_periodic_point(family: MapFamily, p, period: int, seed, newton_tol: float = 1e-12,
                        max_iter: int = 50) -> Saddle:
    """Newton on F^period(z) = z (multiple shooting), then eigendata and flags."""
    period = check_int(period, "period", 1)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.ndim == 1:
        seed = as_point(seed, "seed")
        orbit = np.empty((period, 2))
        orbit[0] = seed
        coef = family.coef(p)
        for k in range(1, period):
            orbit[k] = K.step(family.kind_code, coef, *orbit[k - 1])
    else:
        orbit = seed
    orbit, res = solve_periodic_orbit(family, p, orbit, newton_tol, max_iter)
    M = monodromy(family, p, orbit)
    ev, V = np.linalg.eig(M)
    kind = classify_multipliers(ev)
    if np.all(np.abs(np.imag(ev)) == 0):
        ev = np.real(ev)
        V = np.real(V)
        order = np.argsort(np.abs(ev))
        ev = ev[order]
        V = V[:, order]
        for k in range(2):
            V[:, k] /= np.linalg.norm(V[:, k])
            nz = V[:, k][np.abs(V[:, k]) > 1e-14]
            if nz.size and nz[0] < 0:
                V[:, k] = -V[:, k]
        lam, mu = float(ev[0]), float(ev[1])
    else:
        lam, mu = complex(ev[0]), complex(ev[1])
    s = Saddle(location=orbit[0].copy(), period=period, lam=lam, mu=mu, eigvecs=V, kind=kind,
               residual=res, orbit=orbit, monodromy=M)
    if kind == "saddle":
        s.dissipative3 = dd_product_less_than_one([lam, mu, mu, mu])
        s.nonres_ok, _ = check_nonresonance(s, 10)
        s.nonres_order = 10
    return s


def check_nonresonance(saddle: Saddle, kappa: int = 10, res_tol: float = 1e-8):
    """Scan lam != mu^k1 and mu != lam^k2 for 2 <= k1 + k2 <= kappa.

    Returns (ok, offending (k1, k2) or None).
    """
    lam, mu = saddle.lam, saddle.mu
    if np.iscomplexobj(lam) or isinstance(lam, complex):
        raise SpectralDegeneracyError("complex multipliers: not a saddle")
    if abs(abs(lam) - 1.0) < 1e-14 or abs(abs(mu) - 1.0) < 1e-14:
        raise SpectralDegeneracyError("multiplier on the unit circle")
    for total in range(2, kappa + 1):
        for k1 in range(0, total + 1):
            k2 = total - k1
            if k1 >= 1 and _close(lam, mu ** k1, res_tol):
                return False, (k1, k2)
            if k2 >= 1 and lam != 0.0 and _close(mu, lam ** k2, res_tol):
                return False, (k1, k2)
    return True, None


def _close(a, b, tol):
    return abs(a - b) <= tol * max(abs(a), abs(b))


@dataclass
class LinearizationChart:
    degree: int
    lam: float
    mu: float
    forward_coeffs: np.ndarray  # h in eigen coordinates, shape (2, D+1, D+1)
    inverse_coeffs: np.ndarray
    domain_radius: float
    residual_bound: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    frame: np.ndarray = field(default_factory=lambda: np.eye(2))
    inverse_residual: float = 0.0

    def to_local(self, z) -> np.ndarray:
        z = as_points(z)
        return np.linalg.solve(self.frame, (z - self.origin).T).T

    def from_local(self, zeta) -> np.ndarray:
        zeta = as_points(zeta)
        return zeta @ self.frame.T + self.origin

    def h(self, zeta) -> np.ndarray:
        return ps.evaluate(self.forward_coeffs, as_points(zeta))

    def h_inv(self, w) -> np.ndarray:
        return ps.evaluate(self.inverse_coeffs, as_points(w))

    def forward(self, z) -> np.ndarray:
        """Chart coordinates of plane points."""
        return self.h(self.to_local(z))

    def backward(self, w) -> np.ndarray:
        return self.from_local(self.h_inv(w))

    def to_dict(self) -> dict:
        return {
            "degree": self.degree, "lambda": self.lam, "mu": self.mu,
            "forward_coeffs": self.forward_coeffs.tolist(),
            "inverse_coeffs": self.inverse_coeffs.tolist(),
            "domain_radius": self.domain_radius, "residual_bound": self.residual_bound,
            "origin": self.origin.tolist(), "frame": self.frame.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def taylor_return(family: MapFamily, p, orbit: np.ndarray, D: int) -> np.ndarray:
    """Series of delta -> F^P(z_0 + delta) - z_0 along a periodic orbit."""
    G = ps.identity(D)
    P = orbit.shape[0]
    for k in range(P):
        A, (ox, oy) = family.local_poly(p, orbit[k])
        zk = orbit[k]
        shift = np.array([zk[0] - ox, zk[1] - oy])
        # x - ox = shift + delta
        U = G[0].copy()
        W = G[1].copy()
        U[0, 0] += shift[0]
        W[0, 0] += shift[1]
        A = ps.pad(A, max(D, A.shape[-1] - 1)) if A.shape[-1] - 1 < D else A
        newG = np.stack([ps.compose(A[c], U, W, D) for c in range(2)])
        znext = orbit[(k + 1) % P]
        newG[0, 0, 0] -= znext[0]
        newG[1, 0, 0] -= znext[1]
        newG[:, 0, 0] = 0.0  # periodic orbit: constant term vanishes up to roundoff
        G = newG
    return G


def linearize(family: MapFamily, p, saddle: Saddle, degree: int = 3, radius: float = 0.05,
              div_tol: float = 1e-8, residual_cap: float = 1e-2, n_radial: int = 12,
              n_angle: int = 64) -> LinearizationChart:
    """Solve h o F = Lambda o h order by order in eigen coordinates at the saddle."""
    D = check_int(degree, "degree", 1)
    check_positive(radius, "radius")
    if saddle.kind != "saddle":
        raise SpectralDegeneracyError(f"point is a {saddle.kind}, not a saddle")
    lam, mu = float(saddle.lam), float(saddle.mu)
    orbit = saddle.orbit if saddle.orbit is not None else saddle.location.reshape(1, 2)
    E = saddle.eigvecs
    Einv = np.linalg.inv(E)
    G = taylor_return(family, p, orbit, D)
    # to eigen coordinates: F_e(zeta) = Einv G(E zeta)
    Ez = ps.affine(E, np.zeros(2), D)
    Gz = ps.compose_map(G, Ez, D)
    Fe = np.stack([Einv[c, 0] * Gz[0] + Einv[c, 1] * Gz[1] for c in range(2)])
    Lin = np.zeros_like(Fe)
    Lin[0, 1, 0] = lam
    Lin[1, 0, 1] = mu
    f = Fe.copy()
    f[0, 1, 0] = f[0, 0, 1] = f[1, 1, 0] = f[1, 0, 1] = 0.0
    f[:, 0, 0] = 0.0
    eig = (lam, mu)
    phi = np.zeros_like(Fe)
    arg = Lin + f
    fscale = max(1.0, float(np.max(np.abs(f))))
    for m in range(2, D + 1):
        comp = ps.compose_map(phi, arg, D) + f
        for c in range(2):
            for i in range(m + 1):
                j = m - i
                rhs = -comp[c, i, j]
                div = lam ** i * mu ** j - eig[c]
                scale = max(1.0, abs(eig[c]), abs(lam ** i * mu ** j))
                if abs(div) < div_tol * scale:
                    if abs(rhs) <= 1e-12 * fscale:
                        phi[c, i, j] = 0.0
                        continue
                    raise NearResonanceError(
                        f"small divisor {div:.3e} at component {c}, monomial u^{i} w^{j}",
                        (c, i, j))
                phi[c, i, j] = rhs / div
    h = ps.identity(D) + phi
    # inverse by fixed point g = id - phi(g)
    g = ps.identity(D)
    for _ in range(D + 1):
        g = ps.identity(D) - ps.compose_map(phi, g, D)
    chart = LinearizationChart(D, lam, mu, h, g, float(radius), 0.0, saddle.location.copy(), E.copy())
    chart.residual_bound = conjugacy_residual(family, p, saddle, chart, radius, n_radial, n_angle)
    zeta = _ball_grid(radius, n_radial, n_angle)
    back = ps.evaluate(g, ps.evaluate(h, zeta))
    chart.inverse_residual = float(np.max(np.linalg.norm(back - zeta, axis=1)))
    if chart.residual_bound > residual_cap:
        raise RadiusTooLargeError(
            f"conjugacy residual {chart.residual_bound:.3e} exceeds cap {residual_cap:.1e} at radius {radius}")
    return chart


def _ball_grid(radius, n_radial, n_angle):
    rs = radius * np.arange(1, n_radial + 1) / n_radial
    th = 2 * np.pi * np.arange(n_angle) / n_angle
    R, T = np.meshgrid(rs, th)
    pts = np.column_stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    return np.vstack([[0.0, 0.0], pts])


def conjugacy_residual(family, p, saddle, chart, radius, n_radial=12, n_angle=64) -> float:
    """sup over the radius ball (eigen coordinates) of |h(F(z)) - Lambda h(z)|."""
    zeta = _ball_grid(radius, n_radial, n_angle)
    z = chart.from_local(zeta)
    coef = family.coef(p)
    Fz = z.copy()
    for _ in range(saddle.period):
        Fz = K.eval_many(family.kind_code, coef, Fz)
    zeta_next = chart.to_local(Fz)
    lhs = chart.h(zeta_next)
    rhs = chart.h(zeta) * np.array([chart.lam, chart.mu])
    return float(np.max(np.linalg.norm(lhs - rhs, axis=1)))


def track_saddle(family: MapFamily, p, seed, period: int = 1) -> Saddle:
    s = find_periodic_point(family, p, period, seed)
    if s.kind != "saddle":
        raise SpectralDegeneracyError(f"continued point is a {s.kind}")
    return s


class SaddleLinearizer(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit`` locates the saddle and builds the chart.

    ``transform`` maps plane points to linearizing coordinates in which the
    map acts as ``diag(lambda, mu)``; ``inverse_transform`` maps back.
    """

    def __init__(self, family=None, params=None, seed=None, period=1, degree=3, radius=0.05,
                 kappa=10):
        self.family = family
        self.params = params
        self.seed = seed
        self.period = period
        self.degree = degree
        self.radius = radius
        self.kappa = kappa

    def fit(self, X=None, y=None):
        if self.family is None or self.params is None or self.seed is None:
            raise ValueError("family, params and seed are required")
        self.saddle_ = find_periodic_point(self.family, self.params, self.period, self.seed)
        ok, pair = check_nonresonance(self.saddle_, self.kappa)
        if not ok:
            raise NearResonanceError(f"resonance at {pair}", None)
        self.chart_ = linearize(self.family, self.params, self.saddle_, self.degree, self.radius)
        return self

    def transform(self, X):
        check_is_fitted(self, "chart_")
        return self.chart_.forward(as_points(X, "X"))

    def inverse_transform(self, X):
        check_is_fitted(self, "chart_")
        return self.chart_.backward(as_points(X, "X"))
