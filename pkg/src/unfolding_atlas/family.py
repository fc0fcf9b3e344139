"""Parametric planar map families, evaluators and orbit iteration."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from . import ddouble as dd
from .exceptions import DomainError, NoConvergenceError, ParameterShapeError
from .validation import as_params, as_point, as_points, check_int

PRECISION_MODES = ("double", "extended")
UNIT_ROUNDOFF = {"double": 2.0 ** -53, "extended": 2.0 ** -104}
DEFAULT_BAILOUT = 1e6


@dataclass(frozen=True)
class ParamPoint:
    """A point in parameter space, ordered like the family's ``param_names``."""

    coords: tuple[float, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(c) for c in self.coords))
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != len(self.coords):
                raise ParameterShapeError("names and coords differ in length")

    def __len__(self):
        return len(self.coords)

    def __getitem__(self, i):
        if isinstance(i, str):
            if self.names is None:
                raise KeyError(i)
            return self.coords[self.names.index(i)]
        return self.coords[i]

    def __iter__(self):
        return iter(self.coords)

    def replace(self, **kw) -> "ParamPoint":
        if self.names is None:
            raise KeyError("unnamed parameter point")
        c = list(self.coords)
        for k, v in kw.items():
            c[self.names.index(k)] = float(v)
        return ParamPoint(tuple(c), self.names)

    def as_dict(self) -> dict:
        names = self.names or tuple(f"p{i}" for i in range(len(self.coords)))
        return dict(zip(names, self.coords))


@dataclass
class OrbitSegment:
    points: np.ndarray
    q_factors: np.ndarray
    r_factors: np.ndarray
    condition: np.ndarray
    precision_mode: str = "double"
    escaped: bool = False
    escape_index: int | None = None
    points_lo: np.ndarray | None = None

    @property
    def cocycle(self):
        """Per-step (Q_{k+1}, R_k) pairs with DF(z_k) Q_k = Q_{k+1} R_k."""
        return list(zip(self.q_factors[1:], self.r_factors))

    def derivative(self) -> np.ndarray:
        """DF^n reassembled from the cocycle: Q_n R_{n-1} ... R_0."""
        n = self.r_factors.shape[0]
        M = np.eye(2)
        for k in range(n):
            M = self.r_factors[k] @ M
        return self.q_factors[n] @ M

    def __len__(self):
        return self.points.shape[0]


class MapFamily:
    """Base class. Subclasses provide kernel coefficients and extended evaluation."""

    kind: str = "abstract"
    kind_code: int = -1

    def __init__(self, param_names: Sequence[str], degree: int):
        self.param_names = tuple(param_names)
        self.degree = int(degree)
        self._coef_cache: dict = {}

    # plumbing
    def params(self, p) -> np.ndarray:
        return as_params(p, self.param_names)

    def point(self, *coords) -> ParamPoint:
        if len(coords) == 1 and not np.isscalar(coords[0]):
            coords = tuple(coords[0])
        return ParamPoint(tuple(coords), self.param_names)

    def coef(self, p) -> np.ndarray:
        pv = self.params(p)
        key = pv.tobytes()
        c = self._coef_cache.get(key)
        if c is None:
            c = self._build_coef(pv)
            if len(self._coef_cache) > 4096:
                self._coef_cache.clear()
            self._coef_cache[key] = c
        return c

    def _build_coef(self, pv: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # evaluators
    def eval(self, p, z) -> np.ndarray:
        pts = np.asarray(z, dtype=np.float64)
        single = pts.ndim == 1
        pts = as_points(pts)
        out = K.eval_many(self.kind_code, self.coef(p), pts)
        return out[0] if single else out

    def jacobian(self, p, z) -> np.ndarray:
        pts = np.asarray(z, dtype=np.float64)
        single = pts.ndim == 1
        pts = as_points(pts)
        out = K.jac_many(self.kind_code, self.coef(p), pts)
        return out[0] if single else out

    def param_jet(self, p, z) -> np.ndarray:
        raise NotImplementedError

    def eval_dd(self, p, xh, xl, yh, yl):
        raise NotImplementedError

    def inverse(self, p, w, seed=None, tol: float = 1e-14, max_iter: int = 60) -> np.ndarray:
        """Solve F(z) = w by damped Newton, seeded at ``seed`` (default ``w``)."""
        w = as_point(w, "w")
        z = w.copy() if seed is None else as_point(seed, "seed").copy()
        res = np.inf
        for _ in range(max_iter):
            r = self.eval(p, z) - w
            res = float(np.max(np.abs(r)))
            if res <= tol * max(1.0, float(np.max(np.abs(w)))):
                return z
            J = self.jacobian(p, z)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError as exc:
                raise NoConvergenceError("singular Jacobian in inverse", res) from exc
            lam = 1.0
            while lam > 1e-6:
                zn = z + lam * step
                if np.all(np.isfinite(zn)) and np.max(np.abs(self.eval(p, zn) - w)) < res:
                    break
                lam *= 0.5
            z = z + lam * step
        raise NoConvergenceError("inverse Newton did not converge", res)

    def inverse_many(self, p, pts, **kw) -> np.ndarray:
        """Row-wise inverse; non-convergent rows become NaN."""
        pts = as_points(pts)
        out = np.full_like(pts, np.nan)
        for i, w in enumerate(pts):
            try:
                out[i] = self.inverse(p, w, **kw)
            except NoConvergenceError:
                pass
        return out

    def is_invertible(self, p) -> bool:
        return True

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r}, params={list(self.param_names)})"


_TOKEN = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*)(?:\^(\d+))?$")


def _parse_monomial(key: str, param_names: Sequence[str]):
    """Parse ``"x^i y^j p^k"``-style keys into (i, j, param exponent tuple)."""
    i = j = 0
    kv = [0] * len(param_names)
    key = key.strip()
    if key in ("", "1"):
        return i, j, tuple(kv)
    for tok in re.split(r"[\s*]+", key):
        if tok == "1":
            continue
        m = _TOKEN.match(tok)
        if not m:
            raise ValueError(f"bad monomial token {tok!r} in {key!r}")
        name, exp = m.group(1), int(m.group(2) or 1)
        if name == "x":
            i += exp
        elif name == "y":
            j += exp
        elif name in param_names:
            kv[param_names.index(name)] += exp
        elif name == "p" and len(param_names) == 1:
            kv[0] += exp
        elif re.fullmatch(r"p\d+", name) and int(name[1:]) < len(param_names):
            kv[int(name[1:])] += exp
        else:
            raise ValueError(f"unknown symbol {name!r} in monomial {key!r}")
    return i, j, tuple(kv)


def _monomial_key(i: int, j: int, kv, param_names) -> str:
    parts = [f"x^{i}", f"y^{j}"]
    parts += [f"{n}^{k}" for n, k in zip(param_names, kv) if k]
    return " ".join(parts)


class PolynomialFamily(MapFamily):
    """Planar polynomial map with coefficients polynomial in the parameters.

    Stored as a dense table ``C[comp, i, j, k_1, ..., k_P]`` multiplying
    ``x^i y^j p_1^{k_1} ... p_P^{k_P}``.
    """

    kind_code = K.KIND_POLY

    def __init__(self, coeffs: Mapping, param_names: Sequence[str], degree: int | None = None,
                 kind: str = "polynomial"):
        param_names = tuple(param_names)
        parsed = []
        for comp_key, terms in coeffs.items():
            comp = {"x": 0, "0": 0, 0: 0, "y": 1, "1": 1, 1: 1}.get(comp_key)
            if comp is None:
                raise ValueError(f"unknown component {comp_key!r}")
            for mono, val in terms.items():
                i, j, kv = _parse_monomial(str(mono), param_names)
                parsed.append((comp, i, j, kv, float(val)))
        deg_found = max([i + j for _, i, j, _, _ in parsed] + [1])
        if degree is None:
            degree = max(deg_found, 2)
        if deg_found > degree:
            raise ValueError(f"monomial degree {deg_found} exceeds declared degree {degree}")
        super().__init__(param_names, degree)
        self.kind = kind
        pdeg = max([max(kv) if kv else 0 for *_, kv, _ in parsed] + [0])
        shape = (2, degree + 1, degree + 1) + (pdeg + 1,) * len(param_names)
        self.table = np.zeros(shape)
        for comp, i, j, kv, val in parsed:
            self.table[(comp, i, j) + kv] += val
        self._pdeg = pdeg

    def spatial_table(self, p, dparam: int | None = None) -> np.ndarray:
        """Coefficients A[comp, i, j] at parameter p (or their p-derivative)."""
        pv = self.params(p)
        A = self.table
        for m in range(len(self.param_names) - 1, -1, -1):
            ks = np.arange(self._pdeg + 1)
            if dparam == m:
                w = np.where(ks > 0, ks * np.power(pv[m], np.maximum(ks - 1, 0)), 0.0)
            else:
                w = np.power(pv[m], ks)
            A = A @ w
        return A

    def _build_coef(self, pv):
        A = self.spatial_table(pv)
        d = self.degree
        n1 = d + 1
        tabs = [A[0], A[1]]
        for comp in (0, 1):
            ax = np.zeros((n1, n1))
            ay = np.zeros((n1, n1))
            for i in range(n1):
                for j in range(n1):
                    if i > 0:
                        ax[i - 1, j] += i * A[comp, i, j]
                    if j > 0:
                        ay[i, j - 1] += j * A[comp, i, j]
            tabs += [ax, ay]
        tabs += [np.abs(A[0]), np.abs(A[1])]
        return np.concatenate([[float(d)]] + [t.ravel() for t in tabs])

    def param_jet(self, p, z) -> np.ndarray:
        pts = np.asarray(z, dtype=np.float64)
        single = pts.ndim == 1
        pts = as_points(pts)
        out = np.empty((pts.shape[0], len(self.param_names), 2))
        for m in range(len(self.param_names)):
            A = self.spatial_table(p, dparam=m)
            out[:, m, 0] = _poly_eval(A[0], pts[:, 0], pts[:, 1])
            out[:, m, 1] = _poly_eval(A[1], pts[:, 0], pts[:, 1])
        return out[0] if single else out

    def eval_dd(self, p, xh, xl, yh, yl):
        A = self.spatial_table(p)
        d = self.degree
        res = []
        for comp in (0, 1):
            acc = dd.dd_from(np.zeros_like(np.asarray(xh, dtype=np.float64)))
            for i in range(d, -1, -1):
                row = dd.dd_poly_horner(A[comp, i, :], yh, yl)
                acc = dd.dd_mul(*acc, xh, xl)
                acc = dd.dd_add(*acc, *row)
            res.append(acc)
        return res[0][0], res[0][1], res[1][0], res[1][1]

    def _henon_like(self, p):
        """Return A if the second component is exactly ``x`` and the first is affine in y."""
        A = self.spatial_table(p)
        target = np.zeros_like(A[1])
        target[1, 0] = 1.0
        if not np.array_equal(A[1], target):
            return None
        if np.any(A[0][:, 2:] != 0) or np.any(A[0][1:, 1] != 0):
            return None
        return A

    def inverse(self, p, w, seed=None, tol: float = 1e-14, max_iter: int = 60):
        A = self._henon_like(p)
        if A is not None and A[0][0, 1] != 0.0:
            w = as_point(w, "w")
            x = w[1]
            rest = _poly_eval(A[0][:, :1], np.array([x]), np.array([0.0]))[0]
            return np.array([x, (w[0] - rest) / A[0][0, 1]])
        return super().inverse(p, w, seed, tol, max_iter)

    def inverse_many(self, p, pts, **kw) -> np.ndarray:
        A = self._henon_like(p)
        if A is not None and A[0][0, 1] != 0.0:
            pts = as_points(pts)
            x = pts[:, 1].copy()
            rest = _poly_eval(A[0][:, :1], x, np.zeros_like(x))
            return np.column_stack([x, (pts[:, 0] - rest) / A[0][0, 1]])
        return super().inverse_many(p, pts, **kw)

    def local_poly(self, p, z):
        """Polynomial piece valid near z: F(x, y) = A(x - ox, y - oy)."""
        return self.spatial_table(p), (0.0, 0.0)

    def is_invertible(self, p) -> bool:
        A = self._henon_like(p)
        if A is not None:
            return A[0][0, 1] != 0.0
        return True

    def to_dict(self) -> dict:
        coeffs: dict = {"x": {}, "y": {}}
        it = np.ndindex(*self.table.shape)
        for idx in it:
            val = self.table[idx]
            if val != 0.0:
                comp, i, j, kv = idx[0], idx[1], idx[2], idx[3:]
                coeffs["xy"[comp]][_monomial_key(i, j, kv, self.param_names)] = float(val)
        return {"kind": self.kind, "degree": self.degree,
                "params": list(self.param_names), "coeffs": coeffs}


def _poly_eval(A, x, y):
    n1, m1 = A.shape
    acc = np.zeros_like(x)
    for i in range(n1 - 1, -1, -1):
        row = np.zeros_like(x)
        for j in range(m1 - 1, -1, -1):
            row = row * y + A[i, j]
        acc = acc * x + row
    return acc


def henon_family() -> PolynomialFamily:
    """F_{a,b}(x, y) = (a + x^2 - b y, x)."""
    return PolynomialFamily(
        {"x": {"a": 1.0, "x^2": 1.0, "y b": -1.0}, "y": {"x": 1.0}},
        ("a", "b"), degree=2, kind="henon")


def linear_family() -> PolynomialFamily:
    """F(x, y) = (lam x, mu y) with parameters (lam, mu)."""
    return PolynomialFamily({"x": {"x lam": 1.0}, "y": {"y mu": 1.0}}, ("lam", "mu"), degree=2)


def cubic_henon_family() -> PolynomialFamily:
    """(a + x^2 + tau x^3 - b y, x): Hénon with a small cubic coupling tau."""
    return PolynomialFamily(
        {"x": {"a": 1.0, "x^2": 1.0, "x^3 tau": 1.0, "y b": -1.0}, "y": {"x": 1.0}},
        ("a", "b", "tau"), degree=3, kind="polynomial")


MODEL_DEFAULTS = dict(
    lam0=0.04, lam1=0.0, mu0=2.5, mu1=0.5, mu_tau=0.0,
    kappa=2.0, kappa3=0.5, c=-1.0, c2=0.2, d=0.5, e=-0.5,
    q1x=2.0, y_lo=0.75, x_win=1.0, N=1, shift=10.0, theta=0.0, a_tau=0.0,
)


class UnfoldingModel(MapFamily):
    """Piecewise test family with a linear saddle and an explicit fold transit.

    Near the saddle the map is ``(lam x, mu(t) y)``.  Points with ``y >= y_lo``
    and ``|x| <= x_win`` pass ``N - 1`` shift steps and then the fold

        x' = q1x + c Y + c2 Y^2 + d x,   y' = a + theta t + kappa Y^2 + kappa3 Y^3 + e x,

    with ``Y = y - 1``.  At ``a = 0`` the unstable manifold touches the x-axis
    (the local stable manifold) quadratically at ``(q1x, 0)``.
    """

    kind = "unfolding-model"
    kind_code = K.KIND_MODEL

    def __init__(self, with_tau: bool = False, **constants):
        unknown = set(constants) - set(MODEL_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown model constants {sorted(unknown)}")
        self.constants = {**MODEL_DEFAULTS, **constants}
        self.constants["N"] = check_int(self.constants["N"], "N", 1)
        names = ("t", "a", "tau") if with_tau else ("t", "a")
        super().__init__(names, 3)

    def _unpack(self, pv):
        c = self.constants
        t, a = pv[0], pv[1]
        tau = pv[2] if len(pv) > 2 else 0.0
        lam = c["lam0"] + c["lam1"] * t
        mu = c["mu0"] + c["mu1"] * t + c["mu_tau"] * tau
        a_eff = a + c["theta"] * t + c["a_tau"] * tau
        return lam, mu, a_eff

    def mu(self, p) -> float:
        return float(self._unpack(self.params(p))[1])

    def lam(self, p) -> float:
        return float(self._unpack(self.params(p))[0])

    def dmu_dt(self) -> float:
        return float(self.constants["mu1"])

    def _build_coef(self, pv):
        c = self.constants
        lam, mu, a_eff = self._unpack(pv)
        vals = dict(lam=lam, mu=mu, kappa=c["kappa"], kappa3=c["kappa3"], c=c["c"],
                    c2=c["c2"], d=c["d"], e=c["e"], q1x=c["q1x"], y_lo=c["y_lo"],
                    x_win=c["x_win"], N=float(c["N"]), a_eff=a_eff, shift=c["shift"])
        return np.array([vals[k] for k in K.MODEL_FIELDS], dtype=np.float64)

    def regions(self, p, pts) -> np.ndarray:
        coef = self.coef(p)
        pts = as_points(pts)
        return np.array([K._model_region(coef, x, y)[0] for x, y in pts])

    def local_poly(self, p, z):
        """Polynomial piece valid near z: F(x, y) = A(x - ox, y - oy)."""
        coef = self.coef(p)
        z = as_point(z)
        reg, off = K._model_region(coef, z[0], z[1])
        A = np.zeros((2, 4, 4))
        if reg == 0:
            A[0, 1, 0] = coef[K.M_LAM]
            A[1, 0, 1] = coef[K.M_MU]
            return A, (0.0, 0.0)
        if reg == 2:
            A[0, 0, 0] = coef[K.M_SHIFT]
            A[0, 1, 0] = 1.0
            A[1, 0, 1] = 1.0
            return A, (0.0, 0.0)
        A[0, 0, 0] = coef[K.M_Q1X]
        A[0, 0, 1] = coef[K.M_C]
        A[0, 0, 2] = coef[K.M_C2]
        A[0, 1, 0] = coef[K.M_D]
        A[1, 0, 0] = coef[K.M_A]
        A[1, 0, 2] = coef[K.M_K]
        A[1, 0, 3] = coef[K.M_K3]
        A[1, 1, 0] = coef[K.M_E]
        return A, (off, 1.0)

    def param_jet(self, p, z) -> np.ndarray:
        pts = np.asarray(z, dtype=np.float64)
        single = pts.ndim == 1
        pts = as_points(pts)
        c = self.constants
        reg = self.regions(p, pts)
        out = np.zeros((pts.shape[0], len(self.param_names), 2))
        lin = reg == 0
        fold = reg == 1
        out[lin, 0, 0] = c["lam1"] * pts[lin, 0]
        out[lin, 0, 1] = c["mu1"] * pts[lin, 1]
        out[fold, 0, 1] = c["theta"]
        out[fold, 1, 1] = 1.0
        if len(self.param_names) > 2:
            out[lin, 2, 1] = c["mu_tau"] * pts[lin, 1]
            out[fold, 2, 1] = c["a_tau"]
        return out[0] if single else out

    def eval_dd(self, p, xh, xl, yh, yl):
        coef = self.coef(p)
        xh = np.atleast_1d(np.asarray(xh, dtype=np.float64))
        xl, yh, yl = (np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in (xl, yh, yl))
        oxh, oxl, oyh, oyl = (np.empty_like(xh) for _ in range(4))
        for idx in range(xh.size):
            reg, off = K._model_region(coef, xh[idx], yh[idx])
            x = (xh[idx], xl[idx])
            y = (yh[idx], yl[idx])
            if reg == 0:
                rx = dd.dd_mul_d(*x, coef[K.M_LAM])
                ry = dd.dd_mul_d(*y, coef[K.M_MU])
            elif reg == 2:
                rx = dd.dd_add_d(*x, coef[K.M_SHIFT])
                ry = y
            else:
                xx = dd.dd_add_d(*x, -off)
                Y = dd.dd_add_d(*y, -1.0)
                t1 = dd.dd_add_d(*dd.dd_mul_d(*Y, coef[K.M_C2]), coef[K.M_C])
                rx = dd.dd_add(*dd.dd_mul(*t1, *Y), *dd.dd_mul_d(*xx, coef[K.M_D]))
                rx = dd.dd_add_d(*rx, coef[K.M_Q1X])
                t2 = dd.dd_add_d(*dd.dd_mul_d(*Y, coef[K.M_K3]), coef[K.M_K])
                ry = dd.dd_mul(*dd.dd_mul(*t2, *Y), *Y)
                ry = dd.dd_add(*ry, *dd.dd_mul_d(*xx, coef[K.M_E]))
                ry = dd.dd_add_d(*ry, coef[K.M_A])
            oxh[idx], oxl[idx] = rx
            oyh[idx], oyl[idx] = ry
        return oxh, oxl, oyh, oyl

    def inverse(self, p, w, seed=None, tol: float = 1e-14, max_iter: int = 60, branch: str = "linear"):
        """Preimage on the chosen branch ('linear' or 'fold')."""
        w = as_point(w, "w")
        lam, mu, _ = self._unpack(self.params(p))
        if branch == "linear":
            return np.array([w[0] / lam, w[1] / mu])
        if seed is None:
            c = self.constants
            seed = np.array([0.0, 1.0 + (w[0] - c["q1x"]) / c["c"]])
        return MapFamily.inverse(self, p, w, seed, tol, max_iter)

    def inverse_many(self, p, pts, branch: str = "linear", **kw) -> np.ndarray:
        if branch == "linear":
            pts = as_points(pts)
            lam, mu, _ = self._unpack(self.params(p))
            return np.column_stack([pts[:, 0] / lam, pts[:, 1] / mu])
        return super().inverse_many(p, pts, branch=branch, **kw)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "params": list(self.param_names),
                "constants": dict(self.constants)}


def family_from_dict(spec: Mapping) -> MapFamily:
    kind = spec.get("kind", "polynomial")
    if kind == "henon" and "coeffs" not in spec:
        return henon_family()
    if kind == "unfolding-model":
        names = tuple(spec.get("params", ("t", "a")))
        return UnfoldingModel(with_tau=len(names) > 2, **spec.get("constants", {}))
    if kind in ("henon", "polynomial", "user-table"):
        return PolynomialFamily(spec["coeffs"], spec["params"], spec.get("degree"), kind=kind)
    raise ValueError(f"unknown family kind {kind!r}")


def load_family(source) -> MapFamily:
    """Load a family from a JSON path, JSON string or mapping."""
    if isinstance(source, MapFamily):
        return source
    if isinstance(source, Mapping):
        return family_from_dict(source)
    text = str(source)
    if text.lstrip().startswith("{"):
        return family_from_dict(json.loads(text))
    path = Path(source)
    if path.exists():
        return family_from_dict(json.loads(path.read_text()))
    return family_from_dict(json.loads(str(source)))


# functional API


def eval(family: MapFamily, p, z) -> np.ndarray:  # noqa: A001 - mirrors the op name
    return family.eval(p, z)


def jacobian(family: MapFamily, p, z) -> np.ndarray:
    return family.jacobian(p, z)


def param_jet(family: MapFamily, p, z) -> np.ndarray:
    return family.param_jet(p, z)


def iterate_orbit(family: MapFamily, p, z0, n: int, mode: str = "double",
                  bailout: float = DEFAULT_BAILOUT) -> OrbitSegment:
    """Iterate ``n`` steps recording points and the QR cocycle of the Jacobians."""
    n = check_int(n, "n", 1)
    if mode not in PRECISION_MODES:
        raise ValueError(f"mode must be one of {PRECISION_MODES}")
    z0 = as_point(z0, "z0")
    coef = family.coef(p)
    u = UNIT_ROUNDOFF[mode]
    pts, Q, R, cond, esc = K.orbit(family.kind_code, coef, z0[0], z0[1], n, float(bailout), u)
    lo = None
    if mode == "extended":
        pts, lo = _extended_points(family, p, z0, n, bailout)
        esc_ext = np.where(~(np.hypot(pts[:, 0], pts[:, 1]) <= bailout))[0]
        esc = int(esc_ext[0]) if esc_ext.size else -1
        # cocycle from the extended orbit, rounded to double
        jacs = family.jacobian(p, pts[: n if esc < 0 else esc])
        Q, R = _qr_cocycle(jacs)
        cond = _condition_bound(family, p, pts, u)
    if esc >= 0:
        m = esc
        return OrbitSegment(pts[: m + 1], Q[: m + 1], R[:m], cond[: m + 1], mode, True, m,
                            None if lo is None else lo[: m + 1])
    return OrbitSegment(pts, Q, R, cond, mode, False, None, lo)


def _extended_points(family, p, z0, n, bailout):
    xh, xl, yh, yl = np.array([z0[0]]), np.zeros(1), np.array([z0[1]]), np.zeros(1)
    hi = np.full((n + 1, 2), np.nan)
    lo = np.zeros((n + 1, 2))
    hi[0] = z0
    for k in range(n):
        xh, xl, yh, yl = family.eval_dd(p, xh, xl, yh, yl)
        hi[k + 1] = (xh[0], yh[0])
        lo[k + 1] = (xl[0], yl[0])
        if not (np.hypot(xh[0], yh[0]) <= bailout):
            break
    return hi, lo


def _qr_cocycle(jacs: np.ndarray):
    n = jacs.shape[0]
    Q = np.empty((n + 1, 2, 2))
    R = np.zeros((n, 2, 2))
    Q[0] = np.eye(2)
    for k in range(n):
        q00, q01, q10, q11, r00, r01, r11 = K._qr_step(
            jacs[k, 0, 0], jacs[k, 0, 1], jacs[k, 1, 0], jacs[k, 1, 1],
            Q[k, 0, 0], Q[k, 0, 1], Q[k, 1, 0], Q[k, 1, 1])
        Q[k + 1] = ((q00, q01), (q10, q11))
        R[k] = ((r00, r01), (0.0, r11))
    return Q, R


def _condition_bound(family, p, pts, u):
    coef = family.coef(p)
    cond = np.zeros(pts.shape[0])
    for k in range(pts.shape[0] - 1):
        if not np.all(np.isfinite(pts[k + 1])):
            break
        J = family.jacobian(p, pts[k])
        s = K.term_scale(family.kind_code, coef, pts[k, 0], pts[k, 1])
        cond[k + 1] = np.linalg.norm(J) * cond[k] + 4.0 * u * (s + np.abs(pts[k + 1]).sum())
    return cond


def orbit_jacobian(family: MapFamily, p, z, n: int):
    """Return (F^n(z), DF^n(z)) using the compiled kernel."""
    z = as_point(z)
    x, y, J = K.orbit_jacobian(family.kind_code, family.coef(p), z[0], z[1], int(n))
    return np.array([x, y]), J


def iterate(family: MapFamily, p, z, n: int) -> np.ndarray:
    z = as_point(z)
    x, y = K.iterate_point(family.kind_code, family.coef(p), z[0], z[1], int(n))
    return np.array([x, y])


def iterate_dd(family: MapFamily, p, z, n: int, z_lo=None):
    """Iterate n steps in double-double; returns (hi, lo) arrays."""
    z = as_point(z)
    lo0 = np.zeros(2) if z_lo is None else np.asarray(z_lo, dtype=np.float64)
    xh, xl, yh, yl = np.array([z[0]]), np.array([lo0[0]]), np.array([z[1]]), np.array([lo0[1]])
    for _ in range(int(n)):
        xh, xl, yh, yl = family.eval_dd(p, xh, xl, yh, yl)
    if not (np.isfinite(xh[0]) and np.isfinite(yh[0])):
        raise DomainError("extended iteration overflowed")
    return np.array([xh[0], yh[0]]), np.array([xl[0], yl[0]])
