"""Attractor classification: sinks, cascade proxies, strange attractors."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels as K
from .exceptions import EscapeError, NoConvergenceError
from .family import DEFAULT_BAILOUT, MapFamily
from .saddle import monodromy, solve_periodic_orbit
from .validation import as_point, as_points, check_int


@dataclass
class AttractorRecord:
    kind: str  # sink | pd_cascade | strange | unknown
    period_or_depth: int | None
    clusters: np.ndarray
    basin_fraction: float = 0.0
    lyapunov_top: float = float("nan")
    ce_kappa: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    witness: np.ndarray | None = None

    @property
    def label(self) -> str:
        if self.kind in ("sink", "pd_cascade"):
            return f"{self.kind}({self.period_or_depth})"
        return self.kind

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "period_or_depth": self.period_or_depth,
            "clusters": [[_f(v) for v in c] for c in np.asarray(self.clusters).reshape(-1, 2)],
            "basin_fraction": _f(self.basin_fraction),
            "lyapunov_top": _f(self.lyapunov_top),
            "ce_kappa": _f(self.ce_kappa),
        }


def _f(v):
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return None
    return float(f"{v:.17g}")


def lyapunov(family: MapFamily, p, z0, n: int, transient: int = 1000,
             bailout: float = DEFAULT_BAILOUT) -> float:
    """Top exponent: time average of log R_00 from per-step QR re-factorization.

    The tangent frame is aligned during ``transient`` extra steps that are not
    averaged.
    """
    z0 = as_point(z0, "z0")
    n = check_int(n, "n", 1)
    s, done, esc = K.lyapunov_sum(family.kind_code, family.coef(p), z0[0], z0[1], n,
                                  int(transient), float(bailout))
    if esc:
        raise EscapeError("orbit escaped during Lyapunov estimate", int(done))
    return float(s / n)


def lyapunov_with_error(family: MapFamily, p, z0, n: int, transient: int = 1000,
                        nblocks: int = 100, n_boot: int = 1000, seed: int = 0):
    """Top exponent with a block-bootstrap standard error."""
    z0 = as_point(z0, "z0")
    blocks, esc = K.lyapunov_blocks(family.kind_code, family.coef(p), z0[0], z0[1], int(n),
                                    int(transient), DEFAULT_BAILOUT, int(nblocks))
    if esc:
        raise EscapeError("orbit escaped during Lyapunov estimate")
    rng = np.random.default_rng(seed)
    boots = blocks[rng.integers(0, nblocks, size=(n_boot, nblocks))].mean(axis=1)
    return float(blocks.mean()), float(boots.std(ddof=1))


def collet_eckmann_proxy(family: MapFamily, p, z0, v0, n: int,
                         bailout: float = DEFAULT_BAILOUT) -> float:
    """min over 1 <= k <= n of (1/k) log |DF^k(z0) v0|."""
    z0 = as_point(z0, "z0")
    v0 = as_point(v0, "v0")
    val, esc = K.ce_proxy(family.kind_code, family.coef(p), z0[0], z0[1], v0[0], v0[1],
                          check_int(n, "n", 1), float(bailout))
    if esc:
        raise EscapeError("orbit escaped during CE proxy")
    return float(val)


def unstable_direction(family: MapFamily, p, z0, steps: int = 200):
    """Push a frame along the orbit; returns (z_steps, leading direction)."""
    z0 = as_point(z0)
    pts, Q, R, cond, esc = K.orbit(family.kind_code, family.coef(p), z0[0], z0[1], steps,
                                   DEFAULT_BAILOUT, 2.0 ** -53)
    if esc >= 0:
        raise EscapeError("escape while aligning frame", esc)
    return pts[-1].copy(), Q[-1][:, 0].copy()


def detect_period(points: np.ndarray, max_period: int, tol: float) -> int | None:
    """Smallest P with |z_{k+P} - z_k| < tol over the recorded window tail."""
    M = points.shape[0]
    max_period = min(max_period, M // 3)
    for P in range(1, max_period + 1):
        L = min(M - P, 4 * P + 64)
        a = points[M - L - P: M - P]
        b = points[M - L:]
        if np.max(np.abs(a - b)) < tol:
            return P
    return None


def _min_set_distance(A: np.ndarray, B: np.ndarray) -> float:
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.inf
    if A.shape[0] < B.shape[0]:
        A, B = B, A
    d, _ = cKDTree(A).query(B, k=1)
    return float(np.min(d))


def _internal_spacing(A: np.ndarray) -> float:
    if A.shape[0] < 2:
        return 0.0
    d, _ = cKDTree(A).query(A, k=2)
    return float(np.median(d[:, 1]))


def _separated(A, B, cluster_tol, sep_ratio):
    g = _min_set_distance(A, B)
    inner = max(_internal_spacing(A), _internal_spacing(B))
    return g > max(cluster_tol, sep_ratio * inner), g


def cluster_hierarchy(points: np.ndarray, cluster_tol: float, max_base: int = 64,
                      max_depth: int = 16, sep_ratio: float = 2.0, min_points: int = 4):
    """2-adic cluster structure of an orbit by index classes.

    Finds the smallest base period P0 whose index classes are pairwise
    separated, then the largest depth d such that every class mod P0*2^j
    (j <= d) splits into two children whose gap exceeds both cluster_tol and
    sep_ratio times the children's internal nearest-neighbour spacing.
    Returns (P0, d, min_gap, centers at depth d).
    """
    pts = np.asarray(points)
    M = pts.shape[0]
    idx = np.arange(M)
    P0 = 1
    for P in range(2, max_base + 1):
        if M < min_points * P:
            break
        classes = [pts[idx % P == r] for r in range(P)]
        ok = True
        for r in range(P):
            others = np.vstack([classes[s] for s in range(P) if s != r])
            sep, _ = _separated(classes[r], others, cluster_tol, sep_ratio)
            if not sep:
                ok = False
                break
        if ok:
            # a base period must not itself split 2-adically from a smaller one
            if P % 2 == 0 and _all_split(pts, idx, P // 2, cluster_tol, sep_ratio)[0]:
                continue
            P0 = P
            break
    depth = 0
    min_gap = np.inf
    while depth < max_depth:
        per = P0 * 2 ** (depth + 1)
        if M < min_points * per:
            break
        ok, gap = _all_split(pts, idx, per // 2, cluster_tol, sep_ratio)
        if not ok:
            break
        depth += 1
        min_gap = min(min_gap, gap)
    per = P0 * 2 ** depth
    centers = np.array([pts[idx % per == r].mean(axis=0) for r in range(per)])
    return P0, depth, min_gap, centers


def _all_split(pts, idx, half, cluster_tol, sep_ratio):
    per = 2 * half
    gap = np.inf
    for r in range(half):
        sep, g = _separated(pts[idx % per == r], pts[idx % per == r + half], cluster_tol, sep_ratio)
        gap = min(gap, g)
        if not sep:
            return False, gap
    return True, gap


def classify_attractor(family: MapFamily, p, witness, period_tol: float = 1e-9,
                       max_period: int = 2048, sink_margin: float = 1e-6,
                       cluster_tol: float | None = None, min_depth: int = 5,
                       lyap_n: int = 200_000, lyap_floor: float = 1e-3,
                       ce_n: int = 2000, ce_samples: int = 16) -> AttractorRecord:
    """Decision cascade: periodic sink, cascade proxy, strange, unknown."""
    W = as_points(witness, "witness")
    scale = 1.0 + float(np.max(np.abs(W)))
    tol = period_tol * scale
    ctol = (1e3 * tol) if cluster_tol is None else cluster_tol
    diag: dict = {}
    P = detect_period(W, max_period, tol)
    if P is not None:
        try:
            orb, res = solve_periodic_orbit(family, p, W[-P:], tol=1e-13)
            M = monodromy(family, p, orb)
            ev = np.linalg.eigvals(M)
            rho = float(np.max(np.abs(ev)))
        except NoConvergenceError:
            orb, rho, ev = W[-P:], float("nan"), np.array([np.nan])
        diag.update(period=P, spectral_radius=rho,
                    multipliers=[complex(v) for v in np.atleast_1d(ev)])
        if rho < 1.0 - sink_margin:
            P0, d, gap, centers = cluster_hierarchy(_repeat_cycle(orb), ctol, sep_ratio=0.0, min_points=2)
            lyap = float(np.log(rho) / P) if rho > 0 else -np.inf
            if d >= min_depth and P == P0 * 2 ** d:
                diag.update(base_period=P0, min_gap=gap)
                return AttractorRecord("pd_cascade", d, centers, lyapunov_top=lyap,
                                       ce_kappa=lyap, diagnostics=diag, witness=orb)
            return AttractorRecord("sink", P, orb, lyapunov_top=lyap, ce_kappa=lyap,
                                   diagnostics=diag, witness=orb)
    P0, d, gap, centers = cluster_hierarchy(W, ctol)
    diag.update(base_period=P0, depth=d, min_gap=gap)
    z_end = W[-1]
    try:
        lyap = lyapunov(family, p, z_end, lyap_n, transient=1000)
    except EscapeError:
        lyap = float("nan")
    if d >= min_depth:
        return AttractorRecord("pd_cascade", d, centers, lyapunov_top=lyap,
                               diagnostics=diag, witness=W)
    kappas = []
    stride = max(1, W.shape[0] // ce_samples)
    for z in W[::stride][:ce_samples]:
        try:
            z1, v = unstable_direction(family, p, z, 100)
            kappas.append(collet_eckmann_proxy(family, p, z1, v, ce_n))
        except EscapeError:
            continue
    ce = float(np.max(kappas)) if kappas else float("nan")
    if kappas:
        diag["ce_quantiles"] = [float(q) for q in np.quantile(kappas, [0.0, 0.5, 1.0])]
    if lyap > lyap_floor and ce > 0:
        return AttractorRecord("strange", None, _cloud_centers(W), lyapunov_top=lyap,
                               ce_kappa=ce, diagnostics=diag, witness=W)
    return AttractorRecord("unknown", None, _cloud_centers(W), lyapunov_top=lyap,
                           ce_kappa=ce, diagnostics=diag, witness=W)


def _repeat_cycle(orb: np.ndarray, reps: int = 4) -> np.ndarray:
    return np.tile(orb, (reps, 1))


def _cloud_centers(W: np.ndarray, k: int = 16) -> np.ndarray:
    idx = np.linspace(0, W.shape[0] - 1, min(k, W.shape[0])).astype(int)
    return W[idx]


def seed_grid(rect, nx: int, ny: int) -> np.ndarray:
    """Cell-centred seed grid over rect = (x0, x1, y0, y1), row-major."""
    x0, x1, y0, y1 = map(float, rect)
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        a, b = self.find(i), self.find(j)
        if a != b:
            lo, hi = min(a, b), max(a, b)
            self.parent[hi] = lo


def _summaries(tails, esc, tol_rel, max_period):
    out = []
    for i in range(tails.shape[0]):
        if esc[i]:
            out.append(None)
            continue
        T = tails[i]
        scale = 1.0 + float(np.max(np.abs(T)))
        P = detect_period(T, max_period, tol_rel * scale)
        if P is not None:
            cyc = T[-P:]
            out.append(("periodic", P, cyc))
        else:
            out.append(("cloud", None, T))
    return out


def _same_class(sa, sb, merge_tol):
    ka, Pa, A = sa
    kb, Pb, B = sb
    if ka == "periodic" and kb == "periodic":
        if Pa != Pb:
            return False
        d = _min_set_distance(A, B[:1])
        return d < merge_tol
    if ka == "periodic" or kb == "periodic":
        cyc, cloud = (A, B) if ka == "periodic" else (B, A)
        return _min_set_distance(cyc, cloud[-8:]) < 1e3 * merge_tol and \
            np.max(cKDTree(cyc).query(cloud[-8:])[0]) < 1e3 * merge_tol
    # clouds: each one's tail end approaches the other's cloud
    span = max(np.ptp(A, axis=0).max(), np.ptp(B, axis=0).max(), 1e-12)
    eps = 2e-2 * span
    da, _ = cKDTree(A).query(B[-64:])
    db, _ = cKDTree(B).query(A[-64:])
    return np.median(da) < eps and np.median(db) < eps


def basin_census(family: MapFamily, p, seeds, transient: int = 10_000, window: int = 4096,
                 budget: int = 10**9, period_tol: float = 1e-9, max_period: int = 1024,
                 merge_tol: float = 1e-6, classify_kw: dict | None = None,
                 bailout: float = DEFAULT_BAILOUT):
    """Iterate seeds, merge omega-limit summaries and classify each class.

    Returns (records, info) where info carries escape fraction, labels per
    seed (-1 for escape) and a ``partial`` flag when the budget ran out.
    """
    seeds = as_points(seeds, "seeds")
    m = seeds.shape[0]
    per_seed = int(transient) + int(window)
    allowed = m if per_seed * m <= budget else max(0, budget // per_seed)
    partial = allowed < m
    used = seeds[:allowed]
    tails, esc = K.tails_many(family.kind_code, family.coef(p), used, int(transient),
                              int(window), float(bailout))
    summ = _summaries(tails, esc, period_tol, max_period)
    uf = _UnionFind(allowed)
    reps: list[int] = []
    for i in range(allowed):
        if summ[i] is None:
            continue
        for r in reps:
            if _same_class(summ[r], summ[i], merge_tol):
                uf.union(r, i)
                break
        else:
            reps.append(i)
    labels = np.full(m, -2, dtype=int)
    classes: dict[int, list[int]] = {}
    for i in range(allowed):
        if summ[i] is None:
            labels[i] = -1
            continue
        classes.setdefault(uf.find(i), []).append(i)
    records = []
    kw = dict(classify_kw or {})
    kw.setdefault("period_tol", period_tol)
    for k, (root, members) in enumerate(sorted(classes.items())):
        rec = classify_attractor(family, p, tails[root], **kw)
        rec.basin_fraction = len(members) / m
        rec.diagnostics["representative_seed"] = int(root)
        records.append(rec)
        labels[members] = k
    escape_fraction = float(np.sum(labels == -1)) / m
    unvisited = float(np.sum(labels == -2)) / m
    info = {"escape_fraction": escape_fraction, "unprocessed_fraction": unvisited,
            "labels": labels, "partial": partial, "n_seeds": m}
    return records, info


def census_jsonl(records) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def clusters_disjoint(a: AttractorRecord, b: AttractorRecord) -> float:
    """Minimum gap between the witness clouds of two records (0 if they touch)."""
    A = a.witness if a.witness is not None else a.clusters
    B = b.witness if b.witness is not None else b.clusters
    return _min_set_distance(np.asarray(A).reshape(-1, 2), np.asarray(B).reshape(-1, 2))


class AttractorCensus(BaseEstimator):
    """Estimator wrapper around basin_census.

    ``fit(X)`` takes seed points, ``labels_`` holds the class of each seed
    (-1 escape) and ``predict`` assigns new seeds to fitted attractors.
    """

    def __init__(self, family=None, params=None, transient=10_000, window=4096,
                 period_tol=1e-9, max_period=1024):
        self.family = family
        self.params = params
        self.transient = transient
        self.window = window
        self.period_tol = period_tol
        self.max_period = max_period

    def fit(self, X, y=None):
        X = as_points(X, "X")
        self.records_, info = basin_census(self.family, self.params, X, self.transient,
                                           self.window, period_tol=self.period_tol,
                                           max_period=self.max_period)
        self.labels_ = info["labels"]
        self.escape_fraction_ = info["escape_fraction"]
        return self

    def predict(self, X):
        check_is_fitted(self, "records_")
        X = as_points(X, "X")
        tails, esc = K.tails_many(self.family.kind_code, self.family.coef(self.params), X,
                                  int(self.transient), 64, DEFAULT_BAILOUT)
        out = np.full(X.shape[0], -1, dtype=int)
        trees = [cKDTree(np.asarray(r.witness if r.witness is not None else r.clusters).reshape(-1, 2))
                 for r in self.records_]
        for i in range(X.shape[0]):
            if esc[i] or not trees:
                continue
            d = [float(np.median(t.query(tails[i])[0])) for t in trees]
            out[i] = int(np.argmin(d))
        return out
