"""Invariant manifolds of saddles, homoclinic intersections and tangencies."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import _kernels as K
from .exceptions import (BracketError, BudgetError, DegenerateTangencyError, NoConvergenceError,
                         NotUnfoldingError)
from .family import MapFamily, ParamPoint
from .saddle import Saddle, find_periodic_point
from .validation import as_point, as_points, check_positive


@dataclass
class ManifoldArc:
    side: str
    nodes: np.ndarray
    s: np.ndarray
    source: Saddle | None = None
    max_angle: float = 0.0
    max_segment: float = 0.0
    breaks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    truncated: bool = False
    tau: np.ndarray | None = None
    evaluator: Callable | None = field(default=None, repr=False)

    @classmethod
    def from_polyline(cls, points, side: str = "explicit", breaks=None) -> "ManifoldArc":
        pts = as_points(points, "points")
        br = np.zeros(0, dtype=int) if breaks is None else np.asarray(breaks, dtype=int)
        arc = cls(side=side, nodes=pts, s=_arclength(pts, br), breaks=br)
        arc.max_angle, arc.max_segment = _refinement_stats(pts, br)
        return arc

    @property
    def length(self) -> float:
        return float(self.s[-1]) if self.s.size else 0.0

    def segment_mask(self) -> np.ndarray:
        """True for segments i -> i+1 that belong to the curve."""
        m = np.ones(max(self.nodes.shape[0] - 1, 0), dtype=bool)
        m[self.breaks[self.breaks < m.size]] = False
        return m

    def segments(self):
        m = self.segment_mask()
        idx = np.nonzero(m)[0]
        return self.nodes[idx], self.nodes[idx + 1], idx

    def pieces(self) -> list:
        """Continuous sub-polylines split at breaks."""
        cuts = np.sort(self.breaks)
        out, start = [], 0
        for b in cuts:
            if b + 1 - start >= 2:
                out.append(self.nodes[start:b + 1])
            start = b + 1
        if self.nodes.shape[0] - start >= 2:
            out.append(self.nodes[start:])
        return out

    def distance(self, pts) -> np.ndarray:
        return polyline_distance(self.nodes, self.segment_mask(), as_points(pts))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arclength", "x", "y"])
        for s, (x, y) in zip(self.s, self.nodes):
            w.writerow([f"{s:.17g}", f"{x:.17g}", f"{y:.17g}"])
        return buf.getvalue()


def _arclength(pts, breaks) -> np.ndarray:
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if breaks.size:
        d[breaks[breaks < d.size]] = 0.0
    return np.concatenate([[0.0], np.cumsum(d)])


def _turning_angles(pts) -> np.ndarray:
    d = np.diff(pts, axis=0)
    a = d[:-1]
    b = d[1:]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = np.einsum("ij,ij->i", a, b)
    return np.abs(np.arctan2(cross, dot))


def _refinement_stats(pts, breaks):
    if pts.shape[0] < 2:
        return 0.0, 0.0
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    ok = np.ones(seg.size, dtype=bool)
    ok[breaks[breaks < seg.size]] = False
    ang = _turning_angles(pts) if pts.shape[0] > 2 else np.zeros(0)
    ang_ok = ok[:-1] & ok[1:] if ang.size else np.zeros(0, dtype=bool)
    return (float(np.max(ang[ang_ok])) if np.any(ang_ok) else 0.0,
            float(np.max(seg[ok])) if np.any(ok) else 0.0)


def polyline_distance(nodes, seg_mask, pts, chunk: int = 512) -> np.ndarray:
    """Euclidean distance from each point to the union of masked segments."""
    idx = np.nonzero(seg_mask)[0]
    if idx.size == 0:
        return np.linalg.norm(pts[:, None, :] - nodes[None, :, :], axis=2).min(axis=1)
    A = nodes[idx]
    D = nodes[idx + 1] - A
    L2 = np.einsum("ij,ij->i", D, D)
    L2 = np.where(L2 > 0, L2, 1.0)
    out = np.empty(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        P = pts[lo:lo + chunk]
        R = P[:, None, :] - A[None, :, :]
        t = np.clip(np.einsum("ijk,jk->ij", R, D) / L2[None, :], 0.0, 1.0)
        C = A[None, :, :] + t[..., None] * D[None, :, :]
        out[lo:lo + chunk] = np.sqrt(np.min(np.sum((P[:, None, :] - C) ** 2, axis=2), axis=1))
    return out


# ---------------------------------------------------------------------------
# growth


def _generator(family: MapFamily, p, saddle: Saddle, side: str):
    """(G, multiplier, vector) with G the period map (or its inverse)."""
    P = saddle.period
    lam, mu = saddle.lam, saddle.mu
    if np.iscomplexobj(lam) or np.iscomplexobj(mu) or isinstance(mu, complex):
        raise ValueError("manifolds need real multipliers")
    coef = family.coef(p)
    kc = family.kind_code
    if side == "unstable":
        mult = float(mu)
        vec = saddle.unstable_vector

        def G(pts):
            for _ in range(P):
                pts = K.eval_many(kc, coef, pts)
            return pts
    elif side == "stable":
        mult = 1.0 / float(lam)
        vec = saddle.stable_vector

        def G(pts):
            for _ in range(P):
                pts = family.inverse_many(p, pts)
            return pts
    else:
        raise ValueError("side must be 'stable' or 'unstable'")
    if mult < 0:
        G1 = G

        def G(pts):  # noqa: F811 - second iterate for orientation-reversing branches
            return G1(G1(pts))
        mult = mult * mult
    return G, mult, np.asarray(vec, dtype=float)


def _is_y_independent(family: MapFamily, p, loc) -> bool:
    if family.is_invertible(p):
        return False
    probe = loc[None, :] + np.array([[0.0, 0.0], [0.3, -0.7], [-0.5, 0.4]])
    J = family.jacobian(p, probe)
    return bool(np.all(J[:, :, 1] == 0.0))


def grow_manifold(family: MapFamily, p, saddle: Saddle, side: str = "unstable",
                  arclength_budget: float = 1.0, angle_cap: float = 0.2, seg_cap: float = 1e-2,
                  delta0: float | None = None, node_cap: int = 200_000, branches: str = "both",
                  max_levels: int = 200, u_min: float = 1e-13,
                  bailout: float = 1e4) -> ManifoldArc:
    """Grow W^u or W^s of a saddle by pushing a fundamental domain.

    The fundamental domain is the chord from ``z_a = p + delta0 v`` to
    ``G(z_a)``; level k is its image under ``G^k``.  Every level inherits the
    chord parameters of the previous one, so ``F`` (or ``F^-1`` on the stable
    side) maps nodes onto nodes.
    """
    check_positive(arclength_budget, "arclength_budget")
    check_positive(angle_cap, "angle_cap")
    check_positive(seg_cap, "seg_cap")
    pv = family.params(p)
    loc = np.asarray(saddle.location, dtype=float)
    if side == "stable" and _is_y_independent(family, pv, loc):
        return _preimage_lines(family, pv, saddle, arclength_budget, seg_cap)
    G, mult, vec = _generator(family, pv, saddle, side)
    if delta0 is None:
        delta0 = 1e-7 * max(1.0, float(np.max(np.abs(loc))))
    signs = {"both": (-1.0, 1.0), "+": (1.0,), "-": (-1.0,)}[branches]
    built = []
    total_nodes = 0
    truncated = False
    for sg in signs:
        za = loc + sg * delta0 * vec
        zb = G(za[None, :])[0]

        def chord(u, za=za, zb=zb):
            u = np.asarray(u, dtype=float)
            out = za[None, :] + u[:, None] * (zb - za)[None, :]
            out[u == 1.0] = zb
            return out

        def at_level(u, k, chord=chord):
            pts = chord(u)
            for _ in range(k):
                pts = G(pts)
            return pts

        U = np.linspace(0.0, 1.0, 9)
        pts_all, tau_all, br_all = [], [], []
        length = 0.0
        done = False
        for k in range(max_levels):
            U, pts, br, trunc = _refine_level(at_level, U, k, angle_cap, seg_cap, u_min, node_cap,
                                              bailout)
            truncated |= trunc
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            seg_valid = np.where(np.isin(np.arange(seg.size), br), 0.0, seg)
            cum = length + np.concatenate([[0.0], np.cumsum(seg_valid)])
            finite = np.all(np.isfinite(pts), axis=1) & (np.max(np.abs(pts), axis=1) < bailout)
            stop = None
            if not np.all(finite):
                stop = int(np.argmin(finite))
                truncated = True
                done = True
            if cum[-1] >= arclength_budget:
                j = int(np.searchsorted(cum, arclength_budget))
                stop = j + 1 if stop is None else min(stop, j + 1)
                done = True
            if stop is not None:
                pts, U_k, cum = pts[:stop], U[:stop], cum[:stop]
                br = [b for b in br if b < stop - 1]
            else:
                U_k = U
            offset = sum(x.shape[0] for x in pts_all)
            if pts_all:
                # the junction node is shared with the previous level
                pts, U_k, cum = pts[1:], U_k[1:], cum[1:]
                br = [b - 1 for b in br if b >= 1]
                offset -= 1
            pts_all.append(pts)
            tau_all.append(k + U_k)
            br_all.extend(b + offset + 1 for b in br)
            length = float(cum[-1]) if cum.size else length
            total_nodes += pts.shape[0]
            if total_nodes > node_cap:
                raise BudgetError(f"manifold refinement exceeded {node_cap} nodes")
            if done:
                break
        nodes = np.vstack(pts_all) if pts_all else np.zeros((0, 2))
        tau = np.concatenate(tau_all) if tau_all else np.zeros(0)
        if length > arclength_budget and nodes.shape[0] >= 2:
            # shorten the last segment to the exact budget
            seg = np.linalg.norm(nodes[-1] - nodes[-2])
            excess = length - arclength_budget
            if seg > 0 and excess < seg:
                w = 1.0 - excess / seg
                nodes[-1] = nodes[-2] + w * (nodes[-1] - nodes[-2])
                tau[-1] = tau[-2] + w * (tau[-1] - tau[-2])
        built.append((sg, nodes, tau, np.array(sorted(set(br_all)), dtype=int), at_level))

    parts, taus, breaks = [], [], []
    evals = {}
    by_sign = {sg: (nodes, tau, br) for sg, nodes, tau, br, _ in built}
    for sg, _, _, _, at_level in built:
        evals[sg] = at_level
    if -1.0 in by_sign:
        nodes, tau, br = by_sign[-1.0]
        n0 = nodes.shape[0]
        parts.append(nodes[::-1])
        taus.append(-tau[::-1])
        breaks.extend(n0 - 2 - b for b in br)
    parts.append(loc[None, :])
    taus.append(np.array([np.nan]))
    if 1.0 in by_sign:
        nodes, tau, br = by_sign[1.0]
        offset = sum(x.shape[0] for x in parts)
        parts.append(nodes)
        taus.append(tau)
        breaks.extend(offset + b for b in br)
    nodes = np.vstack(parts)
    tau = np.concatenate(taus)
    br = np.array(sorted(b for b in breaks if 0 <= b < nodes.shape[0] - 1), dtype=int)

    def evaluator(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, 2))
        for i, tv in enumerate(t):
            sg = 1.0 if tv >= 0 else -1.0
            k = int(math.floor(abs(tv)))
            u = abs(tv) - k
            out[i] = evals[sg](np.array([u]), k)[0]
        return out

    arc = ManifoldArc(side=side, nodes=nodes, s=_arclength(nodes, br), source=saddle,
                      breaks=br, truncated=truncated, tau=tau, evaluator=evaluator)
    arc.max_angle, arc.max_segment = _refinement_stats(nodes, br)
    return arc


def _refine_level(at_level, U, k, angle_cap, seg_cap, u_min, node_cap, bailout):
    U = np.asarray(U, dtype=float)
    pts = at_level(U, k)
    breaks: set = set()
    truncated = False
    for _ in range(200):
        bad_pts = ~np.all(np.isfinite(pts), axis=1) | (np.max(np.abs(pts), axis=1) >= bailout)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        gap = np.diff(U)
        need = seg > seg_cap
        if pts.shape[0] > 2:
            ang = _turning_angles(pts)
            sharp = ang > angle_cap
            need[:-1] |= sharp
            need[1:] |= sharp
        need &= ~(bad_pts[:-1] | bad_pts[1:])
        tiny = gap < u_min
        unresolved = need & tiny
        if np.any(unresolved):
            for i in np.nonzero(unresolved & (seg > seg_cap))[0]:
                breaks.add(int(i))
            if np.any(unresolved & (seg <= seg_cap)):
                truncated = True
        need &= ~tiny
        for b in breaks:
            if b < need.size:
                need[b] = False
        if not np.any(need):
            break
        idx = np.nonzero(need)[0]
        newU = 0.5 * (U[idx] + U[idx + 1])
        newP = at_level(newU, k)
        U = np.insert(U, idx + 1, newU)
        pts = np.insert(pts, idx + 1, newP, axis=0)
        breaks = {b + int(np.sum(idx < b)) for b in breaks}
        if U.size > node_cap:
            raise BudgetError(f"manifold refinement exceeded {node_cap} nodes")
    return U, pts, sorted(breaks), truncated


def _preimage_lines(family, pv, saddle, budget, seg_cap, max_depth: int = 12,
                    half_height: float | None = None) -> ManifoldArc:
    """Stable set of a y-independent map: vertical lines over 1-d preimages."""
    loc = np.asarray(saddle.location, dtype=float)
    A = family.spatial_table(pv) if hasattr(family, "spatial_table") else None
    if A is None:
        raise ValueError("preimage curves need a polynomial family")
    cx = A[0][:, 0]  # F_x(x, y) = sum cx[i] x^i
    h = half_height if half_height is not None else max(1.0, 1.5 * float(np.max(np.abs(loc))))
    xs = [loc[0]]
    frontier = [loc[0]]
    seen = {round(loc[0], 12)}
    for _ in range(max_depth):
        nxt = []
        for target in frontier:
            c = cx.copy()
            c[0] -= target
            roots = np.roots(c[::-1])
            for r in roots:
                if abs(r.imag) < 1e-10:
                    key = round(r.real, 12)
                    if key not in seen:
                        seen.add(key)
                        nxt.append(float(r.real))
        if not nxt:
            break
        xs.extend(nxt)
        frontier = nxt
        if len(xs) * 2 * h >= budget:
            break
    m = max(2, int(math.ceil(2 * h / seg_cap)) + 1)
    ys = np.linspace(-h, h, m)
    nodes, breaks = [], []
    for x in xs:
        if nodes:
            breaks.append(sum(n.shape[0] for n in nodes) - 1)
        nodes.append(np.column_stack([np.full(m, x), ys]))
    pts = np.vstack(nodes)
    arc = ManifoldArc(side="stable", nodes=pts, s=np.zeros(0), source=saddle,
                      breaks=np.array(breaks, dtype=int))
    arc.s = _arclength(pts, arc.breaks)
    arc.max_angle, arc.max_segment = _refinement_stats(pts, arc.breaks)
    return arc


# ---------------------------------------------------------------------------
# intersections


@dataclass
class HomoclinicPoint:
    point: np.ndarray
    angle: float
    tau_u: float
    tau_s: float
    polished: bool = False

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "angle": self.angle, "tau_u": self.tau_u,
                "tau_s": self.tau_s, "polished": self.polished}


class IntersectionList(list):
    """List of HomoclinicPoint with a degenerate-overlap flag."""

    degenerate_overlap: bool = False


def _orient(a, b, c) -> int:
    """Sign of the orientation determinant; exact fallback near zero."""
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    mag = (abs(b[0] - a[0]) * abs(c[1] - a[1]) + abs(b[1] - a[1]) * abs(c[0] - a[0]))
    if abs(det) > 8 * np.finfo(float).eps * mag:
        return 1 if det > 0 else -1
    fa = [Fraction(float(v)) for v in a]
    fb = [Fraction(float(v)) for v in b]
    fc = [Fraction(float(v)) for v in c]
    d = (fb[0] - fa[0]) * (fc[1] - fa[1]) - (fb[1] - fa[1]) * (fc[0] - fa[0])
    return (d > 0) - (d < 0)


def _collinear_overlap(a0, a1, b0, b1) -> bool:
    d = a1 - a0
    k = 0 if abs(d[0]) >= abs(d[1]) else 1
    lo_a, hi_a = sorted((a0[k], a1[k]))
    lo_b, hi_b = sorted((b0[k], b1[k]))
    return min(hi_a, hi_b) - max(lo_a, lo_b) > 0


def _segment_hits(A0, A1, B0, B1):
    """Candidate pairs (i, j) of crossing segments plus an overlap flag."""
    if A0.shape[0] == 0 or B0.shape[0] == 0:
        return [], False
    midB = 0.5 * (B0 + B1)
    lenA = np.linalg.norm(A1 - A0, axis=1)
    lenB = np.linalg.norm(B1 - B0, axis=1)
    tree = cKDTree(midB)
    rmax = float(np.max(lenB)) / 2
    cands = tree.query_ball_point(0.5 * (A0 + A1), lenA / 2 + rmax + 1e-15)
    hits, overlap = [], False
    for i, js in enumerate(cands):
        a0, a1 = A0[i], A1[i]
        for j in js:
            b0, b1 = B0[j], B1[j]
            o1, o2 = _orient(a0, a1, b0), _orient(a0, a1, b1)
            o3, o4 = _orient(b0, b1, a0), _orient(b0, b1, a1)
            if o1 == 0 and o2 == 0:
                if _collinear_overlap(a0, a1, b0, b1):
                    overlap = True
                continue
            if o1 * o2 < 0 and o3 * o4 < 0:
                hits.append((i, j))
            elif (o1 * o2 <= 0 and o3 * o4 <= 0):
                # endpoint contact: count at the segment start only (half-open rule)
                d1, d2 = a1 - a0, b1 - b0
                den = d1[0] * d2[1] - d1[1] * d2[0]
                if den == 0:
                    continue
                r = b0 - a0
                ta = (r[0] * d2[1] - r[1] * d2[0]) / den
                tb = (r[0] * d1[1] - r[1] * d1[0]) / den
                if 0.0 <= ta < 1.0 and 0.0 <= tb < 1.0:
                    hits.append((i, j))
    return hits, overlap


def find_homoclinic_intersections(arcU: ManifoldArc, arcS: ManifoldArc, trans_floor: float = 1e-9,
                                  polish: bool = True, exclude_radius: float | None = None
                                  ) -> IntersectionList:
    """Transversal crossings of two arcs, optionally polished by Newton."""
    A0, A1, ia = arcU.segments()
    B0, B1, ib = arcS.segments()
    hits, overlap = _segment_hits(A0, A1, B0, B1)
    out = IntersectionList()
    out.degenerate_overlap = overlap
    if overlap:
        return out
    excl = None
    if arcU.source is not None:
        excl = np.asarray(arcU.source.location, dtype=float)
        if exclude_radius is None:
            exclude_radius = 1e-6 * max(1.0, float(np.max(np.abs(excl))))
    for i, j in hits:
        a0, a1, b0, b1 = A0[i], A1[i], B0[j], B1[j]
        d1, d2 = a1 - a0, b1 - b0
        den = d1[0] * d2[1] - d1[1] * d2[0]
        r = b0 - a0
        ta = (r[0] * d2[1] - r[1] * d2[0]) / den
        tb = (r[0] * d1[1] - r[1] * d1[0]) / den
        pt = a0 + ta * d1
        if excl is not None and np.linalg.norm(pt - excl) < exclude_radius:
            continue
        tu = _interp_tau(arcU, ia[i], ta)
        ts = _interp_tau(arcS, ib[j], tb)
        polished = False
        tu_dir, ts_dir = d1, d2
        if polish and arcU.evaluator is not None and arcS.evaluator is not None \
                and math.isfinite(tu) and math.isfinite(ts):
            res = _polish(arcU.evaluator, arcS.evaluator, tu, ts,
                          arcU.tau[ia[i] + 1] - arcU.tau[ia[i]],
                          arcS.tau[ib[j] + 1] - arcS.tau[ib[j]])
            if res is not None:
                pt, tu, ts, tu_dir, ts_dir = res
                polished = True
        c = abs(tu_dir[0] * ts_dir[1] - tu_dir[1] * ts_dir[0])
        dot = abs(float(tu_dir @ ts_dir))
        ang = float(math.atan2(c, dot))
        if ang > trans_floor:
            out.append(HomoclinicPoint(point=np.asarray(pt, dtype=float), angle=ang,
                                       tau_u=float(tu), tau_s=float(ts), polished=polished))
    return out


def _interp_tau(arc, i, frac):
    if arc.tau is None:
        return float(arc.s[i] + frac * (arc.s[i + 1] - arc.s[i]))
    t0, t1 = arc.tau[i], arc.tau[i + 1]
    if not (math.isfinite(t0) and math.isfinite(t1)) or t0 * t1 < 0:
        return float("nan")
    k0 = math.floor(abs(t0))
    if math.floor(abs(t1)) != k0 and abs(t1) != k0 + 1:
        return float("nan")
    return float(t0 + frac * (t1 - t0))


def _polish(evU, evS, tu, ts, dtu, dts, tol=1e-12, accept=1e-8, max_iter=30):
    """Newton on P_u(tu) = P_s(ts); the curve points carry amplified roundoff,
    so iteration stops at a small step and accepts residuals below ``accept``."""
    hu = 1e-6 * max(abs(dtu), 1e-12)
    hs = 1e-6 * max(abs(dts), 1e-12)
    lo_u, hi_u = sorted((tu - 2 * abs(dtu), tu + 2 * abs(dtu)))
    lo_s, hi_s = sorted((ts - 2 * abs(dts), ts + 2 * abs(dts)))
    best = None
    for _ in range(max_iter):
        pu = evU([tu - hu, tu, tu + hu])
        ps = evS([ts - hs, ts, ts + hs])
        du = (pu[2] - pu[0]) / (2 * hu)
        ds = (ps[2] - ps[0]) / (2 * hs)
        r = pu[1] - ps[1]
        res = float(np.max(np.abs(r)))
        scale = max(1.0, float(np.max(np.abs(pu[1]))))
        if best is None or res < best[0]:
            best = (res, pu[1], tu, ts, du, ds)
        if res < tol * scale:
            break
        try:
            step = np.linalg.solve(np.column_stack([du, -ds]), -r)
        except np.linalg.LinAlgError:
            break
        tu, ts = tu + step[0], ts + step[1]
        if not (lo_u <= tu <= hi_u and lo_s <= ts <= hi_s):
            break
        if abs(step[0]) < 1e-13 * abs(dtu) and abs(step[1]) < 1e-13 * abs(dts):
            break
    if best is None or best[0] > accept * max(1.0, float(np.max(np.abs(best[1])))):
        return None
    return best[1:]


# ---------------------------------------------------------------------------
# tangencies


class ArcPairSource:
    """Callable (t, a) -> (moving pieces, reference pieces) inside a window."""

    window: tuple | None = None

    def __call__(self, t: float, a: float):
        raise NotImplementedError

    def param(self, t: float, a: float):
        return np.array([t, a])


class ExplicitCurves(ArcPairSource):
    """Graph curves y = fu(x, t, a) and y = fs(x, t, a) sampled on x_range."""

    def __init__(self, fu, fs, x_range=(-1.0, 1.0), samples: int = 401, scale: float = 1.0):
        self.fu, self.fs = fu, fs
        self.x_range = x_range
        self.samples = samples
        self.scale = scale

    def __call__(self, t, a):
        x = np.linspace(*self.x_range, self.samples)
        U = np.column_stack([x, self.fu(x, t, a)]) / self.scale
        S = np.column_stack([x, self.fs(x, t, a)]) / self.scale
        return [U], [S]


class ManifoldPairSource(ArcPairSource):
    """Unstable/stable arcs of a tracked saddle, clipped to a window."""

    def __init__(self, family: MapFamily, saddle_seed, window, budget_u: float = 6.0,
                 budget_s: float = 6.0, period: int = 1, a_index: int | None = None,
                 base=None, angle_cap: float = 0.2, seg_cap: float = 1e-2,
                 branches_u: str = "both", branches_s: str = "both"):
        self.family = family
        self.seed = as_point(saddle_seed)
        self.window = tuple(window)
        self.budget_u, self.budget_s = budget_u, budget_s
        self.period = period
        names = family.param_names
        self.a_index = (names.index("a") if "a" in names else 0) if a_index is None else a_index
        self.t_index = next((i for i in range(len(names)) if i != self.a_index), self.a_index)
        self.base = base
        self.angle_cap, self.seg_cap = angle_cap, seg_cap
        self.branches_u, self.branches_s = branches_u, branches_s
        self._cache: dict = {}

    def param(self, t, a):
        pv = np.zeros(len(self.family.param_names)) if self.base is None \
            else np.array(self.base, dtype=float)
        pv[self.t_index] = t
        pv[self.a_index] = a
        return pv

    def arcs(self, t, a):
        key = (float(t), float(a))
        if key in self._cache:
            return self._cache[key]
        pv = self.param(t, a)
        sad = find_periodic_point(self.family, pv, self.period, self.seed)
        self.seed = sad.location
        U = grow_manifold(self.family, pv, sad, "unstable", self.budget_u, self.angle_cap,
                          self.seg_cap, branches=self.branches_u)
        S = grow_manifold(self.family, pv, sad, "stable", self.budget_s, self.angle_cap,
                          self.seg_cap, branches=self.branches_s)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = (U, S)
        return U, S

    def __call__(self, t, a):
        U, S = self.arcs(t, a)
        return clip_pieces(U.pieces(), self.window), clip_pieces(S.pieces(), self.window)


def clip_pieces(pieces, window) -> list:
    """Split polylines into maximal runs of nodes inside window (x0, x1, y0, y1)."""
    if window is None:
        return [np.asarray(p) for p in pieces]
    x0, x1, y0, y1 = window
    out = []
    for P in pieces:
        inside = (P[:, 0] >= x0) & (P[:, 0] <= x1) & (P[:, 1] >= y0) & (P[:, 1] <= y1)
        idx = np.nonzero(inside)[0]
        if idx.size == 0:
            continue
        runs = np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1)
        out.extend(P[r] for r in runs if r.size >= 2)
    return out


def _signed_distance(P, ref_pieces):
    """Signed distance of points to the nearest reference piece (orientation-based sign)."""
    best = np.full(P.shape[0], np.inf)
    sign = np.ones(P.shape[0])
    for R in ref_pieces:
        A, D = R[:-1], np.diff(R, axis=0)
        L2 = np.einsum("ij,ij->i", D, D)
        L2 = np.where(L2 > 0, L2, 1.0)
        Rel = P[:, None, :] - A[None, :, :]
        t = np.clip(np.einsum("ijk,jk->ij", Rel, D) / L2[None, :], 0.0, 1.0)
        C = A[None, :, :] + t[..., None] * D[None, :, :]
        d2 = np.sum((P[:, None, :] - C) ** 2, axis=2)
        j = np.argmin(d2, axis=1)
        dmin = np.sqrt(d2[np.arange(P.shape[0]), j])
        cr = D[j, 0] * Rel[np.arange(P.shape[0]), j, 1] - D[j, 1] * Rel[np.arange(P.shape[0]), j, 0]
        upd = dmin < best
        best[upd] = dmin[upd]
        sign[upd] = np.where(cr >= 0, 1.0, -1.0)[upd]
    return sign * best


@dataclass
class FoldState:
    value: float
    tip: np.ndarray
    piece: np.ndarray
    index: int
    orient: float
    frame: tuple | None = None
    coeffs: tuple | None = None


def _nearest_piece(point, pieces):
    best = None
    for R in pieces:
        d = np.linalg.norm(R - point, axis=1)
        j = int(np.argmin(d))
        if best is None or d[j] < best[0]:
            best = (d[j], R, j)
    return best[1], best[2]


def _graph_fit(P, origin, tvec, nvec, lo, hi, deg):
    rel = P - origin
    xi = rel @ tvec
    eta = rel @ nvec
    m = (xi >= lo) & (xi <= hi)
    if np.count_nonzero(m) < deg + 2:
        return None
    scale = max(abs(lo), abs(hi))
    c = np.polynomial.polynomial.polyfit(xi[m] / scale, eta[m], deg)
    return c / scale ** np.arange(deg + 1)


def fold_functional(moving, reference, fit_nodes: int = 10, deg: int = 6) -> FoldState:
    """Signed extremal gap of the moving fold to the reference arc.

    Coarse stage: signed node distances ``d`` along the moving piece nearest to
    the reference, oriented by ``sigma`` = sign at its ends.  Fine stage: both
    arcs are fitted as graphs over the reference tangent at the coarse tip and
    the value is ``min sigma * (eta_moving - eta_reference)``.  Positive when
    the fold clears the reference, negative when it crosses it twice.
    """
    if not moving or not reference:
        raise BracketError("window holds no arcs")
    best = None
    for P in moving:
        d = _signed_distance(P, reference)
        i = int(np.argmin(np.abs(d)))
        if best is None or abs(d[i]) < best[0]:
            best = (abs(d[i]), P, d)
    _, P, d = best
    sig = 1.0 if (d[0] + d[-1]) >= 0 else -1.0
    e = sig * d
    i = int(np.argmin(e))
    state = FoldState(float(e[i]), P[i].copy(), P, i, sig)
    R, j = _nearest_piece(P[i], reference)
    j0, j1 = max(j - 1, 0), min(j + 1, R.shape[0] - 1)
    tvec = R[j1] - R[j0]
    nrm = np.linalg.norm(tvec)
    if nrm == 0:
        return state
    tvec = tvec / nrm
    nvec = sig * np.array([-tvec[1], tvec[0]])
    lo_i, hi_i = max(i - fit_nodes, 0), min(i + fit_nodes, P.shape[0] - 1)
    xi_m = (P[lo_i:hi_i + 1] - P[i]) @ tvec
    lo, hi = float(np.min(xi_m)), float(np.max(xi_m))
    if hi - lo <= 0:
        return state
    cm = _graph_fit(P[lo_i:hi_i + 1], P[i], tvec, nvec, lo, hi, deg)
    cr = _graph_fit(R, P[i], tvec, nvec, lo, hi, deg)
    if cm is None or cr is None:
        return state
    diff = np.polynomial.polynomial.Polynomial(cm - cr)
    crit = [r.real for r in diff.deriv().roots() if abs(r.imag) < 1e-12 and lo <= r.real <= hi]
    cand = crit + [lo, hi]
    vals = [diff(x) for x in cand]
    k = int(np.argmin(vals))
    if k >= len(crit):
        return state
    xs = cand[k]
    tip = P[i] + xs * tvec + np.polynomial.polynomial.polyval(xs, cm) * nvec
    return FoldState(float(vals[k]), tip, P, i, sig,
                     (P[i], tvec, nvec, xs), (cm, cr))


def _count_crossings(moving, reference) -> int:
    n = 0
    for P in moving:
        for R in reference:
            hits, _ = _segment_hits(P[:-1], P[1:], R[:-1], R[1:])
            n += len(hits)
    return n


@dataclass
class TangencyEvent:
    param: object
    q1: np.ndarray
    quad_coeff: float
    unfolding_speed: float
    kind: str = "primary"
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    angle_residual: float = 0.0
    t: float = 0.0
    a: float = 0.0
    n: int | None = None
    n0: int | None = None
    bracket: tuple | None = None
    source: object = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        pv = self.param.coords if isinstance(self.param, ParamPoint) else self.param
        return {"t": self.t, "a": self.a, "param": [float(v) for v in np.atleast_1d(pv)],
                "q1": self.q1.tolist(), "quad_coeff": self.quad_coeff,
                "speed": self.unfolding_speed, "kind": self.kind, "n": self.n, "n0": self.n0,
                "angle_residual": self.angle_residual}


def contact_geometry(moving, reference, fold: FoldState):
    """(quad_coeff, normal, angle residual) at the fold tip.

    In the frame of the reference tangent, quad_coeff is the second-order
    coefficient of the moving arc minus that of the reference, both expanded at
    the tip.  The normal points to the side the fold sits on.
    """
    if fold.coeffs is None:
        raise DegenerateTangencyError("contact fit unavailable at the fold tip")
    origin, tvec, nvec, xs = fold.frame
    cm, cr = fold.coeffs
    dm = np.polynomial.polynomial.Polynomial(cm)
    dr = np.polynomial.polynomial.Polynomial(cr)
    q = 0.5 * float(dm.deriv(2)(xs) - dr.deriv(2)(xs))
    s1, s2 = float(dm.deriv()(xs)), float(dr.deriv()(xs))
    ang = abs(math.atan2(s1 - s2, 1.0 + s1 * s2))
    return q, nvec, ang


def detect_tangency(source: ArcPairSource, t: float, a_bracket, moving: str = "U",
                    xtol: float = 1e-13, nondeg_floor: float = 1e-8, h_speed: float | None = None,
                    check_counts: bool = True, family: MapFamily | None = None) -> TangencyEvent:
    """Root of the fold functional in a, with contact coefficient and speed."""
    a0, a1 = float(a_bracket[0]), float(a_bracket[1])

    def state(a):
        U, S = source(t, a)
        mv, rf = (U, S) if moving == "U" else (S, U)
        return fold_functional(mv, rf), mv, rf

    def G(a):
        return state(a)[0].value

    g0, g1 = G(a0), G(a1)
    if check_counts:
        U0, S0 = source(t, a0)
        U1, S1 = source(t, a1)
        c0, c1 = _count_crossings(U0, S0), _count_crossings(U1, S1)
        if abs(c0 - c1) != 2:
            raise BracketError(f"intersection counts {c0} and {c1} do not differ by 2")
    if g0 * g1 > 0:
        raise BracketError("fold functional does not change sign over the bracket")
    a_star = brentq(G, a0, a1, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    fold, mv, rf = state(a_star)
    q, nvec, ang = contact_geometry(mv, rf, fold)
    if abs(q) <= nondeg_floor:
        raise DegenerateTangencyError(f"quadratic contact coefficient {q:.3e} below floor")
    h = h_speed if h_speed is not None else max(1e-6 * abs(a1 - a0), 1e-9)
    speed = (G(a_star + h) - G(a_star - h)) / (2 * h)
    pv = source.param(t, a_star)
    param = ParamPoint(tuple(pv), family.param_names) if family is not None else pv
    return TangencyEvent(param=param, q1=fold.tip, quad_coeff=q, unfolding_speed=float(speed),
                         normal=nvec, angle_residual=float(ang), t=float(t), a=float(a_star),
                         bracket=(a0, a1), source=source)


def unfolding_speed(tangency: TangencyEvent, h_step: float = 1e-6,
                    unfold_floor: float = 1e-8, source: ArcPairSource | None = None) -> float:
    """Central difference of the fold functional in a at the tangency."""
    src = source if source is not None else tangency.source
    if src is None:
        raise ValueError("tangency carries no arc source")

    def G(a):
        U, S = src(tangency.t, a)
        return fold_functional(U, S).value

    sp = (G(tangency.a + h_step) - G(tangency.a - h_step)) / (2 * h_step)
    if abs(sp) <= unfold_floor:
        raise NotUnfoldingError(f"unfolding speed {sp:.3e} below floor")
    return float(sp)


@dataclass
class TangencyCurve:
    samples: list = field(default_factory=list)  # TangencyEvent
    gaps: list = field(default_factory=list)     # (t, reason)

    @property
    def t(self) -> np.ndarray:
        return np.array([e.t for e in self.samples])

    @property
    def a(self) -> np.ndarray:
        return np.array([e.a for e in self.samples])

    def to_csv(self) -> str:
        lines = ["t,a,quad_coeff,speed"]
        for e in self.samples:
            lines.append(f"{e.t:.17g},{e.a:.17g},{e.quad_coeff:.17g},{e.unfolding_speed:.17g}")
        return "\n".join(lines) + "\n"


def continue_tangency_locus(source: ArcPairSource, t_grid, seed: TangencyEvent,
                            halfwidth: float | None = None, xtol: float = 1e-13,
                            max_widen: int = 4, check_counts: bool = True) -> TangencyCurve:
    """Secant predictor in (t, a) with detect_tangency as corrector."""
    ts = np.sort(np.asarray(t_grid, dtype=float))
    if halfwidth is None:
        halfwidth = 0.5 * abs(seed.bracket[1] - seed.bracket[0]) if seed.bracket else 1e-2
    start = int(np.argmin(np.abs(ts - seed.t)))
    found: dict = {}
    gaps = []
    for order in (range(start, ts.size), range(start - 1, -1, -1)):
        hist = [(seed.t, seed.a)]
        for i in order:
            t = float(ts[i])
            if len(hist) >= 2:
                (t1, a1), (t2, a2) = hist[-2], hist[-1]
                pred = a2 + (a2 - a1) / (t2 - t1) * (t - t2) if t2 != t1 else a2
                w = max(halfwidth * 0.1, 4 * abs(pred - a2) * 0.5, 1e-9)
            else:
                pred = hist[-1][1]
                w = halfwidth
            ev = None
            err = ""
            for _ in range(max_widen):
                try:
                    ev = detect_tangency(source, t, (pred - w, pred + w), xtol=xtol,
                                         check_counts=check_counts)
                    break
                except (BracketError, DegenerateTangencyError, NoConvergenceError) as exc:
                    err = str(exc)
                    w *= 3.0
            if ev is None:
                gaps.append((t, err))
                continue
            found[t] = ev
            hist.append((t, ev.a))
    return TangencyCurve(samples=[found[t] for t in sorted(found)], gaps=sorted(gaps))
