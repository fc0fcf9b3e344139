"""Compiled inner loops shared by every family kind.

A family is reduced to ``(kind, coef)``: ``kind`` selects the evaluator and
``coef`` is a flat float64 array of constants at a fixed parameter point.

Polynomial layout: ``[deg, Ax, Ay, Ax_x, Ax_y, Ay_x, Ay_y, |Ax|, |Ay|]`` where
each table is ``(deg+1)**2`` row-major coefficients of ``x**i y**j``.

Model layout: see ``MODEL_FIELDS``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

KIND_POLY = 0
KIND_MODEL = 1

MODEL_FIELDS = (
    "lam", "mu", "kappa", "kappa3", "c", "c2", "d", "e",
    "q1x", "y_lo", "x_win", "N", "a_eff", "shift",
)
_M = {name: i for i, name in enumerate(MODEL_FIELDS)}
M_LAM, M_MU, M_K, M_K3, M_C, M_C2, M_D, M_E = (_M[k] for k in MODEL_FIELDS[:8])
M_Q1X, M_YLO, M_XWIN, M_N, M_A, M_SHIFT = (_M[k] for k in MODEL_FIELDS[8:])

U_DOUBLE = 2.0 ** -53


@njit(cache=True)
def _poly_table(coef, table, x, y):
    deg = int(coef[0])
    n1 = deg + 1
    base = 1 + table * n1 * n1
    acc = 0.0
    for i in range(deg, -1, -1):
        row = 0.0
        for j in range(deg, -1, -1):
            row = row * y + coef[base + i * n1 + j]
        acc = acc * x + row
    return acc


@njit(cache=True)
def _model_region(coef, x, y):
    """0 linear, 1 fold, 2 shift."""
    if y < coef[M_YLO]:
        return 0, 0.0
    nsteps = int(coef[M_N])
    xw = coef[M_XWIN]
    for k in range(nsteps - 1, 0, -1):
        off = coef[M_SHIFT] * k
        if abs(x - off) <= xw:
            if k == nsteps - 1:
                return 1, off
            return 2, off
    if abs(x) <= xw:
        if nsteps == 1:
            return 1, 0.0
        return 2, 0.0
    return 0, 0.0


@njit(cache=True)
def step(kind, coef, x, y):
    if kind == KIND_POLY:
        return _poly_table(coef, 0, x, y), _poly_table(coef, 1, x, y)
    reg, off = _model_region(coef, x, y)
    if reg == 0:
        return coef[M_LAM] * x, coef[M_MU] * y
    if reg == 2:
        return x + coef[M_SHIFT], y
    xx = x - off
    Y = y - 1.0
    xn = coef[M_Q1X] + Y * (coef[M_C] + coef[M_C2] * Y) + coef[M_D] * xx
    yn = coef[M_A] + Y * Y * (coef[M_K] + coef[M_K3] * Y) + coef[M_E] * xx
    return xn, yn


@njit(cache=True)
def jac(kind, coef, x, y):
    if kind == KIND_POLY:
        return (_poly_table(coef, 2, x, y), _poly_table(coef, 3, x, y),
                _poly_table(coef, 4, x, y), _poly_table(coef, 5, x, y))
    reg, off = _model_region(coef, x, y)
    if reg == 0:
        return coef[M_LAM], 0.0, 0.0, coef[M_MU]
    if reg == 2:
        return 1.0, 0.0, 0.0, 1.0
    Y = y - 1.0
    return (coef[M_D], coef[M_C] + 2.0 * coef[M_C2] * Y,
            coef[M_E], Y * (2.0 * coef[M_K] + 3.0 * coef[M_K3] * Y))


@njit(cache=True)
def term_scale(kind, coef, x, y):
    """Sum of absolute values of the terms entering one step (rounding scale)."""
    if kind == KIND_POLY:
        ax, ay = abs(x), abs(y)
        return _poly_table(coef, 6, ax, ay) + _poly_table(coef, 7, ax, ay)
    reg, off = _model_region(coef, x, y)
    if reg == 0:
        return abs(coef[M_LAM] * x) + abs(coef[M_MU] * y)
    if reg == 2:
        return abs(x) + abs(coef[M_SHIFT]) + abs(y)
    Y = abs(y - 1.0)
    xx = abs(x - off)
    return (abs(coef[M_Q1X]) + Y * (abs(coef[M_C]) + abs(coef[M_C2]) * Y)
            + abs(coef[M_D]) * xx + abs(coef[M_A])
            + Y * Y * (abs(coef[M_K]) + abs(coef[M_K3]) * Y) + abs(coef[M_E]) * xx)


@njit(cache=True)
def eval_many(kind, coef, pts):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        out[i, 0], out[i, 1] = step(kind, coef, pts[i, 0], pts[i, 1])
    return out


@njit(cache=True)
def jac_many(kind, coef, pts):
    out = np.empty((pts.shape[0], 2, 2))
    for i in range(pts.shape[0]):
        a, b, c, d = jac(kind, coef, pts[i, 0], pts[i, 1])
        out[i, 0, 0] = a
        out[i, 0, 1] = b
        out[i, 1, 0] = c
        out[i, 1, 1] = d
    return out


@njit(cache=True)
def _qr_step(j00, j01, j10, j11, q00, q01, q10, q11):
    # M = J Q, then Gram-Schmidt with positive diagonal
    m00 = j00 * q00 + j01 * q10
    m10 = j10 * q00 + j11 * q10
    m01 = j00 * q01 + j01 * q11
    m11 = j10 * q01 + j11 * q11
    r00 = math.hypot(m00, m10)
    if r00 == 0.0:
        n00, n10 = q00, q10
    else:
        n00, n10 = m00 / r00, m10 / r00
    # second column orthogonal to first, orientation fixed by right-handedness
    n01, n11 = -n10, n00
    r01 = n00 * m01 + n10 * m11
    r11 = n01 * m01 + n11 * m11
    if r11 < 0.0:
        n01, n11 = -n01, -n11
        r11 = -r11
    return n00, n01, n10, n11, r00, r01, r11


@njit(cache=True)
def orbit(kind, coef, x0, y0, n, bailout, u):
    pts = np.empty((n + 1, 2))
    Q = np.empty((n + 1, 2, 2))
    R = np.zeros((n, 2, 2))
    cond = np.zeros(n + 1)
    pts[0, 0] = x0
    pts[0, 1] = y0
    Q[0, 0, 0] = 1.0
    Q[0, 0, 1] = 0.0
    Q[0, 1, 0] = 0.0
    Q[0, 1, 1] = 1.0
    q00, q01, q10, q11 = 1.0, 0.0, 0.0, 1.0
    x, y = x0, y0
    esc = -1
    for k in range(n):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        s = term_scale(kind, coef, x, y)
        xn, yn = step(kind, coef, x, y)
        jn = math.sqrt(j00 * j00 + j01 * j01 + j10 * j10 + j11 * j11)
        cond[k + 1] = jn * cond[k] + 4.0 * u * (s + abs(xn) + abs(yn))
        q00, q01, q10, q11, r00, r01, r11 = _qr_step(j00, j01, j10, j11, q00, q01, q10, q11)
        R[k, 0, 0] = r00
        R[k, 0, 1] = r01
        R[k, 1, 1] = r11
        Q[k + 1, 0, 0] = q00
        Q[k + 1, 0, 1] = q01
        Q[k + 1, 1, 0] = q10
        Q[k + 1, 1, 1] = q11
        pts[k + 1, 0] = xn
        pts[k + 1, 1] = yn
        x, y = xn, yn
        if not (math.hypot(x, y) <= bailout):
            esc = k + 1
            break
    return pts, Q, R, cond, esc


@njit(cache=True)
def orbit_jacobian(kind, coef, x, y, n):
    """Return (x_n, y_n, DF^n) by direct products."""
    a, b, c, d = 1.0, 0.0, 0.0, 1.0
    for _ in range(n):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        a, b, c, d = (j00 * a + j01 * c, j00 * b + j01 * d,
                      j10 * a + j11 * c, j10 * b + j11 * d)
        x, y = step(kind, coef, x, y)
    J = np.empty((2, 2))
    J[0, 0] = a
    J[0, 1] = b
    J[1, 0] = c
    J[1, 1] = d
    return x, y, J


@njit(cache=True)
def orbit_points_jacobians(kind, coef, x, y, n):
    pts = np.empty((n + 1, 2))
    jacs = np.empty((n, 2, 2))
    pts[0, 0] = x
    pts[0, 1] = y
    for k in range(n):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        jacs[k, 0, 0] = j00
        jacs[k, 0, 1] = j01
        jacs[k, 1, 0] = j10
        jacs[k, 1, 1] = j11
        x, y = step(kind, coef, x, y)
        pts[k + 1, 0] = x
        pts[k + 1, 1] = y
    return pts, jacs


@njit(cache=True)
def iterate_point(kind, coef, x, y, n):
    for _ in range(n):
        x, y = step(kind, coef, x, y)
    return x, y


@njit(cache=True)
def lyapunov_sum(kind, coef, x, y, n, transient, bailout):
    """Top-exponent sum of log R00 over n steps after a transient.

    The frame starts rotated off the axes and is aligned during the transient.
    Returns (sum, steps_done, escaped).
    """
    th = 0.5 * (math.sqrt(5.0) - 1.0)
    q00, q10 = math.cos(th), math.sin(th)
    q01, q11 = -q10, q00
    total = 0.0
    for k in range(transient + n):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        q00, q01, q10, q11, r00, r01, r11 = _qr_step(j00, j01, j10, j11, q00, q01, q10, q11)
        x, y = step(kind, coef, x, y)
        if not (math.hypot(x, y) <= bailout):
            return total, k - transient, True
        if k >= transient:
            if r00 == 0.0:
                return -np.inf, k - transient + 1, False
            total += math.log(r00)
    return total, n, False


@njit(cache=True)
def lyapunov_blocks(kind, coef, x, y, n, transient, bailout, nblocks):
    """Per-block sums of log R00, used for bootstrap error bars."""
    th = 0.5 * (math.sqrt(5.0) - 1.0)
    q00, q10 = math.cos(th), math.sin(th)
    q01, q11 = -q10, q00
    blocks = np.zeros(nblocks)
    bsize = max(n // nblocks, 1)
    for k in range(transient + n):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        q00, q01, q10, q11, r00, r01, r11 = _qr_step(j00, j01, j10, j11, q00, q01, q10, q11)
        x, y = step(kind, coef, x, y)
        if not (math.hypot(x, y) <= bailout):
            return blocks, True
        if k >= transient:
            b = (k - transient) // bsize
            if b < nblocks:
                blocks[b] += math.log(r00)
    return blocks / bsize, False


@njit(cache=True)
def ce_proxy(kind, coef, x, y, vx, vy, n, bailout):
    best = np.inf
    logsum = 0.0
    nv = math.hypot(vx, vy)
    vx /= nv
    vy /= nv
    for k in range(1, n + 1):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        wx = j00 * vx + j01 * vy
        wy = j10 * vx + j11 * vy
        nw = math.hypot(wx, wy)
        if nw == 0.0:
            return -np.inf, False
        logsum += math.log(nw)
        vx, vy = wx / nw, wy / nw
        x, y = step(kind, coef, x, y)
        if not (math.hypot(x, y) <= bailout):
            return best, True
        r = logsum / k
        if r < best:
            best = r
    return best, False


@njit(cache=True)
def iterate_many(kind, coef, pts, n, bailout):
    out = pts.copy()
    esc = np.zeros(pts.shape[0], dtype=np.bool_)
    for i in range(pts.shape[0]):
        x, y = pts[i, 0], pts[i, 1]
        for _ in range(n):
            x, y = step(kind, coef, x, y)
            if not (math.hypot(x, y) <= bailout):
                esc[i] = True
                break
        out[i, 0] = x
        out[i, 1] = y
    return out, esc


@njit(cache=True)
def tails_many(kind, coef, pts, transient, window, bailout):
    tails = np.zeros((pts.shape[0], window, 2))
    esc = np.zeros(pts.shape[0], dtype=np.bool_)
    for i in range(pts.shape[0]):
        x, y = pts[i, 0], pts[i, 1]
        for k in range(transient + window):
            if k >= transient:
                tails[i, k - transient, 0] = x
                tails[i, k - transient, 1] = y
            x, y = step(kind, coef, x, y)
            if not (math.hypot(x, y) <= bailout):
                esc[i] = True
                break
    return tails, esc
