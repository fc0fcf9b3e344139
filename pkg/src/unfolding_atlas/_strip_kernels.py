"""Compiled helpers for return maps and the straightened composition."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._kernels import jac, step


@njit(cache=True)
def ret(kind, coef, m, x, y):
    """(x_m, y_m, J) for the m-fold composition, J as 4 scalars."""
    a, b, c, d = 1.0, 0.0, 0.0, 1.0
    for _ in range(m):
        j00, j01, j10, j11 = jac(kind, coef, x, y)
        a, b, c, d = (j00 * a + j01 * c, j00 * b + j01 * d,
                      j10 * a + j11 * c, j10 * b + j11 * d)
        x, y = step(kind, coef, x, y)
    return x, y, a, b, c, d


@njit(cache=True)
def solve_fiber(kind, coef, m, xfix, target, y0, tol, maxit):
    """Solve pi_x F^m(xfix, y) = target for y by safeguarded Newton."""
    y = y0
    for _ in range(maxit):
        X, Yy, a, b, c, d = ret(kind, coef, m, xfix, y)
        r = X - target
        if not math.isfinite(r) or b == 0.0:
            return y, False
        dy = -r / b
        y = y + dy
        if abs(dy) <= tol * (abs(y) + 1e-300) or abs(r) <= 1e-15 * (1.0 + abs(target)):
            X, Yy, a, b, c, d = ret(kind, coef, m, xfix, y)
            return y, math.isfinite(X)
    return y, False


@njit(cache=True)
def straight_g(kind, coef, m, X, Yc, y0):
    """g(X, Yc) = pi_x F^m(F^m(sigma^{-1}(X, Yc))) with sigma^{-1}(X, Yc) = (Yc, y*)."""
    ystar, ok = solve_fiber(kind, coef, m, Yc, X, y0, 1e-15, 60)
    if not ok:
        return np.nan, ystar
    x1, y1, a, b, c, d = ret(kind, coef, m, Yc, ystar)
    x2, y2, a, b, c, d = ret(kind, coef, m, x1, y1)
    return x2, ystar


@njit(cache=True)
def straight_g_grid(kind, coef, m, Xs, Ys, y0):
    out = np.empty((Xs.size, Ys.size))
    for j in range(Ys.size):
        yseed = y0
        for i in range(Xs.size):
            g, ystar = straight_g(kind, coef, m, Xs[i], Ys[j], yseed)
            out[i, j] = g
            if math.isfinite(g):
                yseed = ystar
    return out


@njit(cache=True)
def psi(kind, coef, m, x, y):
    """pi_x F^{2m}(x, y)."""
    x1, y1, a, b, c, d = ret(kind, coef, 2 * m, x, y)
    return x1


@njit(cache=True)
def phi_system(kind, coef, m, x, y, hy, mode):
    """Phi = (pi_x F^m - x, d/dy pi_x F^{2m}); mode 0: 5-point FD, 1: tangent."""
    x1, y1, a, b, c, d = ret(kind, coef, m, x, y)
    p1 = x1 - x
    if mode == 1:
        x2, y2, a2, b2, c2, d2 = ret(kind, coef, 2 * m, x, y)
        return p1, b2
    f2 = psi(kind, coef, m, x, y + 2 * hy)
    f1 = psi(kind, coef, m, x, y + hy)
    fm1 = psi(kind, coef, m, x, y - hy)
    fm2 = psi(kind, coef, m, x, y - 2 * hy)
    return p1, (-f2 + 8.0 * f1 - 8.0 * fm1 + fm2) / (12.0 * hy)
