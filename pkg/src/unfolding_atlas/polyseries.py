"""Truncated bivariate polynomial arithmetic for chart construction.

A series is an array ``P[comp, i, j]`` (or ``P[i, j]`` for a scalar series)
holding the coefficient of ``u^i w^j``; terms with ``i + j > D`` are dropped.
"""

from __future__ import annotations

import numpy as np


def truncate(P: np.ndarray, D: int) -> np.ndarray:
    n = P.shape[-1]
    i, j = np.indices((n, n))
    return np.where(i + j <= D, P, 0.0)


def mul(A: np.ndarray, B: np.ndarray, D: int) -> np.ndarray:
    n = D + 1
    out = np.zeros((n, n))
    nz = np.argwhere(A != 0.0)
    for i, j in nz:
        if i + j > D:
            continue
        sub = B[: n - i, : n - j]
        out[i:, j:] += A[i, j] * sub
    return truncate(out, D)


def compose(P: np.ndarray, U: np.ndarray, W: np.ndarray, D: int) -> np.ndarray:
    """Scalar series ``P(U, W)`` truncated at degree D (U, W scalar series)."""
    n = D + 1
    deg = P.shape[0] - 1
    one = np.zeros((n, n))
    one[0, 0] = 1.0
    upow = [one]
    for _ in range(deg):
        upow.append(mul(upow[-1], U, D))
    wpow = [one]
    for _ in range(deg):
        wpow.append(mul(wpow[-1], W, D))
    out = np.zeros((n, n))
    for i in range(deg + 1):
        for j in range(deg + 1 - 0):
            if j >= P.shape[1] or P[i, j] == 0.0:
                continue
            out += P[i, j] * mul(upow[i], wpow[j], D)
    return out


def compose_map(P: np.ndarray, G: np.ndarray, D: int) -> np.ndarray:
    """Vector series ``P(G)`` for P, G of shape (2, n, n)."""
    return np.stack([compose(P[c], G[0], G[1], D) for c in range(2)])


def pad(P: np.ndarray, D: int) -> np.ndarray:
    n = D + 1
    out = np.zeros(P.shape[:-2] + (n, n))
    m = min(n, P.shape[-1])
    out[..., :m, :m] = P[..., :m, :m]
    return truncate(out, D)


def identity(D: int) -> np.ndarray:
    n = D + 1
    out = np.zeros((2, n, n))
    out[0, 1, 0] = 1.0
    out[1, 0, 1] = 1.0
    return out


def affine(M: np.ndarray, b, D: int) -> np.ndarray:
    """Series of z -> M z + b."""
    n = D + 1
    out = np.zeros((2, n, n))
    for c in range(2):
        out[c, 0, 0] = b[c]
        out[c, 1, 0] = M[c, 0]
        out[c, 0, 1] = M[c, 1]
    return out


def evaluate(P: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Evaluate a vector series at points of shape (m, 2)."""
    u = pts[:, 0]
    w = pts[:, 1]
    n = P.shape[-1]
    out = np.zeros((pts.shape[0], 2))
    for c in range(2):
        acc = np.zeros_like(u)
        for i in range(n - 1, -1, -1):
            row = np.zeros_like(u)
            for j in range(n - 1, -1, -1):
                row = row * w + P[c, i, j]
            acc = acc * u + row
        out[:, c] = acc
    return out
