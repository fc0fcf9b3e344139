"""Double-double arithmetic on numpy arrays.

A value is a pair ``(hi, lo)`` with ``|lo| <= ulp(hi)/2``.  All operations are
built from the error-free transformations two_sum and two_prod, the latter via
Dekker splitting so no fused multiply-add is needed.
"""

from __future__ import annotations

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def split(a):
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = split(a)
    bh, bl = split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def dd_add(ah, al, bh, bl):
    s, e = two_sum(ah, bh)
    t, f = two_sum(al, bl)
    e = e + t
    s, e = quick_two_sum(s, e)
    e = e + f
    return quick_two_sum(s, e)


def dd_add_d(ah, al, b):
    s, e = two_sum(ah, b)
    e = e + al
    return quick_two_sum(s, e)


def dd_neg(ah, al):
    return -ah, -al


def dd_sub(ah, al, bh, bl):
    return dd_add(ah, al, -bh, -bl)


def dd_mul(ah, al, bh, bl):
    p, e = two_prod(ah, bh)
    e = e + (ah * bl + al * bh)
    return quick_two_sum(p, e)


def dd_mul_d(ah, al, b):
    p, e = two_prod(ah, b)
    e = e + al * b
    return quick_two_sum(p, e)


def dd_div(ah, al, bh, bl):
    q1 = ah / bh
    rh, rl = dd_sub(ah, al, *dd_mul_d(bh, bl, q1))
    q2 = rh / bh
    rh, rl = dd_sub(rh, rl, *dd_mul_d(bh, bl, q2))
    q3 = rh / bh
    q1, q2 = quick_two_sum(q1, q2)
    return dd_add_d(q1, q2, q3)


def dd_from(x):
    x = np.asarray(x, dtype=np.float64)
    return x, np.zeros_like(x)


def dd_to_float(h, l):
    return h + l


def dd_poly_horner(coeffs, xh, xl):
    """Evaluate ``sum_k coeffs[k] x^k`` (double coefficients) in double-double."""
    rh, rl = dd_from(np.full(np.shape(xh), coeffs[-1], dtype=np.float64))
    for c in coeffs[-2::-1]:
        rh, rl = dd_mul(rh, rl, xh, xl)
        rh, rl = dd_add_d(rh, rl, c)
    return rh, rl


def dd_product_less_than_one(factors) -> bool:
    """Decide ``prod |factors| < 1`` using double-double accumulation."""
    h, l = 1.0, 0.0
    for f in factors:
        h, l = dd_mul_d(h, l, abs(float(f)))
    h, l = dd_add_d(h, l, -1.0)
    return bool(h + l < 0.0)
