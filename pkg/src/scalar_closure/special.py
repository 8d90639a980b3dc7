"""Gauss hypergeometric function for real arguments in [0, 1).

The moment formulas for time integrals of geometric Brownian motion
need 2F1(a, b; c; z) only on the real interval z in [0, 1), with
parameter combinations where the function is finite.  This keeps the
implementation small and fully testable: the defining power series for
z <= 1/2, and the standard linear transformation to argument 1 - z
otherwise.  The transformation degenerates (logarithmic case) when
c - a - b is an integer; such parameters are rejected here, and the one
such case the moment formulas actually need (order r = -1) is served by
a closed form in the caller instead.
"""

from __future__ import annotations

import math

__all__ = ["SpecialFunctionError", "hyp2f1"]

_MAX_TERMS = 500
_TERM_TOL = 1e-16


class SpecialFunctionError(ValueError):
    """Raised for arguments outside this implementation's domain."""


def _rgamma(x: float) -> float:
    """1 / Gamma(x), with the value 0 at the poles x = 0, -1, -2, ..."""
    if x <= 0.0 and x == round(x):
        return 0.0
    return 1.0 / math.gamma(x)


def _gauss_series(a: float, b: float, c: float, z: float) -> float:
    """Power series sum_k (a)_k (b)_k / ((c)_k k!) z^k for |z| <= 1/2."""
    term = 1.0
    total = 1.0
    for k in range(_MAX_TERMS):
        denom = (c + k) * (1.0 + k)
        if denom == 0.0:
            raise SpecialFunctionError(
                f"c must not be a non-positive integer, got c={c}")
        term *= (a + k) * (b + k) / denom * z
        total += term
        if abs(term) <= _TERM_TOL * max(abs(total), 1.0):
            return total
    raise SpecialFunctionError(
        f"series did not converge in {_MAX_TERMS} terms at z={z}")


def hyp2f1(a: float, b: float, c: float, z: float) -> float:
    """2F1(a, b; c; z) for 0 <= z < 1.

    Uses the Gauss series directly for z <= 1/2 and the linear
    transformation

        F(a,b;c;z) = G(c)G(c-a-b)/(G(c-a)G(c-b)) F(a,b;a+b-c+1;1-z)
          + (1-z)^(c-a-b) G(c)G(a+b-c)/(G(a)G(b)) F(c-a,c-b;c-a-b+1;1-z)

    for z > 1/2.  Integer c - a - b (the logarithmic case) is rejected.
    """
    for name, val in (("a", a), ("b", b), ("c", c), ("z", z)):
        if not math.isfinite(val):
            raise SpecialFunctionError(f"{name} must be finite, got {val}")
    if not 0.0 <= z < 1.0:
        raise SpecialFunctionError(f"argument must lie in [0, 1), got {z}")
    if c <= 0.0 and c == round(c):
        raise SpecialFunctionError(f"c must not be a non-positive integer, got {c}")
    if z <= 0.5:
        return _gauss_series(a, b, c, z)
    s = c - a - b
    if abs(s - round(s)) < 1e-10:
        raise SpecialFunctionError(
            f"c - a - b = {s} is (near) integer: logarithmic case not supported")
    w = 1.0 - z
    p1 = math.gamma(c) * math.gamma(s) * _rgamma(c - a) * _rgamma(c - b)
    p2 = w**s * math.gamma(c) * math.gamma(-s) * _rgamma(a) * _rgamma(b)
    t1 = p1 * _gauss_series(a, b, a + b - c + 1.0, w) if p1 != 0.0 else 0.0
    t2 = p2 * _gauss_series(c - a, c - b, s + 1.0, w) if p2 != 0.0 else 0.0
    return t1 + t2
