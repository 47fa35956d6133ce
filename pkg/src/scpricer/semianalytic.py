"""Closed-form prices E[max(omega (g~(xi) - K), 0)] via truncated normal moments.

The moment recursion

    m_i(a, b) = (i - 1) m_{i-2}(a, b) - (b^{i-1} phi(b) - a^{i-1} phi(a)) / (Phi(b) - Phi(a))

loses roughly log10((i-1)!!) digits on short intervals, so it is run in
extended precision and rounded to float64 at the end.
"""
from __future__ import annotations

import math
from functools import lru_cache

import mpmath
import numpy as np

from .collocation import PiecewiseMap, inverse_map

_DPS = 40
MIN_MASS = 1e-300


def _mp(x) -> mpmath.mpf:
    if x == math.inf:
        return mpmath.inf
    if x == -math.inf:
        return -mpmath.inf
    return mpmath.mpf(x)


def _boundary(x, power: int):
    """x^power * phi(x), zero at +-inf."""
    if mpmath.isinf(x):
        return mpmath.mpf(0)
    return x**power * mpmath.npdf(x)


def _mass(a, b):
    # Phi(b) - Phi(a) without cancellation in the upper tail
    if a >= 0:
        return mpmath.ncdf(-a) - mpmath.ncdf(-b)
    return mpmath.ncdf(b) - mpmath.ncdf(a)


def _working_dps(max_i: int, a: float, b: float) -> int:
    """Digits for the forward recursion.

    It loses about log10((i-1)!!) digits, plus i log10(1/r) when the interval
    sits inside |x| <= r < 1 (the moments then shrink like r^i).
    """
    r = max(abs(a), abs(b))
    loss = math.lgamma(max_i / 2 + 1) / math.log(10) + max_i / 2 * math.log10(2)
    if r < 1:
        loss += max_i * -math.log10(max(r, 1e-300))
    return _DPS + int(math.ceil(loss))


def _moments_mp(max_i: int, a: float, b: float):
    with mpmath.workdps(_working_dps(max_i, a, b)):
        lo, hi = _mp(a), _mp(b)
        mass = _mass(lo, hi)
        if mass < MIN_MASS:
            raise ValueError(f"interval [{a}, {b}] carries normal mass {float(mass):.3g} < {MIN_MASS}")
        m = [mpmath.mpf(1)]
        prev = mpmath.mpf(0)  # m_{-1}
        for i in range(1, max_i + 1):
            nxt = (i - 1) * prev - (_boundary(hi, i - 1) - _boundary(lo, i - 1)) / mass
            prev = m[-1]
            m.append(nxt)
        return m, mass


@lru_cache(maxsize=4096)
def _moments_cached(max_i: int, a: float, b: float):
    m, mass = _moments_mp(max_i, a, b)
    return tuple(float(v) for v in m), float(mass)


def trunc_moments(max_i: int, a: float, b: float) -> np.ndarray:
    """[m_0(a,b), ..., m_max_i(a,b)] with m_i(a,b) = E[xi^i | a <= xi <= b]."""
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    if max_i < 0:
        raise ValueError("moment order must be >= 0")
    return np.array(_moments_cached(int(max_i), float(a), float(b))[0])


def trunc_moment(i: int, a: float, b: float) -> float:
    return float(trunc_moments(i, a, b)[i])


def poly_normal_integral(alpha, a: float, b: float) -> float:
    """int_a^b p(x) phi(x) dx for p(x) = sum_i alpha_i x^i; 0 on empty intervals."""
    if not a < b:
        return 0.0
    alpha = np.asarray(alpha, dtype=float)
    with mpmath.workdps(_DPS):
        m, mass = _moments_mp(alpha.size - 1, a, b)
        total = mpmath.fsum(mpmath.mpf(float(c)) * mi for c, mi in zip(alpha, m))
        return float(total * mass)


def _interval_terms(gmap: PiecewiseMap, lower: float, omega: int) -> float:
    """int_{lower}^{inf} g~(omega y) phi(y) dy split over the three regions.

    With y = omega x the lower tail of g~ becomes the omega-side piece, and a
    monomial coefficient alpha_i picks up a factor omega^i.
    """
    xb = gmap.basis.xi_bar
    pieces = (gmap.alpha_minus, gmap.alpha_mid, gmap.alpha_plus)
    if omega == -1:
        pieces = pieces[::-1]
    left, mid, right = (p * float(omega) ** np.arange(p.size) for p in pieces)
    b1 = max(-xb, lower)
    b2 = max(xb, lower)
    return (
        poly_normal_integral(left, lower, b1)
        + poly_normal_integral(mid, b1, b2)
        + poly_normal_integral(right, b2, math.inf)
    )


def expected_value(gmap: PiecewiseMap) -> float:
    """E[g~(xi)] over the three regions."""
    return _interval_terms(gmap, -math.inf, 1)


def _upper_prob(x: float) -> float:
    with mpmath.workdps(_DPS):
        return float(mpmath.ncdf(-_mp(x)))


def semi_analytic_price(gmap: PiecewiseMap, k: float, omega: int = 1, c: float = 1.0) -> float:
    """C * E[max(omega (g~(xi) - K), 0)] with no sampling.

    c_K = g~^{-1}(K) comes from interpolation on the pairs (a_k, xi_k); the
    expectation is the three-interval truncated-moment sum over
    {omega xi >= omega c_K}.
    """
    if omega not in (1, -1):
        raise ValueError("omega must be +1 or -1")
    if not c > 0:
        raise ValueError("prefactor must be > 0")
    if np.any(np.diff(gmap.a) < 0):
        raise ValueError("map is not monotone")
    c_k = inverse_map(gmap, k)
    lower = omega * c_k
    if lower == math.inf:
        return 0.0
    integral = _interval_terms(gmap, lower, omega)
    return c * omega * (integral - k * _upper_prob(lower))


def parity_gap(gmap: PiecewiseMap, k: float, c: float = 1.0) -> float:
    """price(call) - price(put) - C (E[g~] - K); zero up to rounding."""
    call = semi_analytic_price(gmap, k, 1, c)
    put = semi_analytic_price(gmap, k, -1, c)
    return call - put - c * (expected_value(gmap) - k)
