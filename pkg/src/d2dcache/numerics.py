"""Scalar numerical helpers shared by the analytic model and the optimizers."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Callable

from scipy import integrate

_EPS = sys.float_info.epsilon
_TINY = sys.float_info.min / _EPS
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class QuadratureSpec:
    relative_tolerance: float = 1e-10
    max_subdivisions: int = 200

    def __post_init__(self) -> None:
        if not self.relative_tolerance > 0:
            raise ValueError("relative_tolerance must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()


def _gamma_series(a: float, b: float, max_iter: int = 10_000) -> float:
    # gamma(a, b) = e^{-b} b^a sum_n b^n / (a (a+1) ... (a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(max_iter):
        ap += 1.0
        term *= b / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, b={b})")
    return total * math.exp(-b + a * math.log(b))


def _gamma_upper_cf(a: float, b: float, max_iter: int = 10_000) -> float:
    # Lentz evaluation of the continued fraction for the upper function.
    bb = b + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / bb
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        bb += 2.0
        d = an * d + bb
        if abs(d) < _TINY:
            d = _TINY
        c = bb + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, b={b})")
    return math.exp(-b + a * math.log(b)) * h


def lower_incomplete_gamma(a: float, b: float) -> float:
    """Unregularised lower incomplete gamma, the integral of t^(a-1) e^(-t) over [0, b].

    ``b = inf`` gives the complete gamma function.
    """
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    if not b >= 0:
        raise ValueError(f"b must be nonnegative, got {b}")
    if b == 0.0:
        return 0.0
    if math.isinf(b):
        return math.gamma(a)
    if b < a + 1.0:
        return _gamma_series(a, b)
    full = math.gamma(a)
    return max(full - _gamma_upper_cf(a, b), 0.0)


def _check_alpha(alpha: float) -> None:
    if not alpha > 2:
        raise ValueError(f"path-loss exponent must exceed 2, got {alpha}")


def _tail_integral(alpha: float, lower: float, quad: QuadratureSpec) -> float:
    """Integral of 1/(1 + u^(alpha/2)) over [lower, inf), mapped onto [0, 1)."""
    half = alpha / 2.0

    def integrand(t: float) -> float:
        if t >= 1.0:
            return 0.0
        s = 1.0 - t
        u = lower + t / s
        return 1.0 / ((1.0 + u**half) * s * s)

    value, _ = integrate.quad(
        integrand, 0.0, 1.0, epsabs=0.0, epsrel=quad.relative_tolerance, limit=quad.max_subdivisions
    )
    return value


def full_line_integral(alpha: float) -> float:
    """Integral of 1/(1 + u^(alpha/2)) over [0, inf) in closed form."""
    _check_alpha(alpha)
    x = 2.0 * math.pi / alpha
    return x / math.sin(x)


def full_line_integral_quadrature(alpha: float, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    _check_alpha(alpha)
    return _tail_integral(alpha, 0.0, quad)


def theta_interference(alpha: float, gamma_th: float, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Interference factor of the same-group D2D interferers."""
    _check_alpha(alpha)
    if gamma_th < 0:
        raise ValueError("gamma_th must be nonnegative")
    if gamma_th == 0.0:
        return 0.0
    scale = gamma_th ** (2.0 / alpha)
    return scale * _tail_integral(alpha, 1.0 / scale, quad)


def theta_bs(alpha: float, gamma_th: float, power_ratio: float) -> float:
    """Interference factor of the base stations; ``power_ratio`` is p_B / p_t."""
    _check_alpha(alpha)
    if gamma_th < 0:
        raise ValueError("gamma_th must be nonnegative")
    if not power_ratio > 0:
        raise ValueError("power_ratio must be positive")
    return (gamma_th * power_ratio) ** (2.0 / alpha) * full_line_integral(alpha)


def bisect_max(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Maximise a unimodal ``f`` on ``[lo, hi]``.

    Fast path: when ``f`` is still increasing at ``hi`` the upper end is
    returned (the usual case for the step-length search).  Otherwise the
    maximiser is bracketed by golden-section search; ties resolve to the
    leftmost point, so a constant ``f`` returns ``lo``.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if not tol > 0:
        raise ValueError("tol must be positive")
    f_lo = f(lo)
    f_hi = f(hi)
    probe = hi - min(tol, 0.5 * (hi - lo))
    if f_hi > f(probe) and f_hi > f_lo:
        return hi

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    fx = f(x)
    best, f_best = lo, f_lo
    for cand, fv in ((x, fx), (hi, f_hi)):
        if fv > f_best:
            best, f_best = cand, fv
    return best
