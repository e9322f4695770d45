"""Welch's two-sample t-test with a self-contained Student-t CDF."""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 500


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf2(t: float, dof: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``dof``."""
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * dof, 0.5, dof / (dof + t * t))


def t_cdf(t: float, dof: float) -> float:
    tail = 0.5 * t_sf2(t, dof)
    return 1.0 - tail if t > 0 else tail


class WelchResult(NamedTuple):
    t_stat: float
    dof: float
    p_value: float
    degenerate: bool = False


def _mean_var(x: Sequence[float]):
    n = len(x)
    m = math.fsum(x) / n
    v = math.fsum((xi - m) ** 2 for xi in x) / (n - 1)
    return n, m, v


def welch_t(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance t-test, two-sided.

    Both samples constant: equal means give t=0, p=1; unequal means give
    t=+-inf, p=0 and ``degenerate=True``.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError(f"welch_t needs >= 2 values per sample, got {len(a)} and {len(b)}")
    if not all(math.isfinite(v) for v in a + b):
        raise ValueError("welch_t: non-finite sample values")
    na, ma, va = _mean_var(a)
    nb, mb, vb = _mean_var(b)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    if se2 == 0.0:
        if ma == mb:
            return WelchResult(0.0, float(na + nb - 2), 1.0, False)
        return WelchResult(math.copysign(math.inf, ma - mb), float(na + nb - 2), 0.0, True)
    t = (ma - mb) / math.sqrt(se2)
    # Welch-Satterthwaite on variance shares; squaring sa, sb directly can underflow
    ra, rb = sa / se2, sb / se2
    dof = 1.0 / (ra * ra / (na - 1) + rb * rb / (nb - 1))
    return WelchResult(t, dof, t_sf2(t, dof), False)
