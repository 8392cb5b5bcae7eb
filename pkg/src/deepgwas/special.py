"""Survival functions for the normal, chi-square and Student t distributions.

Built on the regularized incomplete gamma and beta functions, evaluated with
series / Lentz continued fractions in log space so that tail probabilities far
below the double-precision underflow limit still yield finite ``-log10 p``.
"""

from __future__ import annotations

import math

from .errors import ConfigError

_EPS = 1e-16
_FPMIN = 1e-300
_MAX_ITER = 100_000
LN10 = math.log(10.0)


def _check_df(df: float) -> None:
    if not (df >= 1 and math.isfinite(df)):
        raise ConfigError(f"degrees of freedom must be a finite number >= 1, got {df}")


def _gamma_series(a: float, x: float) -> float:
    """log P(a, x) by the power series (use for x < a + 1)."""
    ap, term = a, 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return -x + a * math.log(x) - math.lgamma(a) + math.log(total)


def _gamma_cf(a: float, x: float) -> float:
    """log Q(a, x) by the Lentz continued fraction (use for x >= a + 1)."""
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return -x + a * math.log(x) - math.lgamma(a) + math.log(h)


def log_gamma_q(a: float, x: float) -> float:
    """log of the regularized upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ConfigError(f"shape must be positive, got {a}")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return -math.inf
    if x < a + 1.0:
        return math.log1p(-math.exp(_gamma_series(a, x)))
    return _gamma_cf(a, x)


def log_gamma_p(a: float, x: float) -> float:
    if a <= 0:
        raise ConfigError(f"shape must be positive, got {a}")
    if x <= 0:
        return -math.inf
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return math.log1p(-math.exp(_gamma_cf(a, x)))


def gamma_q(a: float, x: float) -> float:
    return math.exp(log_gamma_q(a, x))


def gamma_p(a: float, x: float) -> float:
    return math.exp(log_gamma_p(a, x))


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def log_betainc(a: float, b: float, x: float, log_x: float | None = None, log_1mx: float | None = None) -> float:
    """log of the regularized incomplete beta I_x(a, b).

    ``log_x`` / ``log_1mx`` may be supplied when they can be formed more
    accurately than ``log(x)`` / ``log1p(-x)``.
    """
    if a <= 0 or b <= 0:
        raise ConfigError(f"beta parameters must be positive, got a={a}, b={b}")
    # 1 - x from log_1mx when given: x may round to 1 while 1 - x is still representable
    y = math.exp(log_1mx) if log_1mx is not None else 1.0 - x
    if x <= 0:
        return -math.inf
    if y <= 0:
        return 0.0
    log_x = math.log(x) if log_x is None else log_x
    log_1mx = math.log1p(-x) if log_1mx is None else log_1mx
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * log_x + b * log_1mx
    if x < (a + 1.0) / (a + b + 2.0):
        return log_front + math.log(_beta_cf(a, b, x)) - math.log(a)
    tail = math.exp(log_front + math.log(_beta_cf(b, a, y)) - math.log(b))
    return math.log1p(-min(tail, 1.0)) if tail < 1.0 else -math.inf


def betainc(a: float, b: float, x: float) -> float:
    return math.exp(log_betainc(a, b, x))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def log_normal_sf(z: float) -> float:
    p = normal_sf(z)
    if p > 1e-290:
        return math.log(p)
    return log_gamma_q(0.5, 0.5 * z * z) - math.log(2.0)


def chi2_sf(x: float, df: float) -> float:
    _check_df(df)
    return gamma_q(0.5 * df, 0.5 * x)


def log_chi2_sf(x: float, df: float) -> float:
    _check_df(df)
    return log_gamma_q(0.5 * df, 0.5 * x)


def _log_t_two_sided(t: float, df: float) -> float:
    """log P(|T| >= |t|) for T ~ t(df)."""
    t2 = t * t
    if t2 == 0.0:
        return 0.0
    if math.isinf(t2):
        return -math.inf
    log_denom = math.log(df + t2)
    x = df / (df + t2)
    return log_betainc(0.5 * df, 0.5, x, math.log(df) - log_denom, math.log(t2) - log_denom)


def t_sf(t: float, df: float) -> float:
    _check_df(df)
    half_tail = 0.5 * math.exp(_log_t_two_sided(t, df))
    return half_tail if t >= 0 else 1.0 - half_tail


def log_t_sf(t: float, df: float) -> float:
    _check_df(df)
    if t >= 0:
        return _log_t_two_sided(t, df) - math.log(2.0)
    return math.log1p(-0.5 * math.exp(_log_t_two_sided(t, df)))


def neg_log10_p_normal(z: float) -> float:
    """-log10 of the two-sided normal p-value, i.e. of chi2_sf(z^2, 1)."""
    if math.isnan(z):
        return math.nan
    return -log_gamma_q(0.5, 0.5 * z * z) / LN10


def neg_log10_p_t(t: float, df: float) -> float:
    """-log10 of the two-sided Student t p-value."""
    _check_df(df)
    if math.isnan(t):
        return math.nan
    return -_log_t_two_sided(t, df) / LN10
