"""Probability distributions behind every reported p-value.

The t and F distributions go through a regularized incomplete beta function
evaluated by continued fraction. The studentized range distribution is
evaluated by nested Gauss-Legendre quadrature: the inner integral gives the
range distribution of ``k`` standard normals, the outer integral mixes it
over the chi-distributed scale estimate.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import chdtri, ndtr

_BETA_EPS = 1e-16
_BETA_TINY = 1e-300
_BETA_MAXIT = 10_000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _stirling_tail(z: float) -> float:
    """lgamma(z) minus its leading Stirling terms; accurate for z >= 10."""
    z2 = z * z
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * z2)) / z2) / z2) / z


def lbeta(a: float, b: float) -> float:
    """log B(a, b) without the cancellation of lgamma differences at large arguments."""
    small, big = min(a, b), max(a, b)
    if big < 10.0:
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    # lgamma(big + small) - lgamma(big) from the Stirling expansion, differenced analytically
    diff = ((big - 0.5) * math.log1p(small / big) + small * math.log(big + small) - small
            + _stirling_tail(big + small) - _stirling_tail(big))
    return math.lgamma(small) - diff


def _betainc_pair(a: float, b: float, x: float) -> tuple[float, float]:
    """Return (I_x(a, b), 1 - I_x(a, b)), each computed without cancellation."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a, b > 0")
    if math.isnan(x):
        return math.nan, math.nan
    if x <= 0.0:
        return 0.0, 1.0
    if x >= 1.0:
        return 1.0, 0.0
    log_front = a * math.log(x) + b * math.log1p(-x) - lbeta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        lower = math.exp(log_front) * _betacf(a, b, x) / a
        return lower, 1.0 - lower
    upper = math.exp(log_front) * _betacf(b, a, 1.0 - x) / b
    return 1.0 - upper, upper


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    return _betainc_pair(float(a), float(b), float(x))[0]


def betaincc(a: float, b: float, x: float) -> float:
    """Complement 1 - I_x(a, b), accurate when it is tiny."""
    return _betainc_pair(float(a), float(b), float(x))[1]


def t_cdf(x: float, df: float) -> float:
    if df <= 0:
        raise ValueError("df must be positive")
    x = float(x)
    if math.isinf(df):
        return norm_cdf(x)
    if x == 0.0:
        return 0.5
    tail = 0.5 * betainc(0.5 * df, 0.5, df / (df + x * x))
    return 1.0 - tail if x > 0 else tail


def t_sf(x: float, df: float) -> float:
    return t_cdf(-float(x), df)


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T_df| >= |t|)."""
    if math.isinf(df):
        return math.erfc(abs(t) / math.sqrt(2.0))
    if t == 0:
        return 1.0
    return min(1.0, betainc(0.5 * df, 0.5, df / (df + t * t)))


def f_cdf(x: float, df1: float, df2: float) -> float:
    if df1 <= 0 or df2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0:
        return 0.0
    return betainc(0.5 * df1, 0.5 * df2, df1 * x / (df1 * x + df2))


def f_sf(x: float, df1: float, df2: float) -> float:
    if df1 <= 0 or df2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0:
        return 1.0
    return betainc(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * x))


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# studentized range


@lru_cache(maxsize=None)
def _gauss_legendre(lo: float, hi: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


_ORDER = 10
_S_PANELS = 40
_Z_NODES, _Z_WEIGHTS = _gauss_legendre(-9.0, 9.0, 48, _ORDER)
_Z_PDF = np.exp(-0.5 * _Z_NODES ** 2) / math.sqrt(2.0 * math.pi)
_Z_CDF = ndtr(_Z_NODES)


def normal_range_cdf(w, k: int) -> np.ndarray:
    """P(range of k iid standard normals <= w), vectorized over ``w``."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    out = np.zeros_like(w)
    pos = w > 0
    if np.any(pos):
        diff = ndtr(_Z_NODES[None, :] + w[pos, None]) - _Z_CDF[None, :]
        vals = k * (diff ** (k - 1) * _Z_PDF[None, :]) @ _Z_WEIGHTS
        out[pos] = np.clip(vals, 0.0, 1.0)
    return out


def _chi_scale_nodes(df: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights integrating g(s) against the density of s = sqrt(chi2_df / df)."""
    lo_q = chdtri(df, 1.0 - 1e-15)   # lower tail quantile of chi2
    hi_q = chdtri(df, 1e-15)         # upper tail quantile of chi2
    log_norm = math.log(2.0) + 0.5 * df * math.log(0.5 * df) - math.lgamma(0.5 * df)
    if df < 2.0:
        # s = v**4 removes the s**(df-1) singularity at zero
        v, wv = _gauss_legendre(0.0, math.sqrt(hi_q / df) ** 0.25, _S_PANELS, _ORDER)
        s = v ** 4
        dens = 4.0 * np.exp(log_norm + (4.0 * df - 1.0) * np.log(v) - 0.5 * df * s ** 2)
        return s, wv * dens
    s_lo, s_hi = math.sqrt(lo_q / df), math.sqrt(hi_q / df)
    s, ws = _gauss_legendre(s_lo, s_hi, _S_PANELS, _ORDER)
    dens = np.exp(log_norm + (df - 1.0) * np.log(s) - 0.5 * df * s ** 2)
    return s, ws * dens


@lru_cache(maxsize=512)
def _chi_scale_cached(df: float):
    return _chi_scale_nodes(df)


def studentized_range_cdf(q: float, k: int, df: float) -> float:
    """P(Q <= q) for the studentized range of ``k`` means with ``df`` error df."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if not df > 0:
        raise ValueError("df must be positive")
    q = float(q)
    if q <= 0:
        return 0.0
    if math.isinf(df) or df > 1e7:
        return float(normal_range_cdf(q, k)[0])
    s, w = _chi_scale_cached(float(df))
    val = float(normal_range_cdf(q * s, k) @ w)
    return min(1.0, max(0.0, val))


def studentized_range_sf(q: float, k: int, df: float) -> float:
    return max(0.0, 1.0 - studentized_range_cdf(q, k, df))


def studentized_range_ppf(p: float, k: int, df: float) -> float:
    """Quantile by bisection on the monotone CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    lo, hi = 0.0, 1.0
    while studentized_range_cdf(hi, k, df) < p:
        lo, hi = hi, hi * 2.0
        if hi > 1e6:
            raise ArithmeticError("studentized range quantile did not bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if studentized_range_cdf(mid, k, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)
