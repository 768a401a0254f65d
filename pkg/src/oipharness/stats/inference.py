"""Tests and estimates on a fitted cell-means mixed model."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import linalg

from .distributions import f_sf, studentized_range_sf, t_two_sided_p
from .lmm import LmmFit, StatsError

ADJUSTMENTS = ("none", "tukey", "bonferroni")


class SingularHypothesis(StatsError):
    pass


class InestimableCombination(StatsError):
    pass


class OverlappingGroups(StatsError):
    pass


class DegenerateInput(StatsError):
    pass


@dataclass
class FTestResult:
    term: str
    F: float
    df_num: int
    df_den: float
    p_value: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EmmResult:
    levels: dict
    estimate: float
    se: float
    df: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ContrastResult:
    description: str
    estimate: float
    se: float
    t: float
    df: float
    p_unadjusted: float
    p_adjusted: float
    adjustment: str = "none"
    family_size: int = 1
    within: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CorrelationResult:
    r: float
    n: int
    t: float
    df: int
    p: float
    ci95: tuple[float, float]

    def to_dict(self) -> dict:
        return {**asdict(self), "ci95": list(self.ci95)}


# ---------------------------------------------------------------------------
# hypothesis and estimate rows


def _difference_contrasts(n: int) -> np.ndarray:
    return np.hstack([np.eye(n - 1), -np.ones((n - 1, 1))])


def effect_matrix(fit: LmmFit, term: Sequence[str]) -> np.ndarray:
    """Type-III style hypothesis matrix for a main effect or interaction.

    Factors in ``term`` get difference contrasts, every other factor is
    averaged with equal weights; the Kronecker order matches the cell order.
    """
    fr = fit.frame
    term = tuple(term)
    unknown = set(term) - set(fr.factors)
    if unknown:
        raise SingularHypothesis(f"term names unknown factors {sorted(unknown)}")
    L = np.ones((1, 1))
    for f in fr.factors:
        n = len(fr.levels[f])
        if f in term:
            if n < 2:
                raise SingularHypothesis(f"factor {f!r} has a single level")
            block = _difference_contrasts(n)
        else:
            block = np.full((1, n), 1.0 / n)
        L = np.kron(L, block)
    return L


def _level_weights(fit: LmmFit, at: Mapping[str, object]) -> np.ndarray:
    fr = fit.frame
    row = np.ones(1)
    for f in fr.factors:
        lv = fr.levels[f]
        if f in at:
            if at[f] not in lv:
                raise InestimableCombination(f"level {at[f]!r} not in factor {f!r} ({list(lv)})")
            v = np.zeros(len(lv))
            v[lv.index(at[f])] = 1.0
        else:
            v = np.full(len(lv), 1.0 / len(lv))
        row = np.kron(row, v)
    unknown = set(at) - set(fr.factors)
    if unknown:
        raise InestimableCombination(f"unknown factors {sorted(unknown)}")
    return row


# ---------------------------------------------------------------------------
# Satterthwaite


def _satterthwaite_single(fit: LmmFit, l: np.ndarray, cov_vc: np.ndarray) -> float:
    s2, t2 = fit.sigma2, fit.tau2
    h = np.array([1e-5 * s2, 1e-5 * max(t2, 1e-2 * s2)])
    grad = np.empty(2)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h[j]
        up = fit.cov_beta_at(s2 + e[0], t2 + e[1])
        dn = fit.cov_beta_at(s2 - e[0], t2 - e[1])
        grad[j] = float(l @ (up - dn) @ l) / (2 * h[j])
    var = float(l @ fit.cov_beta @ l)
    denom = float(grad @ cov_vc @ grad)
    if denom <= 0:
        return float(fit.df_resid)
    return 2.0 * var ** 2 / denom


def satterthwaite_df(fit: LmmFit, L: np.ndarray) -> float:
    """Moment-matched denominator df (Fai-Cornelius for multi-row L)."""
    L = np.atleast_2d(L)
    cov_vc = fit.varcomp_cov()
    if L.shape[0] == 1:
        return _satterthwaite_single(fit, L[0], cov_vc)
    C = L @ fit.cov_beta @ L.T
    evals, evecs = linalg.eigh(0.5 * (C + C.T))
    nus = np.array([_satterthwaite_single(fit, evecs[:, m] @ L, cov_vc) for m in range(L.shape[0])])
    q = L.shape[0]
    big = nus > 2
    E = float(np.sum(nus[big] / (nus[big] - 2.0))) + float(np.sum(~big))
    if E <= q:
        return float(max(np.min(nus), 1.0))
    return 2.0 * E / (E - q)


def _df(fit: LmmFit, L: np.ndarray, df_method: str) -> float:
    if df_method == "residual":
        return float(fit.df_resid)
    if df_method == "satterthwaite":
        return satterthwaite_df(fit, L)
    raise ValueError(f"unknown df_method {df_method!r}")


# ---------------------------------------------------------------------------
# public operations


def wald_f(fit: LmmFit, L, df_method: str = "residual", term: str = "") -> FTestResult:
    """Wald F for ``L beta = 0``: (L b)' (L V L')^-1 (L b) / rank(L)."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != len(fit.beta):
        raise SingularHypothesis(f"L has {L.shape[1]} columns, model has {len(fit.beta)} fixed effects")
    q = np.linalg.matrix_rank(L)
    if q < L.shape[0]:
        raise SingularHypothesis(f"hypothesis matrix has rank {q} < {L.shape[0]} rows")
    Lb = L @ fit.beta
    C = L @ fit.cov_beta @ L.T
    try:
        chol = linalg.cho_factor(C, lower=True)
    except linalg.LinAlgError:
        raise SingularHypothesis("L V L' is not positive definite") from None
    F = float(Lb @ linalg.cho_solve(chol, Lb)) / q
    df_den = _df(fit, L, df_method)
    F = max(float(F), 0.0)
    return FTestResult(term, F, int(q), float(df_den), f_sf(F, q, df_den))


def term_test(fit: LmmFit, term: Sequence[str], df_method: str = "residual") -> FTestResult:
    return wald_f(fit, effect_matrix(fit, term), df_method, term=":".join(term))


def anova_table(fit: LmmFit, df_method: str = "residual", max_order: Optional[int] = None) -> list[FTestResult]:
    """Every main effect and interaction among factors with at least two levels."""
    fr = fit.frame
    active = [f for f in fr.factors if len(fr.levels[f]) > 1]
    max_order = len(active) if max_order is None else max_order
    out = []
    for order in range(1, max_order + 1):
        for term in itertools.combinations(active, order):
            out.append(term_test(fit, term, df_method))
    return out


def emmeans(fit: LmmFit, specs: Sequence[str], at: Optional[Mapping[str, object]] = None,
            df_method: str = "residual") -> list[EmmResult]:
    """Equal-weight marginal means over the grid of ``specs`` (optionally fixing ``at``)."""
    fr = fit.frame
    specs = list(specs)
    at = dict(at or {})
    for f in specs:
        if f not in fr.factors:
            raise InestimableCombination(f"unknown factor {f!r}")
    out = []
    for combo in itertools.product(*(fr.levels[f] for f in specs)):
        cond = {**at, **dict(zip(specs, combo))}
        l = _level_weights(fit, cond)
        out.append(EmmResult(cond, float(l @ fit.beta), math.sqrt(float(l @ fit.cov_beta @ l)), _df(fit, l, df_method)))
    return out


def _adjust(p: float, t: float, df: float, adjust: str, k: int, m: int) -> float:
    if adjust == "none":
        return p
    if adjust == "bonferroni":
        return min(1.0, p * m)
    if adjust == "tukey":
        if k < 2:
            return p
        return min(1.0, max(p, studentized_range_sf(abs(t) * math.sqrt(2.0), k, df)))
    raise ValueError(f"unknown adjustment {adjust!r}; expected one of {ADJUSTMENTS}")


def _contrast(fit, l, description, adjust, k, m, df_method, within) -> ContrastResult:
    est = float(l @ fit.beta)
    se = math.sqrt(float(l @ fit.cov_beta @ l))
    df = _df(fit, l, df_method)
    if se == 0:
        t = 0.0 if est == 0 else math.copysign(math.inf, est)
    else:
        t = est / se
    p = t_two_sided_p(t, df) if math.isfinite(t) else 0.0
    return ContrastResult(description, est, se, t, df, p, _adjust(p, t, df, adjust, k, m), adjust, k, dict(within))


def pairwise_contrasts(fit: LmmFit, factor: str, adjust: str = "tukey", within: Optional[Mapping] = None,
                       df_method: str = "residual") -> list[ContrastResult]:
    """All k(k-1)/2 differences between levels of ``factor``.

    ``within`` fixes other factors at given levels; factors not mentioned are
    averaged. The Tukey family size is the number of levels of ``factor``.
    """
    fr = fit.frame
    if factor not in fr.factors:
        raise InestimableCombination(f"unknown factor {factor!r}")
    within = dict(within or {})
    lv = fr.levels[factor]
    k = len(lv)
    if k < 2:
        raise InestimableCombination(f"factor {factor!r} needs at least two levels")
    rows = {lev: _level_weights(fit, {**within, factor: lev}) for lev in lv}
    m = k * (k - 1) // 2
    return [
        _contrast(fit, rows[a] - rows[b], f"{a} - {b}", adjust, k, m, df_method, within)
        for a, b in itertools.combinations(lv, 2)
    ]


def grouped_contrast(fit: LmmFit, factor: str, group_a: Sequence, group_b: Sequence,
                     within: Optional[Mapping] = None, df_method: str = "residual") -> ContrastResult:
    """Mean of the ``group_a`` level EMMs minus mean of the ``group_b`` ones; unadjusted."""
    a, b = list(group_a), list(group_b)
    if not a or not b:
        raise OverlappingGroups("both groups must be nonempty")
    if set(a) & set(b):
        raise OverlappingGroups(f"groups share levels {sorted(set(a) & set(b), key=str)}")
    within = dict(within or {})
    la = np.mean([_level_weights(fit, {**within, factor: x}) for x in a], axis=0)
    lb = np.mean([_level_weights(fit, {**within, factor: x}) for x in b], axis=0)
    desc = f"{{{','.join(map(str, a))}}} - {{{','.join(map(str, b))}}}"
    return _contrast(fit, la - lb, desc, "none", 1, 1, df_method, within)


def correlation_from_r(r: float, n: int, z_crit: float = 1.96) -> CorrelationResult:
    """t statistic, two-sided p and Fisher-z 95% interval for a correlation."""
    if n < 4:
        raise DegenerateInput("need n >= 4 for the Fisher interval")
    if not -1.0 <= r <= 1.0:
        raise DegenerateInput(f"r outside [-1, 1]: {r}")
    df = n - 2
    if abs(r) >= 1.0:
        return CorrelationResult(r, n, math.copysign(math.inf, r), df, 0.0, (r, r))
    t = r * math.sqrt(df) / math.sqrt(1.0 - r * r)
    z = math.atanh(r)
    half = z_crit / math.sqrt(n - 3)
    return CorrelationResult(r, n, t, df, t_two_sided_p(t, df), (math.tanh(z - half), math.tanh(z + half)))


def pearson(x, y) -> CorrelationResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateInput("x and y must be 1-d and of equal length")
    n = len(x)
    if n < 3:
        raise DegenerateInput("need at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("zero variance input")
    r = max(-1.0, min(1.0, float(dx @ dy) / math.sqrt(sxx * syy)))
    if n == 3:
        df = 1
        if abs(r) >= 1.0:
            return CorrelationResult(r, n, math.copysign(math.inf, r), df, 0.0, (r, r))
        t = r * math.sqrt(df) / math.sqrt(1 - r * r)
        return CorrelationResult(r, n, t, df, t_two_sided_p(t, df), (math.nan, math.nan))
    return correlation_from_r(r, n)
