"""Random-intercept linear mixed model fitted by profiled REML.

Model: ``y = X beta + Z gamma + eps`` with one intercept per group (item),
``gamma ~ N(0, tau2)``, ``eps ~ N(0, sigma2)``. With ``theta = tau2 / sigma2``
the marginal covariance is ``sigma2 * H`` where ``H = I + theta Z Z'``. Each
group block of ``H`` is ``I + theta 11'`` whose inverse is
``I - c 11'`` with ``c = theta / (1 + theta n_g)``, so every quantity the
criterion needs reduces to per-group column sums of ``X`` and ``y``.

The fixed-effect design is cell means over the full factor interaction: one
column per combination of factor levels, so ``beta`` holds the cell means.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from ..instrument import LETTERS

THETA_MAX = 1e4
GOLDEN_RTOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class StatsError(Exception):
    pass


class EmptyCell(StatsError):
    pass


class RankDeficientDesign(StatsError):
    pass


class NonConvergence(StatsError):
    pass


@dataclass
class ModelFrame:
    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray            # integer code per row
    group_labels: tuple
    factors: tuple[str, ...]
    levels: dict[str, tuple]
    cells: np.ndarray             # cell (column) index per row
    analysis_mode: str = "item_aggregated"
    data: Optional[pd.DataFrame] = field(default=None, repr=False)

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(self.levels[f]) for f in self.factors)

    def cell_labels(self) -> list[tuple]:
        return list(itertools.product(*(self.levels[f] for f in self.factors)))


def _default_levels(name: str, values: pd.Series) -> tuple:
    uniq = list(pd.unique(values))
    if name == "category" and all(isinstance(v, str) and v in LETTERS for v in uniq):
        return tuple(c for c in LETTERS if c in uniq)
    try:
        return tuple(sorted(uniq))
    except TypeError:
        return tuple(uniq)


def build_frame(data: pd.DataFrame, factors: Sequence[str], analysis_mode: str = "item_aggregated", *,
                response: str = "value", group: str = "item_id",
                levels: Optional[Mapping[str, Sequence]] = None) -> ModelFrame:
    """Assemble response, cell-means design and grouping from long-format data.

    ``data`` has one row per observation (replication) with the factor
    columns, the group column and the response. ``item_aggregated`` averages
    replications within each (factor combination, group); ``replication_level``
    keeps every row. Rows with a missing response are dropped first.
    """
    if analysis_mode not in ("item_aggregated", "replication_level"):
        raise ValueError(f"unknown analysis_mode {analysis_mode!r}")
    factors = tuple(factors)
    cols = list(factors) + [group, response]
    missing = [c for c in cols if c not in data.columns]
    if missing:
        raise KeyError(f"data lacks columns {missing}")
    df = data.loc[data[response].notna(), cols].copy()
    levels = dict(levels or {})
    lv = {}
    for f in factors:
        wanted = tuple(levels[f]) if f in levels else _default_levels(f, df[f])
        df = df[df[f].isin(wanted)]
        lv[f] = wanted
    if analysis_mode == "item_aggregated":
        df = df.groupby(list(factors) + [group], sort=False, as_index=False)[response].mean()

    for f in factors:
        df[f] = pd.Categorical(df[f], categories=lv[f], ordered=True)
    df = df.sort_values(list(factors) + [group], kind="mergesort").reset_index(drop=True)

    shape = tuple(len(lv[f]) for f in factors)
    codes = [df[f].cat.codes.to_numpy() for f in factors]
    cells = np.ravel_multi_index(codes, shape) if factors else np.zeros(len(df), dtype=int)
    n_cells = int(np.prod(shape)) if factors else 1
    counts = np.bincount(cells, minlength=n_cells)
    if np.any(counts == 0):
        labels = list(itertools.product(*(lv[f] for f in factors)))
        empty = [dict(zip(factors, labels[i])) for i in np.flatnonzero(counts == 0)]
        raise EmptyCell(f"{len(empty)} empty design cell(s), e.g. {empty[:3]}")

    X = np.zeros((len(df), n_cells))
    X[np.arange(len(df)), cells] = 1.0
    _check_rank(X)
    group_labels, groups = _encode(df[group].to_numpy())
    for f in factors:
        df[f] = df[f].astype(object)
    return ModelFrame(df[response].to_numpy(dtype=float), X, groups, group_labels, factors, lv, cells,
                      analysis_mode, df)


def _encode(values) -> tuple[tuple, np.ndarray]:
    labels = sorted(set(values.tolist()))
    index = {v: i for i, v in enumerate(labels)}
    return tuple(labels), np.array([index[v] for v in values], dtype=int)


def _check_rank(X: np.ndarray) -> int:
    if X.shape[0] < X.shape[1]:
        raise RankDeficientDesign(f"{X.shape[0]} rows for {X.shape[1]} fixed effects")
    r = linalg.qr(X, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        raise RankDeficientDesign(f"design rank {rank} < {X.shape[1]} columns")
    return rank


class _Profile:
    """Sufficient statistics for evaluating the profiled REML criterion fast."""

    def __init__(self, X: np.ndarray, y: np.ndarray, groups: np.ndarray, n_groups: int):
        self.n, self.p = X.shape
        # centre y when the constant lies in span(X) (always true for cell means); this keeps
        # yHy - beta'b from cancelling when the mean is large relative to the spread
        w = np.linalg.lstsq(X, np.ones(self.n), rcond=None)[0]
        if np.allclose(X @ w, 1.0, rtol=0, atol=1e-12):
            self.shift, self.w = float(np.mean(y)), w
            y = y - self.shift
        else:
            self.shift, self.w = 0.0, np.zeros(self.p)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        self.S = np.zeros((n_groups, self.p))
        np.add.at(self.S, groups, X)
        self.t = np.bincount(groups, weights=y, minlength=n_groups)
        self.ng = np.bincount(groups, minlength=n_groups).astype(float)

    def parts(self, theta: float):
        c = theta / (1.0 + theta * self.ng)
        A = self.XtX - (self.S.T * c) @ self.S
        b = self.Xty - self.S.T @ (c * self.t)
        yHy = self.yty - float(np.sum(c * self.t ** 2))
        chol = linalg.cho_factor(A, lower=True, check_finite=False)
        beta = linalg.cho_solve(chol, b, check_finite=False)
        q = yHy - float(beta @ b)
        beta = beta + self.shift * self.w
        logdet_A = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
        logdet_H = float(np.sum(np.log1p(theta * self.ng)))
        return A, chol, beta, q, logdet_A, logdet_H

    def criterion(self, theta: float) -> float:
        """-2 x restricted log-likelihood with sigma2 profiled out."""
        _, _, _, q, logdet_A, logdet_H = self.parts(theta)
        dof = self.n - self.p
        if q <= 0:
            return -math.inf
        return dof * (1.0 + math.log(2.0 * math.pi * q / dof)) + logdet_H + logdet_A

    def derivative(self, theta: float) -> float:
        """d criterion / d theta, used to polish the golden-section estimate."""
        c = theta / (1.0 + theta * self.ng)
        dc = 1.0 / (1.0 + theta * self.ng) ** 2
        A, chol, beta, q, _, _ = self.parts(theta)
        beta = beta - self.shift * self.w
        b = self.Xty - self.S.T @ (c * self.t)
        dA = -(self.S.T * dc) @ self.S
        db = -self.S.T @ (dc * self.t)
        dq = -float(np.sum(dc * self.t ** 2)) - 2.0 * float(beta @ db) + float(beta @ dA @ beta)
        Ainv_dA = linalg.cho_solve(chol, dA, check_finite=False)
        dof = self.n - self.p
        return dof * dq / q + float(np.sum(self.ng / (1.0 + theta * self.ng))) + float(np.trace(Ainv_dA))

    def unprofiled(self, sigma2: float, tau2: float) -> float:
        """-2 x restricted log-likelihood at explicit variance components."""
        theta = tau2 / sigma2
        _, _, _, q, logdet_A, logdet_H = self.parts(theta)
        dof = self.n - self.p
        return dof * math.log(2.0 * math.pi * sigma2) + logdet_H + logdet_A + q / sigma2


@dataclass
class LmmFit:
    beta: np.ndarray
    cov_beta: np.ndarray
    se_beta: np.ndarray
    sigma2: float
    tau2: float
    theta: float
    reml_criterion: float
    n_obs: int
    rank_X: int
    n_groups: int
    frame: ModelFrame = field(repr=False)
    search: dict = field(default_factory=dict, repr=False)

    @property
    def df_resid(self) -> int:
        return self.n_obs - self.rank_X

    def cell_means(self) -> dict[tuple, float]:
        return dict(zip(self.frame.cell_labels(), self.beta.tolist()))

    def random_effects(self) -> dict:
        """Predicted per-group intercept offsets (read-only; not used by the tests)."""
        fr = self.frame
        resid = fr.y - fr.X @ self.beta
        sums = np.bincount(fr.groups, weights=resid, minlength=fr.n_groups)
        ng = np.bincount(fr.groups, minlength=fr.n_groups)
        shrink = self.theta / (1.0 + self.theta * ng)
        return dict(zip(fr.group_labels, (shrink * sums).tolist()))

    def cov_beta_at(self, sigma2: float, tau2: float) -> np.ndarray:
        prof = _profile(self)
        A = prof.parts(tau2 / sigma2)[0]
        return sigma2 * linalg.inv(A)

    def varcomp_cov(self) -> np.ndarray:
        """Asymptotic covariance of (sigma2, tau2) from the REML Hessian."""
        prof = _profile(self)
        x0 = np.array([self.sigma2, self.tau2])
        steps = np.array([1e-4 * self.sigma2, 1e-4 * max(self.tau2, self.sigma2 * 1e-2)])
        f = lambda v: prof.unprofiled(v[0], v[1])  # noqa: E731
        H = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                ei, ej = np.eye(2)[i] * steps[i], np.eye(2)[j] * steps[j]
                H[i, j] = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej) + f(x0 - ei - ej)) / (
                    4 * steps[i] * steps[j])
        return 2.0 * linalg.inv(H)

    def to_dict(self) -> dict:
        return {
            "factors": list(self.frame.factors),
            "levels": {k: list(map(str, v)) for k, v in self.frame.levels.items()},
            "beta": self.beta.tolist(),
            "se_beta": self.se_beta.tolist(),
            "sigma2": self.sigma2,
            "tau2": self.tau2,
            "theta": self.theta,
            "reml_criterion": self.reml_criterion,
            "n_obs": self.n_obs,
            "rank_X": self.rank_X,
            "n_groups": self.n_groups,
            "df_resid": self.df_resid,
            "analysis_mode": self.frame.analysis_mode,
        }


def _profile(fit: LmmFit) -> _Profile:
    prof = fit.search.get("_profile")
    if prof is None:
        fr = fit.frame
        prof = _Profile(fr.X, fr.y, fr.groups, fr.n_groups)
        fit.search["_profile"] = prof
    return prof


def reml_criterion(frame: ModelFrame, theta: float) -> float:
    return _Profile(frame.X, frame.y, frame.groups, frame.n_groups).criterion(theta)


def _golden(f, a: float, b: float, rtol: float = GOLDEN_RTOL, maxit: int = 500):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while (b - a) > rtol * max(abs(0.5 * (a + b)), 1e-12) and it < maxit:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        it += 1
    x = 0.5 * (a + b)
    return x, f(x), it


def _polish(prof: _Profile, t: float, ft: float, lo: float, hi: float) -> tuple[float, float]:
    """Refine a golden-section minimum by a root of the analytic derivative."""
    g_lo, g_hi = prof.derivative(lo), prof.derivative(hi)
    if not (g_lo < 0 < g_hi):
        return t, ft
    try:
        root = optimize.brentq(prof.derivative, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    except (ValueError, RuntimeError):
        return t, ft
    f_root = prof.criterion(root)
    return (root, f_root) if f_root <= ft + 1e-12 * abs(ft) else (t, ft)


def fit_lmm(frame: ModelFrame, theta_max: float = THETA_MAX, theta: Optional[float] = None) -> LmmFit:
    """Fit by minimizing the profiled REML criterion over ``theta`` in [0, theta_max].

    A log-spaced scan locates the basin, golden-section search refines it,
    and the boundary ``theta = 0`` (ordinary least squares) is always
    evaluated. Passing ``theta`` skips the search and fits at that value.
    """
    prof = _Profile(frame.X, frame.y, frame.groups, frame.n_groups)
    dof = prof.n - prof.p
    if dof <= 0:
        raise RankDeficientDesign("no residual degrees of freedom")
    f = prof.criterion
    search: dict = {"_profile": prof}
    if theta is None:
        grid = np.concatenate([[0.0], np.logspace(-6, math.log10(theta_max), 61)])
        vals = np.array([f(t) for t in grid])
        if not np.all(np.isfinite(vals)):
            raise NonConvergence(f"non-finite REML criterion on the scan grid: {vals[~np.isfinite(vals)][:3]}")
        i = int(np.argmin(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        t_best, f_best, iters = _golden(f, lo, hi)
        t_best, f_best = _polish(prof, t_best, f_best, lo, hi)
        f0 = vals[0]
        if f0 <= f_best:
            t_best, f_best = 0.0, f0
        if t_best >= theta_max * (1 - 1e-6):
            raise NonConvergence(
                f"REML optimum at the upper bracket theta={theta_max:g} "
                f"(criterion {f_best:.10g}, at 0: {f0:.10g}); bracket [0, {theta_max:g}]")
        search.update(bracket=(float(lo), float(hi)), iterations=iters, criterion_at_zero=float(f0))
        theta = t_best
    theta = float(theta)
    A, chol, beta, q, logdet_A, logdet_H = prof.parts(theta)
    sigma2 = q / dof
    if not sigma2 > 0:
        raise NonConvergence(f"nonpositive residual variance {sigma2} at theta={theta}")
    cov = sigma2 * linalg.cho_solve(chol, np.eye(prof.p), check_finite=False)
    cov = 0.5 * (cov + cov.T)
    return LmmFit(
        beta=beta,
        cov_beta=cov,
        se_beta=np.sqrt(np.diag(cov)),
        sigma2=float(sigma2),
        tau2=float(theta * sigma2),
        theta=theta,
        reml_criterion=float(prof.criterion(theta)),
        n_obs=prof.n,
        rank_X=prof.p,
        n_groups=frame.n_groups,
        frame=frame,
        search=search,
    )
