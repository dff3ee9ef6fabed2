"""Rank-based Gaussianisation and the two marginal screens.

``correlation_screen`` flags predictors whose Pearson correlation with some
response is significant; ``group_screen`` flags groups whose columns jointly
explain some response in an overall regression F-test. Both are run on
nonparanormal-transformed data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr
from scipy.special import ndtri
from scipy.stats import f as f_dist
from scipy.stats import rankdata
from scipy.stats import t as t_dist

from .groups import GroupStructure

R_CLIP = 1.0 - 1e-12


def nonparanormal(x) -> np.ndarray:
    """``Phi^{-1}(rank / (n + 1))`` with average ranks for ties; NaN entries pass through."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("nonparanormal expects a vector")
    obs = ~np.isnan(x)
    xo = x[obs]
    if xo.size < 3:
        raise ValueError("need at least 3 observed values")
    if np.all(xo == xo[0]):
        raise ValueError("cannot transform a constant vector")
    out = np.full(x.shape, np.nan)
    out[obs] = ndtri(rankdata(xo) / (xo.size + 1))
    return out


def nonparanormal_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return np.column_stack([nonparanormal(A[:, j]) for j in range(A.shape[1])])


@dataclass
class CorrelationScreen:
    r: np.ndarray          # (p, v) correlations
    t: np.ndarray          # (p, v) t statistics
    pvalue: np.ndarray     # (p, v) two-sided p-values
    flags: np.ndarray      # (p, v) p <= cutoff
    selected: np.ndarray   # 0-based predictors flagged by any response


def corr_test(x, y):
    """Pearson r, its t statistic with n - 2 df and the two-sided p-value.

    |r| is clipped below 1 so the p-value stays strictly positive.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = x.size
    xc, yc = x - x.mean(), y - y.mean()
    r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
    r = float(np.clip(r, -R_CLIP, R_CLIP))
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, t, float(2.0 * t_dist.sf(abs(t), n - 2))


def correlation_screen(X, Y, cutoff: float = 0.01, transform: bool = True) -> CorrelationScreen:
    """Flag predictor-response pairs with correlation-test p-value at most ``cutoff``."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y disagree on n")
    if X.shape[0] < 4:
        raise ValueError("correlation screening needs at least 4 rows")
    if transform:
        X, Y = nonparanormal_matrix(X), nonparanormal_matrix(Y)
    p, v = X.shape[1], Y.shape[1]
    r = np.zeros((p, v))
    t = np.zeros((p, v))
    pv = np.ones((p, v))
    for j in range(v):
        rows = ~np.isnan(Y[:, j])
        if rows.sum() < 4:
            raise ValueError(f"response {j + 1} has fewer than 4 observed rows")
        for k in range(p):
            r[k, j], t[k, j], pv[k, j] = corr_test(X[rows, k], Y[rows, j])
    flags = pv <= cutoff
    return CorrelationScreen(r, t, pv, flags, np.flatnonzero(flags.any(axis=1)))


def ols_ftest(Xg, y):
    """Overall F-test of ``y`` on the columns of ``Xg`` plus an intercept.

    Collinear columns are dropped (pivoted QR) with a warning. Returns
    ``(F, df1, df2, pvalue)``.
    """
    Xg = np.atleast_2d(np.asarray(Xg, float))
    y = np.asarray(y, float)
    n = y.size
    Xc = Xg - Xg.mean(axis=0)
    yc = y - y.mean()
    _, R, piv = qr(Xc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
    tol = max(Xc.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < Xg.shape[1]:
        warnings.warn(f"group design is rank deficient; dropped {Xg.shape[1] - rank} collinear column(s)",
                      RuntimeWarning, stacklevel=2)
    if rank == 0:
        return 0.0, 0, n - 1, 1.0
    keep = np.sort(piv[:rank])
    coef, *_ = np.linalg.lstsq(Xc[:, keep], yc, rcond=None)
    fitted = Xc[:, keep] @ coef
    ssr = float(fitted @ fitted)
    sse = float((yc - fitted) @ (yc - fitted))
    df1, df2 = rank, n - rank - 1
    if df2 < 1:
        raise ValueError("group F-test needs n > group size + 1")
    if sse <= 0:
        return np.inf, df1, df2, 0.0
    F = (ssr / df1) / (sse / df2)
    return F, df1, df2, float(f_dist.sf(F, df1, df2))


@dataclass
class GroupScreen:
    F: np.ndarray          # (M, v)
    pvalue: np.ndarray     # (M, v)
    flags: np.ndarray      # (M, v)
    selected: np.ndarray   # 0-based groups flagged by any response


def group_screen(X, Y, gs: GroupStructure, level: float = 0.05, transform: bool = True) -> GroupScreen:
    """Flag groups whose regression F-test p-value is at most ``level`` for some response."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[1] != gs.p:
        raise ValueError(f"X has {X.shape[1]} columns, groups cover {gs.p}")
    if X.shape[0] <= int(gs.sizes.max()) + 1:
        raise ValueError("group screening needs n > largest group size + 1")
    if transform:
        X, Y = nonparanormal_matrix(X), nonparanormal_matrix(Y)
    M, v = gs.M, Y.shape[1]
    F = np.zeros((M, v))
    pv = np.ones((M, v))
    for j in range(v):
        rows = ~np.isnan(Y[:, j])
        for g in range(M):
            F[g, j], _, _, pv[g, j] = ols_ftest(X[np.ix_(rows, gs.members(g))], Y[rows, j])
    flags = pv <= level
    return GroupScreen(F, pv, flags, np.flatnonzero(flags.any(axis=1)))
