"""Choice of the hidden-unit count from sparse Bayesian kernel regressions.

Each response is regressed on Gaussian kernel columns centred at the
training rows with a relevance vector machine fitted by the fast
marginal-likelihood algorithm (sequential add / delete / re-estimate of
single basis functions). The number of retained columns is that response's
unit count and ``K`` is the maximum over responses.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .screening import correlation_screen, nonparanormal_matrix

log = logging.getLogger(__name__)


@dataclass
class RvmFit:
    relevant: np.ndarray          # indices (into the unique training rows) of retained bases
    width: float
    weights: np.ndarray
    alpha: np.ndarray             # precisions of the retained bases
    noise_precision: float
    trace: list = field(default_factory=list)   # log marginal likelihood after each action
    converged: bool = True

    @property
    def count(self) -> int:
        return int(self.relevant.size)


def kernel_width(X) -> float:
    """Median pairwise Euclidean distance between distinct rows."""
    d = pdist(np.unique(np.atleast_2d(X), axis=0))
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def gaussian_kernel(A, B, width) -> np.ndarray:
    sq = np.sum(A ** 2, 1)[:, None] + np.sum(B ** 2, 1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(sq, 0.0) / width ** 2)


def _log_ml(Phi, t, alpha, beta):
    """Log marginal likelihood of the retained bases (up to -n/2 log 2 pi)."""
    n = t.size
    C = np.eye(n) / beta + (Phi / alpha) @ Phi.T
    L = np.linalg.cholesky(C)
    a = np.linalg.solve(L, t)
    return float(-np.sum(np.log(np.diag(L))) - 0.5 * a @ a)


def rvm_fit(X, y, width: float | None = None, max_sweeps: int = 1000, tol: float = 1e-6) -> RvmFit:
    """Fast marginal-likelihood relevance vector regression with a Gaussian kernel.

    ``y`` is standardised internally. Identical rows of ``X`` are collapsed
    into one observation carrying their mean response, so duplicating rows
    changes nothing. Every accepted action increases the marginal likelihood; the
    loop stops when the best available change is below ``tol`` relative to
    the current value, or after ``max_sweeps`` actions.
    """
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float)
    if X.shape[0] != y.size:
        raise ValueError("X and y disagree on n")
    if y.size < 5:
        raise ValueError("rvm_fit needs at least 5 rows")
    if X.shape[1] < 1:
        raise ValueError("rvm_fit needs at least one predictor")
    if width is None:
        width = kernel_width(X)
    centers, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if centers.shape[0] < X.shape[0]:
        y = np.bincount(inverse, weights=y) / np.bincount(inverse)
        X = centers
    if y.size < 5:
        raise ValueError("rvm_fit needs at least 5 distinct rows")
    sd = y.std()
    if not sd > 0:
        return RvmFit(np.zeros(0, int), width, np.zeros(0), np.zeros(0), np.inf, [])
    t = (y - y.mean()) / sd
    n = t.size
    Phi_all = gaussian_kernel(X, centers, width)
    norms = np.sqrt(np.sum(Phi_all ** 2, axis=0))
    Phi_all = Phi_all / norms
    beta = 1.0 / (0.1 * t.var())

    # start from the single basis best aligned with the target
    proj = Phi_all.T @ t
    first = int(np.argmax(np.abs(proj)))
    active = [first]
    alpha = {first: 1.0 / max(proj[first] ** 2 - 1.0 / beta, 1e-6)}
    trace = [_log_ml(Phi_all[:, active], t, np.array([alpha[first]]), beta)]
    converged = False
    for _ in range(max_sweeps):
        Phi = Phi_all[:, active]
        A = np.array([alpha[k] for k in active])
        Sigma = np.linalg.inv(np.diag(A) + beta * Phi.T @ Phi)
        # sparsity and quality factors for every candidate basis
        B_Phi = beta * Phi_all
        S = beta * np.sum(Phi_all ** 2, axis=0) - np.sum((B_Phi.T @ Phi) @ Sigma * (B_Phi.T @ Phi), axis=1)
        Q = beta * Phi_all.T @ t - (B_Phi.T @ Phi) @ Sigma @ (beta * Phi.T @ t)
        s, q = S.copy(), Q.copy()
        for k in active:
            denom = alpha[k] - S[k]
            s[k] = alpha[k] * S[k] / denom
            q[k] = alpha[k] * Q[k] / denom
        theta = q ** 2 - s
        gains = np.full(centers.shape[0], -np.inf)
        new_alpha = {}
        for k in range(centers.shape[0]):
            if theta[k] > 0:
                a_new = s[k] ** 2 / theta[k]
                if k in alpha:
                    delta = 1.0 / a_new - 1.0 / alpha[k]
                    gains[k] = (Q[k] ** 2 / (S[k] + 1.0 / delta) - np.log1p(S[k] * delta)) / 2.0
                else:
                    gains[k] = ((Q[k] ** 2 - S[k]) / S[k] + np.log(S[k] / Q[k] ** 2)) / 2.0
                new_alpha[k] = a_new
            elif k in alpha and len(active) > 1:
                gains[k] = (Q[k] ** 2 / (S[k] - alpha[k]) - np.log1p(-S[k] / alpha[k])) / 2.0
        k = int(np.argmax(gains))
        if not np.isfinite(gains[k]) or gains[k] <= tol * max(abs(trace[-1]), 1.0):
            converged = True
        else:
            if k in new_alpha:
                if k not in alpha:
                    active.append(k)
                alpha[k] = new_alpha[k]
            else:
                active.remove(k)
                del alpha[k]
        # noise re-estimate, kept only if it does not lower the marginal likelihood
        Phi = Phi_all[:, active]
        A = np.array([alpha[j] for j in active])
        Sigma = np.linalg.inv(np.diag(A) + beta * Phi.T @ Phi)
        mu = beta * Sigma @ Phi.T @ t
        resid = t - Phi @ mu
        dof = n - len(active) + float(np.sum(A * np.diag(Sigma)))
        beta_new = max(dof, 1e-6) / max(resid @ resid, 1e-12)
        ml = _log_ml(Phi, t, A, beta)
        ml_new = _log_ml(Phi, t, A, beta_new)
        if ml_new > ml:
            beta, ml = beta_new, ml_new
        if ml < trace[-1] - 1e-8 * max(abs(trace[-1]), 1.0):
            raise RuntimeError("marginal likelihood decreased during relevance vector fitting")
        trace.append(ml)
        if converged:
            break
    if not converged:
        warnings.warn("relevance vector fit did not converge; returning the last basis set",
                      RuntimeWarning, stacklevel=2)
    Phi = Phi_all[:, active]
    A = np.array([alpha[j] for j in active])
    Sigma = np.linalg.inv(np.diag(A) + beta * Phi.T @ Phi)
    w = beta * Sigma @ Phi.T @ t
    order = np.argsort(active)
    return RvmFit(np.asarray(active)[order], width, (w / norms[active] * sd)[order], A[order],
                  beta / sd ** 2, trace, converged)


def select_k(X, Y, cutoff: float = 0.01) -> int:
    """Largest relevance vector count over responses, on screened, Gaussianised predictors.

    Returns 1 when nothing passes the screen or every response is pure noise.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    screen = correlation_screen(X, Y, cutoff)
    if screen.selected.size == 0:
        warnings.warn("no predictor passed screening; using K = 1", RuntimeWarning, stacklevel=2)
        return 1
    Xs = nonparanormal_matrix(X)[:, screen.selected]
    Ys = nonparanormal_matrix(Y)
    counts = []
    for j in range(Y.shape[1]):
        rows = ~np.isnan(Ys[:, j])
        fit = rvm_fit(Xs[rows], Ys[rows, j])
        counts.append(fit.count)
        log.info("response %d: %d relevance vectors", j + 1, fit.count)
    return max(1, max(counts))
