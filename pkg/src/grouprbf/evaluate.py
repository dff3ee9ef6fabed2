"""Prediction error, inclusion summaries, ROC/AUC, pooled effects, loading alignment and a ridge baseline."""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .chain import Chain
from .groups import GroupStructure
from .kernel import factor_matrix


def prediction_mse(Yhat, Ytest, mask) -> float:
    """Average over responses of the mean squared error on each response's test entries."""
    Yhat, Ytest, mask = np.asarray(Yhat, float), np.asarray(Ytest, float), np.asarray(mask, bool)
    if not Yhat.shape == Ytest.shape == mask.shape:
        raise ValueError(f"shape mismatch: {Yhat.shape}, {Ytest.shape}, {mask.shape}")
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError(f"responses {(np.flatnonzero(counts == 0) + 1).tolist()} have no test entries")
    sq = np.where(mask, (Yhat - np.where(mask, Ytest, 0.0)) ** 2, 0.0)
    return float(np.mean(sq.sum(axis=0) / counts))


def predict(chain: Chain, X_new) -> np.ndarray:
    """Posterior mean of the RBF means at new rows, on the original response scale.

    The latent factor term has mean zero for unseen subjects and is left out.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if chain.size == 0:
        raise ValueError("chain holds no draws")
    cols = chain.meta.get("columns")
    if cols is not None and X_new.shape[1] == chain.meta.get("p_full", -1):
        X_new = X_new[:, np.asarray(cols) - 1]
    if X_new.shape[1] != chain.groups.p:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, chain expects {chain.groups.p}")
    dr = chain.draws
    p = chain.groups.p
    tril = np.tril_indices(p, -1)
    theta = np.zeros((p, p))
    mean = np.zeros((X_new.shape[0], dr["lam"].shape[1]))
    for s in range(chain.size):
        theta[tril] = dr["theta"][s]
        V = factor_matrix(theta)
        z = (X_new[None, None, :, :] - dr["mu"][s][:, :, None, :]) * dr["d"][s]
        z = z @ V
        phi = np.exp(-np.einsum("lkip,lkip->lki", z, z))
        f = np.einsum("lk,lki->il", dr["lam"][s], phi)
        mean += (f - mean) / (s + 1)
    return mean + chain.y_center[None, :]


def fitted_values(chain: Chain) -> np.ndarray:
    """Posterior mean of ``f(x_i) + Lambda eta_i`` at the training rows, original scale.

    For entries held out of the fit this is the prediction of the missing response.
    """
    if chain.fitted_mean is None:
        raise ValueError("chain has no stored fitted mean")
    return chain.fitted_mean + chain.y_center[None, :]


@dataclass
class InclusionSummary:
    group_prob: np.ndarray       # P(gamma_g = 1)
    predictor_prob: np.ndarray   # P(gamma_g rho_j = 1)
    rho_prob: np.ndarray         # P(rho_j = 1)
    beta_median: np.ndarray

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("group_prob", "predictor_prob", "rho_prob", "beta_median")}


def inclusion_summary(chain: Chain, active_only: bool = False) -> InclusionSummary:
    """Posterior inclusion frequencies and median slab coefficients.

    The median is taken over every stored draw with inactive coordinates
    counted as zero; ``active_only`` restricts it to draws where the
    predictor is switched on (NaN when it never is).
    """
    gs = chain.groups
    gamma = chain.draws["gamma"]
    rho = chain.draws["rho"]
    on = gamma[:, gs.group_of] * rho
    if active_only:
        beta = np.where(on == 1, chain.draws["beta"], np.nan)
        with np.errstate(all="ignore"):
            med = np.array([np.median(c[~np.isnan(c)]) if np.any(~np.isnan(c)) else np.nan
                            for c in beta.T])
    else:
        med = np.median(np.where(on == 1, chain.draws["beta"], 0.0), axis=0)
    return InclusionSummary(gamma.mean(axis=0), on.mean(axis=0), rho.mean(axis=0), med)


def roc_auc(scores, truth):
    """ROC curve swept over the unique scores, and the AUC (Mann-Whitney, ties count one half).

    Returns ``(fpr, tpr, auc)``; the curve starts at (0, 0) and ends at (1, 1).
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth).astype(bool)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth differ in length")
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("truth must contain both classes")
    thresholds = np.unique(scores)[::-1]
    tpr = [0.0] + [float(np.sum(truth & (scores >= t)) / n_pos) for t in thresholds]
    fpr = [0.0] + [float(np.sum(~truth & (scores >= t)) / n_neg) for t in thresholds]
    pos, neg = scores[truth], scores[~truth]
    wins = np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])
    return np.array(fpr), np.array(tpr), float(wins / (n_pos * n_neg))


def pooled_effects(summary: InclusionSummary, gs: GroupStructure):
    """Per-attribute pooled effect over groups, and attributes ranked by it (descending).

    Attribute ``l`` is the ``l``-th member of every group, so all groups must
    have equal size.
    """
    sizes = gs.sizes
    if np.any(sizes != sizes[0]):
        raise ValueError("attribute pooling needs groups of equal size")
    m = int(sizes[0])
    E = np.zeros(m)
    for g in range(gs.M):
        idx = gs.members(g)
        E += summary.group_prob[g] * summary.rho_prob[idx] * np.abs(summary.beta_median[idx])
    order = np.argsort(-E, kind="stable")
    return E, order


def _pad(A, r):
    return np.hstack([A, np.zeros((A.shape[0], r - A.shape[1]))])


@functools.cache
def _permutations(r: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(r))), dtype=np.int64).reshape(-1, r)


def align_loading(L_hat, L_ref, greedy: bool = False):
    """Column permutation and signs of ``L_hat`` closest to ``L_ref`` in Frobenius norm.

    Both matrices are padded with zero columns to a common width ``r``. The
    search is exhaustive for ``r <= 8``; wider matrices need ``greedy=True``.
    Returns ``(perm, signs, error, aligned)`` with ``aligned[:, k] =
    signs[k] * L_hat[:, perm[k]]``.
    """
    L_hat, L_ref = np.atleast_2d(L_hat).astype(float), np.atleast_2d(L_ref).astype(float)
    if L_hat.shape[0] != L_ref.shape[0]:
        raise ValueError("loading matrices have different row counts")
    r = max(L_hat.shape[1], L_ref.shape[1])
    A, B = _pad(L_hat, r), _pad(L_ref, r)
    dots = A.T @ B                       # dots[i, k] = <A_i, B_k>
    gain = np.abs(dots)
    if greedy:
        perm = np.full(r, -1)
        free_rows, free_cols = set(range(r)), set(range(r))
        for _ in range(r):
            best = max((gain[i, k], -i, -k) for i in free_rows for k in free_cols)
            i, k = -best[1], -best[2]
            perm[k] = i
            free_rows.discard(i)
            free_cols.discard(k)
    else:
        if r > 8:
            raise ValueError(f"exhaustive alignment refused for r={r} > 8; pass greedy=True")
        perms = _permutations(r)
        perm = perms[int(np.argmax(gain[perms, np.arange(r)].sum(axis=1)))]
    signs = np.where(dots[perm, np.arange(r)] < 0, -1.0, 1.0)
    aligned = A[:, perm] * signs
    err = float(np.linalg.norm(aligned - B))
    return perm, signs, err, aligned


def scaled_loading(chain: Chain) -> np.ndarray:
    """Posterior mean of ``Lambda Sigma_1^{1/2}`` with each draw aligned to the last one first."""
    L = chain.draws["Lambda"] * np.sqrt(chain.draws["sig1"])[:, None, :]
    ref = L[-1]
    total = np.zeros_like(ref)
    for s in range(L.shape[0]):
        _, _, _, al = align_loading(L[s], ref, greedy=ref.shape[1] > 8)
        total += al
    return total / L.shape[0]


def loading_error(L_hat, L0) -> float:
    """Relative Frobenius error after optimal column permutation and signs."""
    r = max(np.shape(L_hat)[1], np.shape(L0)[1])
    _, _, err, _ = align_loading(L_hat, L0, greedy=r > 8)
    return err / float(np.linalg.norm(L0))


def ridge_solve(X, y, lam: float):
    """Ridge coefficients and intercept for a fixed penalty; the intercept is not penalised."""
    xm, ym = X.mean(axis=0), y.mean()
    U, s, Vt = np.linalg.svd(X - xm, full_matrices=False)
    coef = Vt.T @ (s / (s ** 2 + lam) * (U.T @ (y - ym)))
    return coef, ym - xm @ coef


def _ridge_fit(X, y):
    """Ridge with intercept; penalty chosen by generalised cross-validation on a log grid."""
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    U, s, _ = np.linalg.svd(Xc, full_matrices=False)
    uy = U.T @ yc
    n = X.shape[0]
    resid0 = yc @ yc - uy @ uy
    top = max(float(s[0]) ** 2, 1e-12) if s.size else 1.0
    grid = top * np.logspace(-8, 4, 241)
    best = None
    for lam in grid:
        shrink = s ** 2 / (s ** 2 + lam)
        rss = resid0 + np.sum(((1.0 - shrink) * uy) ** 2)
        df = shrink.sum()
        if n - df <= 1e-8:
            continue
        gcv = n * rss / (n - df) ** 2
        if best is None or gcv < best[0]:
            best = (gcv, lam)
    lam = best[1]
    coef, icpt = ridge_solve(X, y, lam)
    return coef, icpt, lam


def ridge_predict(X_train, Y_train, X_test) -> np.ndarray:
    """Per-response GCV ridge; NaN training entries are skipped for that response."""
    Y_train = np.atleast_2d(np.asarray(Y_train, float))
    out = np.empty((np.shape(X_test)[0], Y_train.shape[1]))
    for j in range(Y_train.shape[1]):
        rows = ~np.isnan(Y_train[:, j])
        coef, icpt, _ = _ridge_fit(X_train[rows], Y_train[rows, j])
        out[:, j] = X_test @ coef + icpt
    return out


def ridge_baseline(X, Y_train, Y_test, test_mask) -> float:
    """Prediction MSE of the ridge baseline on held-out entries.

    ``Y_train`` carries NaN wherever an entry is not used for fitting; the
    same rows' predictors then predict ``Y_test`` on ``test_mask``.
    """
    Yhat = ridge_predict(X, Y_train, X)
    return prediction_mse(Yhat, Y_test, test_mask)
