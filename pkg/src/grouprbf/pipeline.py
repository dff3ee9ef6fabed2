"""Screen, choose K and fit: the end-to-end route shared by the command line and the benchmark."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .chain import Chain
from .data import Dataset
from .evaluate import (
    InclusionSummary,
    align_loading,
    fitted_values,
    inclusion_summary,
    loading_error,
    pooled_effects,
    predict,
    prediction_mse,
    ridge_baseline,
    ridge_predict,
    roc_auc,
    scaled_loading,
)
from .groups import GroupStructure
from .kselect import select_k
from .priors import Hyperparams
from .sampler import SamplerConfig, run_chain
from .screening import group_screen
from .simgen import SimTruth

log = logging.getLogger(__name__)


class ScreeningError(ValueError):
    """Raised when the group screen keeps nothing."""


@dataclass
class FitResult:
    chain: Chain
    K: int
    kept_groups: np.ndarray    # 0-based groups of the full structure that were fitted
    columns: np.ndarray        # 0-based columns of the full X used by the chain
    groups: GroupStructure     # the full structure

    def summary(self, active_only: bool = False) -> InclusionSummary:
        """Inclusion summary over all predictors; screened-out ones get probability 0."""
        return expand_summary(inclusion_summary(self.chain, active_only), self.groups,
                              self.kept_groups, self.columns)


def expand_summary(s: InclusionSummary, gs: GroupStructure, kept_groups, columns) -> InclusionSummary:
    full = InclusionSummary(np.zeros(gs.M), np.zeros(gs.p), np.zeros(gs.p), np.zeros(gs.p))
    full.group_prob[kept_groups] = s.group_prob
    full.predictor_prob[columns] = s.predictor_prob
    full.rho_prob[columns] = s.rho_prob
    full.beta_median[columns] = s.beta_median
    return full


def fit(data: Dataset, gs: GroupStructure, cfg: SamplerConfig | None = None,
        hp: Hyperparams | None = None, K: int | None = None, screen: bool = True) -> FitResult:
    """Group screen (unless ``screen`` is False), K selection (unless ``K`` is given), then MCMC."""
    hp = hp or Hyperparams()
    cfg = cfg or SamplerConfig()
    if screen:
        kept = group_screen(data.X, data.Y, gs, hp.group_level).selected
        if kept.size == 0:
            raise ScreeningError("no group passed the F-screen; rerun without screening "
                                 "or raise the group level")
    else:
        kept = np.arange(gs.M)
    sub, cols = gs.subset(kept)
    reduced = Dataset(data.X[:, cols], data.Y)
    if K is None:
        K = select_k(reduced.X, reduced.Y, hp.screen_cutoff)
    log.info("fitting %d of %d groups with K=%d", kept.size, gs.M, K)
    chain = run_chain(reduced, sub, K, cfg, hp)
    chain.meta["columns"] = (cols + 1).tolist()
    chain.meta["kept_groups"] = (kept + 1).tolist()
    chain.meta["p_full"] = gs.p
    chain.meta["groups_full"] = gs.to_json()["groups"]
    return FitResult(chain, K, kept, cols, gs)


def evaluate_chain(chain: Chain, data: Dataset, test: np.ndarray | None, mode: str,
                   truth: SimTruth | None) -> dict:
    """Every metric the ``evaluate`` command reports, as plain library calls."""
    full_groups = chain.meta.get("groups_full")
    gs_full = GroupStructure.from_json({"groups": full_groups}) if full_groups else chain.groups
    metrics: dict = {"draws": chain.size, "K": chain.meta.get("K")}
    if chain.meta.get("p_full", chain.groups.p) != data.p:
        raise ValueError(f"chain was fitted on {chain.meta.get('p_full', chain.groups.p)} predictors, "
                         f"data has {data.p}")
    if chain.draws["lam"].shape[1] != data.v:
        raise ValueError(f"chain has {chain.draws['lam'].shape[1]} responses, data has {data.v}")
    if test is not None and test.any():
        Yhat = fitted_values(chain) if mode == "entries" else predict(chain, data.X)
        train_Y = np.where(test, np.nan, data.Y)
        metrics["mse"] = prediction_mse(Yhat, data.Y, test)
        if mode == "entries":
            metrics["ridge_mse"] = ridge_baseline(data.X, train_Y, data.Y, test)
        else:
            rows = ~test.any(axis=1)
            metrics["ridge_mse"] = prediction_mse(ridge_predict(data.X[rows], data.Y[rows], data.X),
                                                  data.Y, test)
    else:
        metrics["mse"] = prediction_mse(fitted_values(chain), data.Y, data.mask)
    summary = inclusion_summary(chain)
    cols = np.asarray(chain.meta.get("columns", np.arange(chain.groups.p) + 1)) - 1
    kept = np.asarray(chain.meta.get("kept_groups", np.arange(chain.groups.M) + 1)) - 1
    full = expand_summary(summary, gs_full, kept, cols)
    metrics["inclusion"] = full.to_json()
    try:
        E, order = pooled_effects(full, gs_full)
        metrics["pooled_effects"] = {"E": E.tolist(), "ranking": (order + 1).tolist()}
    except ValueError as exc:
        metrics["pooled_effects"] = None
        log.warning("%s", exc)
    L = scaled_loading(chain)
    metrics["loading_scaled"] = L.tolist()
    if truth is not None:
        flags = np.zeros(data.p, dtype=bool)
        flags[truth.active] = True
        fpr, tpr, auc = roc_auc(full.predictor_prob, flags)
        metrics["auc"] = auc
        metrics["roc"] = {"fpr": fpr.tolist(), "tpr": tpr.tolist()}
        metrics["loading_error"] = loading_error(L, truth.Lambda0)
        r = max(L.shape[1], truth.Lambda0.shape[1])
        perm, signs, _, aligned = align_loading(L, truth.Lambda0, greedy=r > 8)
        metrics["loading_aligned"] = aligned.tolist()
        metrics["loading_permutation"] = (perm + 1).tolist()
        metrics["loading_signs"] = signs.tolist()
    return metrics
