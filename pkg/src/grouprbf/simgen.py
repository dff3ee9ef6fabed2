"""Synthetic benchmark: seven nonlinear mean functions plus a structured factor residual.

The signal lives in the first five predictors of the first group and in the
first five predictors of one further group (the "xi block"), which enters
six of the seven responses linearly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .groups import GroupStructure

N_RESPONSES = 7
N_FACTORS = 3
XI_RESPONSES = (0, 1, 2, 3, 5, 6)      # f5 has no xi term
DEFAULT_XI_GROUP = 8                    # 0-based; predictors 73..77 with groups of 9
LOADING_SUPPORT = ((0, 1, 2), (2, 3, 4), (4, 5, 6))


@dataclass
class SimTruth:
    active: np.ndarray       # 0-based indices of predictors that enter some mean function
    xi: np.ndarray           # (7, 5); zero row for the fifth response
    xi_cols: np.ndarray      # 0-based columns of the xi block
    Lambda0: np.ndarray      # (7, 3)
    eta: np.ndarray          # (n, 3)
    f: np.ndarray            # (n, 7) noise-free means, before centring
    y_center: np.ndarray     # (7,) column means removed from Y

    def to_json(self) -> dict:
        return {
            "active": (self.active + 1).tolist(),
            "xi": self.xi.tolist(),
            "xi_cols": (self.xi_cols + 1).tolist(),
            "Lambda0": self.Lambda0.tolist(),
            "y_center": self.y_center.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> SimTruth:
        return cls(
            active=np.asarray(obj["active"], dtype=int) - 1,
            xi=np.asarray(obj["xi"], dtype=float),
            xi_cols=np.asarray(obj["xi_cols"], dtype=int) - 1,
            Lambda0=np.asarray(obj["Lambda0"], dtype=float),
            eta=np.empty((0, N_FACTORS)),
            f=np.empty((0, N_RESPONSES)),
            y_center=np.asarray(obj["y_center"], dtype=float),
        )


def rescale(z) -> np.ndarray:
    """Min-max map onto [0, 1]."""
    z = np.asarray(z, dtype=float)
    lo, hi = z.min(), z.max()
    if not hi > lo:
        raise ValueError("cannot rescale a constant vector")
    out = (z - lo) / (hi - lo)
    out[z == lo] = 0.0
    out[z == hi] = 1.0
    return out


def eval_truth(x, xi, xi_cols=None) -> np.ndarray:
    """The seven mean functions at one point (length 7) or at every row of a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if xi_cols is None:
        xi_cols = np.arange(9 * DEFAULT_XI_GROUP, 9 * DEFAULT_XI_GROUP + 5)
    xi_cols = np.asarray(xi_cols)
    if X.shape[1] <= max(int(xi_cols.max()), 4):
        raise ValueError(f"need at least {int(xi_cols.max()) + 1} predictors, got {X.shape[1]}")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (N_RESPONSES, 5):
        raise ValueError("xi must have shape (7, 5)")
    x1, x2, x3, x4, x5 = (X[:, k] for k in range(5))
    lin = X[:, xi_cols] @ xi.T                   # (n, 7)
    friedman = 10.0 * np.sin(np.pi * x1 * x2)
    bowl = 20.0 * (x3 - 0.5) ** 2
    growth = 0.1 * np.exp(4.0 * x1) + 4.0 / (1.0 + np.exp(-20.0 * (x2 - 0.5)))
    ratio = 5.0 * x2 / (1.0 + x1 ** 2)
    F = np.column_stack([
        friedman + bowl + (10.0 * x4 + 5.0 * x5) + lin[:, 0],
        lin[:, 1],
        growth + 3.0 * x3 + 2.0 * x4 + x5 + lin[:, 2],
        friedman + 5.0 * np.sin(x3 * x4) + x5 + lin[:, 3],
        ratio + 3.0 * x3 + 2.0 * x4 + x5,
        growth + bowl + (10.0 * x4 + 5.0 * x5) + lin[:, 5],
        ratio + bowl + 2.0 * x4 + x5 + lin[:, 6],
    ])
    return F[0] if single else F


def loading_pattern() -> np.ndarray:
    """Boolean (7, 3) support of the true loading matrix."""
    mask = np.zeros((N_RESPONSES, N_FACTORS), dtype=bool)
    for k, rows in enumerate(LOADING_SUPPORT):
        mask[list(rows), k] = True
    return mask


def gen_dataset(n: int, gs: GroupStructure, seed: int, xi_group: int = DEFAULT_XI_GROUP,
                missing_rate: float = 0.0, center: bool = True) -> tuple[Dataset, SimTruth]:
    """Draw one replicate.

    ``xi_group`` picks the group whose first five predictors form the
    linear block (0-based; the default is the ninth group). Responses are
    mean-centred unless ``center`` is False; entries are then dropped
    completely at random with probability ``missing_rate``.
    """
    if n < 10:
        raise ValueError("n must be at least 10")
    if not 0.0 <= missing_rate < 1.0:
        raise ValueError("missing_rate must lie in [0, 1)")
    if not 0 < xi_group < gs.M:
        raise ValueError(f"xi_group {xi_group} needs a structure with more than {xi_group} groups")
    first, block = gs.members(0), gs.members(xi_group)
    if first.size < 5 or block.size < 5 or not np.array_equal(first[:5], np.arange(5)):
        raise ValueError("the first group must start with predictors 1..5 and both signal groups need 5 members")
    xi_cols = block[:5]
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, gs.p))
    X = np.column_stack([rescale(Z[:, j]) for j in range(gs.p)])
    xi = 8.0 + rng.standard_normal((N_RESPONSES, 5))
    xi[4] = 0.0
    Lambda0 = np.where(loading_pattern(), 5.0 + 0.1 * rng.standard_normal((N_RESPONSES, N_FACTORS)), 0.0)
    eta = rng.standard_normal((n, N_FACTORS))
    f = eval_truth(X, xi, xi_cols)
    Y = f + eta @ Lambda0.T + rng.standard_normal((n, N_RESPONSES))
    y_center = Y.mean(axis=0) if center else np.zeros(N_RESPONSES)
    Y = Y - y_center
    if missing_rate > 0:
        Y[rng.uniform(size=Y.shape) < missing_rate] = np.nan
    active = np.concatenate([np.arange(5), xi_cols])
    truth = SimTruth(active, xi, xi_cols, Lambda0, eta, f, y_center)
    return Dataset(X, Y), truth


def split_entries(mask: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    """Boolean test mask holding out ``1 - ratio`` of each response's observed entries."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test = np.zeros_like(mask, dtype=bool)
    for j in range(mask.shape[1]):
        rows = np.flatnonzero(mask[:, j])
        n_test = round((1.0 - ratio) * rows.size)
        if rows.size and n_test == 0:
            n_test = 1
        test[rng.permutation(rows)[:n_test], j] = True
    return test


def split_rows(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test partition of the rows."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = round(ratio * n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
