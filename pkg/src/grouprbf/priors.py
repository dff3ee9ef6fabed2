"""Prior densities, hyperparameters and the joint log posterior.

Variance-type parameters get Gamma priors on their precisions; all Gamma
distributions are written as (shape, rate). The log posterior is returned
up to an additive constant and with densities taken with respect to the
precisions, as the sampler's conjugate steps assume.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import xlogy

from .kernel import RbfState, angle_bounds, eval_mean


@dataclass
class Hyperparams:
    c1: float = 0.1
    c2: float = 100.0
    kappa1: float = 2.1
    kappa2: float = 3.1
    nu1: float = 1.0
    qG: float | None = None      # None means 1/M
    a0: float = 0.1              # precision prior shape for sigma1, sigma2
    b0: float = 0.1              # precision prior rate for sigma1, sigma2
    screen_cutoff: float = 0.01
    group_level: float = 0.05

    def __post_init__(self):
        for name in ("c1", "c2", "kappa1", "kappa2", "nu1", "a0", "b0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be positive")
        if self.qG is not None and not 0 < self.qG <= 1:
            raise ValueError("qG must lie in (0, 1]")

    def group_prob(self, M: int) -> float:
        return 1.0 / M if self.qG is None else float(self.qG)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class LambdaPriorParams:
    """Per-response mean ``m`` and sd ``s`` of the RBF weight prior."""

    m: np.ndarray
    s: np.ndarray


def lambda_prior_from_data(Y: np.ndarray, K: int) -> LambdaPriorParams:
    """Data-driven Normal(m_l, s_l^2) prior on the RBF weights.

    ``m_l = (max + min) / (2K)`` and ``s_l = (max - min) / (4 sqrt(K))`` over
    the observed entries of response ``l``.
    """
    Y = np.array(Y, dtype=float, ndmin=2)
    if Y.shape[0] == 1 and Y.shape[1] > 1:
        Y = Y.T
    if K < 1:
        raise ValueError("K must be >= 1")
    hi = np.nanmax(Y, axis=0)
    lo = np.nanmin(Y, axis=0)
    if np.any(~np.isfinite(hi)) or np.any(hi <= lo):
        bad = np.flatnonzero(~np.isfinite(hi) | (hi <= lo)) + 1
        raise ValueError(f"degenerate lambda prior: responses {bad.tolist()} are constant or empty")
    return LambdaPriorParams(m=(hi + lo) / (2.0 * K), s=(hi - lo) / (4.0 * np.sqrt(K)))


def mgp_tau(delta) -> np.ndarray:
    """Cumulative products of the multiplicative gamma process increments."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("MGP increments must be positive")
    return np.cumprod(delta)


@dataclass
class FactorState:
    """Latent factor block: loadings, scores, variances and MGP shrinkage."""

    Lambda: np.ndarray   # (v, r)
    eta: np.ndarray      # (n, r)
    sig1: np.ndarray     # (r,) latent factor variances
    sig2: np.ndarray     # (v,) idiosyncratic variances
    phi: np.ndarray      # (v, r) local precisions
    delta: np.ndarray    # (r,) MGP increments

    @property
    def r(self) -> int:
        return self.Lambda.shape[1]

    @property
    def tau(self) -> np.ndarray:
        return mgp_tau(self.delta)

    def copy(self) -> FactorState:
        return FactorState(*(np.array(getattr(self, f.name)) for f in fields(self)))


def _gamma_logpdf(x, shape, rate):
    return (shape - 1.0) * np.log(x) - rate * x


def log_posterior_terms(data, rbf: RbfState, factor: FactorState, hp: Hyperparams,
                        lam_prior: LambdaPriorParams | None = None) -> dict[str, float]:
    """Each additive block of the log posterior, keyed by name."""
    imp = rbf.importance
    gs = imp.groups
    if lam_prior is None:
        lam_prior = lambda_prior_from_data(data.Y, rbf.K)
    mask = data.mask
    f = eval_mean(data.X, rbf)
    resid = np.where(mask, data.Y, 0.0) - f - factor.eta @ factor.Lambda.T
    sig2 = factor.sig2[None, :]
    data_term = -np.sum(mask * (resid ** 2 / (2.0 * sig2) + 0.5 * np.log(sig2)))

    s2 = imp.s2[gs.group_of]
    tau = factor.tau
    prec = factor.phi * tau[None, :]
    qG = hp.group_prob(gs.M)
    b = imp.b[gs.group_of]

    ub = angle_bounds(rbf.p)
    low = np.tril(np.ones_like(ub, dtype=bool), -1)
    t = rbf.angles.theta[low]
    in_support = (np.all((rbf.mu >= 0) & (rbf.mu <= 1))
                  and np.all((t >= 0) & (t <= ub[low]))
                  and np.all((imp.b >= 0) & (imp.b <= 1)))

    terms = {
        "data": data_term,
        "eta": -np.sum(factor.eta ** 2 / (2.0 * factor.sig1[None, :]) + 0.5 * np.log(factor.sig1)),
        "beta": -np.sum(imp.beta ** 2 / (2.0 * s2) + 0.5 * np.log(s2)),
        "s_g": np.sum(_gamma_logpdf(1.0 / imp.s2, hp.c1, hp.c2)),
        "sigma2": np.sum(_gamma_logpdf(1.0 / factor.sig2, hp.a0, hp.b0)),
        "sigma1": np.sum(_gamma_logpdf(1.0 / factor.sig1, hp.a0, hp.b0)),
        "lambda": -np.sum((rbf.lam - lam_prior.m[:, None]) ** 2 / (2.0 * lam_prior.s[:, None] ** 2)),
        "loading": np.sum(-0.5 * prec * factor.Lambda ** 2 + 0.5 * np.log(prec)),
        "phi": np.sum(_gamma_logpdf(factor.phi, hp.nu1, hp.nu1)),
        "delta": float(_gamma_logpdf(factor.delta[0], hp.kappa1, 1.0)
                       + np.sum(_gamma_logpdf(factor.delta[1:], hp.kappa2, 1.0))),
        "gamma": np.sum(xlogy(imp.gamma, qG) + xlogy(1 - imp.gamma, 1.0 - qG)),
        "rho": np.sum(xlogy(imp.rho, b) + xlogy(1 - imp.rho, 1.0 - b)),
        "support": 0.0 if in_support else -np.inf,
    }
    return {k: float(v) for k, v in terms.items()}


def log_posterior(data, rbf: RbfState, factor: FactorState, hp: Hyperparams,
                  lam_prior: LambdaPriorParams | None = None) -> float:
    terms = log_posterior_terms(data, rbf, factor, hp, lam_prior)
    total = sum(terms.values())
    if np.isnan(total):
        raise FloatingPointError("log posterior is NaN")
    return total


def active_factors(loading_scaled: np.ndarray, response_sd: np.ndarray,
                   threshold: float = 0.05) -> np.ndarray:
    """Columns of the scaled loading matrix with any standardized |entry| >= threshold."""
    std = np.abs(loading_scaled) / np.asarray(response_sd)[:, None]
    return np.any(std >= threshold, axis=0)
