"""MCMC for the group-sparse multi-response RBF network with a factor residual.

One iteration runs, in order: missing-response imputation, idiosyncratic
variances, RBF weights (backfitting), centers (truncated-normal random walk),
correlation angles (truncated-normal random walk, one row at a time),
importance coefficients (Langevin / HMC), slab variances, the latent factor
block, the spike-and-slab indicators (on a schedule) and step-size adaptation
(burn-in only).

Coordinates whose importance coefficient is switched off do not enter the
likelihood; their centers, angle rows and slab coefficients are refreshed
from the prior instead of being proposed by random walk.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .chain import Chain
from .data import Dataset
from .groups import GroupStructure
from .kernel import (
    AngleSet,
    ImportanceVector,
    RbfState,
    angle_bounds,
    build_factor_row,
    factor_matrix,
)
from .priors import (
    FactorState,
    Hyperparams,
    LambdaPriorParams,
    lambda_prior_from_data,
    mgp_tau,
)
from .screening import correlation_screen, group_screen

log = logging.getLogger(__name__)


class SamplerError(FloatingPointError):
    """Numerical failure inside a named sampler step."""

    def __init__(self, step: str, iteration: int, detail: str = ""):
        self.step = step
        self.iteration = iteration
        super().__init__(f"non-finite state after step '{step}' at iteration {iteration}"
                         + (f": {detail}" if detail else ""))


@dataclass
class SamplerConfig:
    burn_in: int = 5000
    samples: int = 5000
    thin: int = 1
    seed: int = 0
    center_scale: float = 0.1
    angle_scale: float = 0.2
    langevin_step: float = 0.01
    leapfrog: int = 1
    d_scale: float = 0.1                 # per-coordinate random-walk scale once indicators run
    d_move: str = "random_walk"          # update for d once indicators run: "random_walk" or "langevin"
    init_rho: str = "all"                # "all": every predictor on; "screen" / "group_screen": from a screen
    adapt_window: int = 100
    accept_low: float = 0.1
    accept_high: float = 0.3
    indicator_start: int | None = None   # None: min(2000, 0.4 * burn_in)
    indicator_period: int = 10
    rho_period: int | None = None        # None: same cadence as gamma
    clamp_indicators: bool = False
    n_factors: int | None = None         # None: min(v, 7)

    def __post_init__(self):
        if self.burn_in < 1 or self.samples < 1 or self.thin < 1:
            raise ValueError("burn_in, samples and thin must be >= 1")
        if not 0 < self.accept_low < self.accept_high < 1:
            raise ValueError("acceptance band must satisfy 0 < low < high < 1")
        if min(self.center_scale, self.angle_scale, self.langevin_step) <= 0:
            raise ValueError("proposal scales must be positive")
        if self.leapfrog < 1 or self.indicator_period < 1 or self.adapt_window < 1:
            raise ValueError("leapfrog, indicator_period and adapt_window must be >= 1")
        if self.d_scale <= 0:
            raise ValueError("proposal scales must be positive")
        if self.d_move not in ("random_walk", "langevin"):
            raise ValueError("d_move must be 'random_walk' or 'langevin'")
        if self.init_rho not in ("screen", "group_screen", "all"):
            raise ValueError("init_rho must be 'screen', 'group_screen' or 'all'")

    @property
    def start_indicators(self) -> int:
        if self.indicator_start is not None:
            return self.indicator_start
        return min(2000, int(0.4 * self.burn_in))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> SamplerConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


# ---------------------------------------------------------------------------
# Small distributional helpers, kept pure so they can be checked in isolation.

def truncnorm_draw(rng, mean, scale, lo, hi):
    """Inverse-CDF draw from Normal(mean, scale^2) truncated to [lo, hi]."""
    mean = np.asarray(mean, dtype=float)
    a = ndtr((lo - mean) / scale)
    b = ndtr((hi - mean) / scale)
    u = rng.uniform(size=mean.shape)
    x = mean + scale * ndtri(a + u * (b - a))
    return np.clip(x, lo, hi)


def truncnorm_lognorm(mean, scale, lo, hi):
    """log of the Normal mass inside [lo, hi]; ``mean`` is assumed to lie inside."""
    upper = log_ndtr((hi - mean) / scale)
    lower = log_ndtr((lo - mean) / scale)
    return upper + np.log1p(-np.exp(lower - upper))


def gamma_draw(rng, shape, rate):
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float))


def sigma2_conditional(resid, observed, a0, b0):
    """Shape and rate of the Gamma full conditional of each precision 1/sigma2_j."""
    resid = np.where(observed, resid, 0.0)
    n_obs = observed.sum(axis=0)
    return a0 + 0.5 * n_obs, b0 + 0.5 * np.sum(resid ** 2, axis=0)


def gibbs_sigma2(resid, observed, hp: Hyperparams, rng) -> np.ndarray:
    """Draw the idiosyncratic variances given the residuals on observed entries."""
    shape, rate = sigma2_conditional(resid, observed, hp.a0, hp.b0)
    return 1.0 / gamma_draw(rng, shape, rate)


def lambda_conditional(partial_resid, phi_col, sig2, prior_m, prior_s):
    """Mean and variance of one RBF weight given the partial residual."""
    prec = np.sum(phi_col ** 2, axis=-1) / sig2 + 1.0 / prior_s ** 2
    var = 1.0 / prec
    mean = var * (np.sum(partial_resid * phi_col, axis=-1) / sig2 + prior_m / prior_s ** 2)
    return mean, var


def slab_conditional(beta, groups: GroupStructure, hp: Hyperparams):
    """Shape and rate of the Gamma full conditional of each group precision 1/s_g^2."""
    ss = np.bincount(groups.group_of, weights=beta ** 2, minlength=groups.M)
    return hp.c1 + 0.5 * groups.sizes, hp.c2 + 0.5 * ss


def _mvn_draw(rng, mean, prec):
    """Draw from Normal(mean, prec^{-1}) through the Cholesky factor of ``prec``."""
    L = np.linalg.cholesky(prec)
    xi = rng.standard_normal(mean.shape)
    return mean + np.linalg.solve(L.T, xi.T).T


def adapt_scale(scale, rate, low=0.1, high=0.3):
    """Widen by 1.5 above the band, shrink by 0.67 below it."""
    if rate > high:
        return scale * 1.5
    if rate < low:
        return scale * 0.67
    return scale


def inclusion_probability(loglik_on, loglik_off, prior):
    """Two-point conditional P(indicator = 1) from log-likelihoods."""
    if prior >= 1.0:
        return 1.0
    if prior <= 0.0:
        return 0.0
    z = (np.log1p(-prior) + loglik_off) - (np.log(prior) + loglik_on)
    if z > 0:
        e = np.exp(-z)
        return float(e / (1.0 + e))
    return float(1.0 / (1.0 + np.exp(z)))


def hmc_step(rng, x0, potential, eps, n_leapfrog=1):
    """One Hamiltonian Monte Carlo transition; a single leapfrog step is MALA.

    ``potential(x)`` returns ``(U, grad U, cache)``. Returns ``(x, accepted,
    finite, cache)`` where ``cache`` belongs to the returned ``x`` when
    accepted and is None otherwise; ``finite`` is False when the trajectory
    hit a non-finite value (the move is then rejected).
    """
    U0, g0, _ = potential(x0)
    mom = rng.standard_normal(x0.size)
    H0 = U0 + 0.5 * mom @ mom
    x, g = x0.copy(), g0
    p_ = mom - 0.5 * eps * g
    for step in range(n_leapfrog):
        x = x + eps * p_
        U1, g, cache = potential(x)
        if not (np.isfinite(U1) and np.all(np.isfinite(g))):
            return x0, False, False, None
        if step < n_leapfrog - 1:
            p_ = p_ - eps * g
    p_ = p_ - 0.5 * eps * g
    H1 = U1 + 0.5 * p_ @ p_
    ok = bool(np.log(rng.uniform()) < H0 - H1)
    return (x, True, True, cache) if ok else (x0, False, True, None)


# ---------------------------------------------------------------------------

@dataclass
class ModelState:
    rbf: RbfState
    factor: FactorState
    Y: np.ndarray          # completed, centred responses

    def copy(self) -> ModelState:
        return ModelState(self.rbf.copy(), self.factor.copy(), self.Y.copy())


@dataclass
class _Counter:
    accepted: np.ndarray
    tried: np.ndarray
    total_accepted: np.ndarray = field(init=False)
    total_tried: np.ndarray = field(init=False)

    def __post_init__(self):
        self.total_accepted = np.zeros_like(self.accepted)
        self.total_tried = np.zeros_like(self.tried)

    def record(self, idx, ok):
        self.accepted[idx] += ok
        self.tried[idx] += 1
        self.total_accepted[idx] += ok
        self.total_tried[idx] += 1

    def window_rate(self):
        return np.where(self.tried > 0, self.accepted / np.maximum(self.tried, 1), np.nan)

    def reset(self):
        self.accepted[...] = 0
        self.tried[...] = 0

    def overall(self) -> float:
        t = self.total_tried.sum()
        return float(self.total_accepted.sum() / t) if t else float("nan")


class Sampler:
    """Holds the current state, cached projections and tuning state of one chain."""

    def __init__(self, data: Dataset, groups: GroupStructure, K: int,
                 cfg: SamplerConfig | None = None, hp: Hyperparams | None = None,
                 state: ModelState | None = None, lam_prior: LambdaPriorParams | None = None,
                 rng: np.random.Generator | None = None):
        if data.p != groups.p:
            raise ValueError(f"data has p={data.p} predictors but groups cover p={groups.p}")
        if K < 1:
            raise ValueError("K must be >= 1")
        self.cfg = cfg or SamplerConfig()
        self.hp = hp or Hyperparams()
        self.rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
        self.groups = groups
        self.X = data.X
        self.observed = data.mask
        self.missing = ~self.observed
        self.n, self.p, self.v = data.n, data.p, data.v
        self.K = K
        self.lam_prior = lam_prior or lambda_prior_from_data(data.Y, K)
        self.qG = self.hp.group_prob(groups.M)
        self.state = state if state is not None else self._initial_state(data)
        self.angle_ub = angle_bounds(self.p)
        self.center_scale = np.full((self.v, K), self.cfg.center_scale)
        self.angle_scale = self.cfg.angle_scale
        self.step_d = self.cfg.langevin_step
        self.acc_centers = _Counter(np.zeros((self.v, K)), np.zeros((self.v, K)))
        self.acc_angles = _Counter(np.zeros(1), np.zeros(1))
        self.acc_d = _Counter(np.zeros(1), np.zeros(1))
        self.scale_rw_d = np.full(self.p, self.cfg.d_scale)
        self.acc_rw_d = _Counter(np.zeros(self.p), np.zeros(self.p))
        self.iteration = 0
        self.refresh()

    # -- initialisation -----------------------------------------------------

    def _initial_state(self, data: Dataset) -> ModelState:
        rng, n, p, v, K = self.rng, self.n, self.p, self.v, self.K
        gs = self.groups
        Y = data.Y.copy()
        col_mean = np.nanmean(Y, axis=0)
        Y = np.where(self.observed, Y, col_mean[None, :])

        # per-predictor strongest marginal correlation, unit norm within each group
        Xc = self.X - self.X.mean(axis=0)
        Yc = Y - Y.mean(axis=0)
        xs = np.sqrt(np.sum(Xc ** 2, axis=0))
        ys = np.sqrt(np.sum(Yc ** 2, axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.abs(Xc.T @ Yc) / np.outer(xs, ys)
        score = np.nan_to_num(corr).max(axis=1)
        beta = np.zeros(p)
        for g in range(gs.M):
            idx = gs.members(g)
            norm = np.sqrt(np.sum(score[idx] ** 2))
            beta[idx] = score[idx] / norm if norm > 0 else 1.0 / np.sqrt(idx.size)

        rho = np.ones(p)
        if self.cfg.init_rho == "screen":
            rho = np.zeros(p)
            rho[correlation_screen(self.X, data.Y, self.hp.screen_cutoff).selected] = 1
        elif self.cfg.init_rho == "group_screen":
            rho = np.zeros(p)
            for g in group_screen(self.X, data.Y, gs, self.hp.group_level).selected:
                rho[gs.members(g)] = 1
        imp = ImportanceVector(gs, np.ones(gs.M), rho, beta, np.ones(gs.M), np.full(gs.M, 0.5))
        mu = np.empty((v, K, p))
        for ell in range(v):
            rows = rng.choice(n, size=K, replace=K > n)
            mu[ell] = self.X[rows]
        rbf = RbfState(np.zeros((v, K)), mu, imp, AngleSet.identity(p))

        r = self.cfg.n_factors or min(v, 7)
        var = np.nanvar(data.Y, axis=0)
        var = np.where(var > 0, var, 1.0)
        factor = FactorState(
            Lambda=np.zeros((v, r)),
            eta=rng.standard_normal((n, r)),
            sig1=np.ones(r),
            sig2=var.copy(),
            phi=np.ones((v, r)),
            delta=np.ones(r),
        )
        return ModelState(rbf, factor, Y)

    # -- caches ---------------------------------------------------------------

    def refresh(self) -> None:
        """Rebuild every cached quantity from the state."""
        st = self.state
        self.V = factor_matrix(st.rbf.angles.theta)
        self.d = st.rbf.importance.d
        self.delta = self.X[None, None, :, :] - st.rbf.mu[:, :, None, :]
        self.z = (self.delta * self.d) @ self.V
        self.q = np.einsum("lkip,lkip->lki", self.z, self.z)
        self.phi = np.exp(-self.q)
        self.F = np.einsum("lk,lki->il", st.rbf.lam, self.phi)
        self.LE = st.factor.eta @ st.factor.Lambda.T

    @property
    def target(self) -> np.ndarray:
        """Responses minus the factor part: what the RBF means must explain."""
        return self.state.Y - self.LE

    def _loglik(self, F, cols=None) -> float:
        sig2 = self.state.factor.sig2
        T = self.target
        if cols is None:
            return float(-0.5 * np.sum((T - F) ** 2 / sig2))
        return float(-0.5 * np.sum((T[:, cols] - F) ** 2 / sig2[cols]))

    def loglik(self) -> float:
        return self._loglik(self.F)

    # -- steps ------------------------------------------------------------------

    def impute_missing(self) -> None:
        if not self.missing.any():
            return
        sd = np.sqrt(self.state.factor.sig2)
        mean = self.F + self.LE
        draw = mean + sd[None, :] * self.rng.standard_normal(mean.shape)
        self.state.Y = np.where(self.missing, draw, self.state.Y)

    def gibbs_sigma2(self) -> None:
        resid = self.state.Y - self.F - self.LE
        full = np.ones_like(self.observed)
        self.state.factor.sig2 = gibbs_sigma2(resid, full, self.hp, self.rng)

    def backfit_lambda(self) -> None:
        lam = self.state.rbf.lam
        sig2 = self.state.factor.sig2
        T = self.target
        for j in range(self.K):
            phi_j = self.phi[:, j, :]                        # (v, n)
            partial = T.T - self.F.T + lam[:, j, None] * phi_j
            mean, var = lambda_conditional(partial, phi_j, sig2, self.lam_prior.m, self.lam_prior.s)
            new = mean + np.sqrt(var) * self.rng.standard_normal(self.v)
            self.F += ((new - lam[:, j])[:, None] * phi_j).T
            lam[:, j] = new

    def center_log_ratio(self, j: int, prop: np.ndarray):
        """MH log ratio, per response, for moving the centers of unit ``j`` to ``prop`` (v, p).

        Only active coordinates enter the truncated-normal proposal correction;
        inactive ones are prior draws and cancel. Returns the ratio and the
        proposed ``(delta, z, q, phi, F)`` caches.
        """
        rbf = self.state.rbf
        active = self.d != 0
        cur = rbf.mu[:, j, :]
        T = self.target
        sig2 = self.state.factor.sig2
        delta_new = self.X[None, :, :] - prop[:, None, :]    # (v, n, p)
        z_new = (delta_new * self.d) @ self.V
        q_new = np.einsum("lip,lip->li", z_new, z_new)
        phi_new = np.exp(-q_new)
        F_new = self.F + (rbf.lam[:, j, None] * (phi_new - self.phi[:, j, :])).T
        log_ratio = (-0.5 * np.sum((T - F_new) ** 2, axis=0) / sig2
                     + 0.5 * np.sum((T - self.F) ** 2, axis=0) / sig2)
        if active.any():
            s = np.broadcast_to(self.center_scale[:, j][:, None], cur[:, active].shape)
            log_ratio += np.sum(truncnorm_lognorm(cur[:, active], s, 0.0, 1.0)
                                - truncnorm_lognorm(prop[:, active], s, 0.0, 1.0), axis=1)
        return log_ratio, (delta_new, z_new, q_new, phi_new, F_new)

    def mh_centers(self) -> None:
        """Block random walk on each center vector; responses are updated in parallel."""
        rbf = self.state.rbf
        active = self.d != 0
        n_inactive = int((~active).sum())
        for j in range(self.K):
            cur = rbf.mu[:, j, :]                               # (v, p)
            scale = self.center_scale[:, j][:, None]
            prop = cur.copy()
            if active.any():
                prop[:, active] = truncnorm_draw(self.rng, cur[:, active],
                                                 np.broadcast_to(scale, cur[:, active].shape), 0.0, 1.0)
            if n_inactive:
                prop[:, ~active] = self.rng.uniform(size=(self.v, n_inactive))
            log_ratio, (delta_new, z_new, q_new, phi_new, F_new) = self.center_log_ratio(j, prop)
            accept = np.log(self.rng.uniform(size=self.v)) < log_ratio
            if active.any():
                for ell in range(self.v):
                    self.acc_centers.record((ell, j), bool(accept[ell]))
            # inactive coordinates never change the likelihood, so they refresh regardless
            keep = np.where(accept[:, None], prop, cur)
            keep[:, ~active] = prop[:, ~active]
            rbf.mu[:, j, :] = keep
            self.delta[:, j] = np.where(accept[:, None, None], delta_new,
                                        self.X[None, :, :] - keep[:, None, :])
            self.z[:, j] = np.where(accept[:, None, None], z_new, self.z[:, j])
            self.q[:, j] = np.where(accept[:, None], q_new, self.q[:, j])
            self.phi[:, j] = np.where(accept[:, None], phi_new, self.phi[:, j])
            self.F = np.where(accept[None, :], F_new, self.F)

    def angle_log_ratio(self, m: int, prop: np.ndarray):
        """MH log ratio for replacing the angles of row ``m`` by ``prop``, plus the new caches."""
        cur = self.state.rbf.angles.theta[m, :m]
        ub = self.angle_ub[m, :m]
        row_new = build_factor_row(prop)
        w = row_new - self.V[m, : m + 1]
        u = self.d[m] * self.delta[..., m]                    # (v, K, n)
        cross = self.z[..., : m + 1] @ w
        q_new = np.maximum(self.q + 2.0 * u * cross + u * u * (w @ w), 0.0)
        phi_new = np.exp(-q_new)
        F_new = np.einsum("lk,lki->il", self.state.rbf.lam, phi_new)
        log_ratio = self._loglik(F_new) - self._loglik(self.F)
        log_ratio += np.sum(truncnorm_lognorm(cur, self.angle_scale, 0.0, ub)
                            - truncnorm_lognorm(prop, self.angle_scale, 0.0, ub))
        return float(log_ratio), (row_new, w, u, q_new, phi_new, F_new)

    def mh_angles(self) -> None:
        """Row-wise random walk on the angles of ``V``; inactive rows refresh from the prior."""
        theta = self.state.rbf.angles.theta
        for m in range(1, self.p):
            ub = self.angle_ub[m, :m]
            if self.d[m] == 0:
                theta[m, :m] = self.rng.uniform(size=m) * ub
                self.V[m, : m + 1] = build_factor_row(theta[m, :m])
                continue
            prop = truncnorm_draw(self.rng, theta[m, :m], self.angle_scale, 0.0, ub)
            log_ratio, (row_new, w, u, q_new, phi_new, F_new) = self.angle_log_ratio(m, prop)
            ok = bool(np.log(self.rng.uniform()) < log_ratio)
            self.acc_angles.record(0, ok)
            if ok:
                theta[m, :m] = prop
                self.V[m, : m + 1] = row_new
                self.z[..., : m + 1] += u[..., None] * w
                self.q, self.phi, self.F = q_new, phi_new, F_new

    def _potential(self, beta_active, active):
        """Negative log conditional of the active slab coefficients, and its gradient."""
        imp = self.state.rbf.importance
        d = np.zeros(self.p)
        d[active] = beta_active
        sig2 = self.state.factor.sig2
        weight = np.broadcast_to(1.0 / sig2, (self.n, self.v))
        z = (self.delta * d) @ self.V
        q = np.einsum("lkip,lkip->lki", z, z)
        phi = np.exp(-q)
        lam = self.state.rbf.lam
        F = np.einsum("lk,lki->il", lam, phi)
        r = self.target - F
        s2 = imp.s2[self.groups.group_of][active]
        U = 0.5 * float(np.sum(weight * r * r)) + 0.5 * float(np.sum(beta_active ** 2 / s2))
        coef = (r * weight).T[:, None, :] * lam[:, :, None] * phi
        w = z @ self.V.T
        grad = 2.0 * np.einsum("lki,lkip,lkip->p", coef, self.delta, w)[active] + beta_active / s2
        return U, grad, (d, z, q, phi, F)

    def langevin_d(self) -> None:
        """HMC with ``leapfrog`` steps on the active slab coefficients (MALA for one step)."""
        imp = self.state.rbf.importance
        active = imp.active
        gs = self.groups
        if active.any():
            b, ok, finite, cache = hmc_step(self.rng, imp.beta[active].copy(),
                                            lambda x: self._potential(x, active),
                                            self.step_d, self.cfg.leapfrog)
            if not finite:
                self.step_d *= 0.5
            self.acc_d.record(0, ok)
            if ok:
                imp.beta[active] = b
                self.d, self.z, self.q, self.phi, self.F = cache
        if (~active).any():
            sd = np.sqrt(imp.s2[gs.group_of][~active])
            imp.beta[~active] = sd * self.rng.standard_normal(sd.size)

    def rw_d(self) -> None:
        """Coordinate-wise random walk on the active slab coefficients.

        Each move changes one column of ``D``, so the projections are updated
        by a rank-one correction instead of being recomputed.
        """
        imp = self.state.rbf.importance
        active = imp.active
        s2 = imp.s2[self.groups.group_of]
        for m in np.flatnonzero(active):
            old = imp.beta[m]
            new = old + self.scale_rw_d[m] * self.rng.standard_normal()
            w = self.V[m, : m + 1]
            u = (new - old) * self.delta[..., m]
            cross = self.z[..., : m + 1] @ w
            q_new = np.maximum(self.q + 2.0 * u * cross + u * u * (w @ w), 0.0)
            phi_new = np.exp(-q_new)
            F_new = np.einsum("lk,lki->il", self.state.rbf.lam, phi_new)
            log_ratio = (self._loglik(F_new) - self._loglik(self.F)
                         - 0.5 * (new * new - old * old) / s2[m])
            ok = bool(np.log(self.rng.uniform()) < log_ratio)
            self.acc_rw_d.record(m, ok)
            if ok:
                imp.beta[m] = new
                self.d[m] = new
                self.z[..., : m + 1] += u[..., None] * w
                self.q, self.phi, self.F = q_new, phi_new, F_new
        if (~active).any():
            sd = np.sqrt(s2[~active])
            imp.beta[~active] = sd * self.rng.standard_normal(sd.size)

    def update_d(self) -> None:
        """Langevin moves until the indicators start, then the configured move."""
        cfg = self.cfg
        indicators_on = not cfg.clamp_indicators and self.iteration >= cfg.start_indicators
        if indicators_on and cfg.d_move == "random_walk":
            self.rw_d()
        else:
            self.langevin_d()

    def gibbs_s_g(self) -> None:
        imp = self.state.rbf.importance
        shape, rate = slab_conditional(imp.beta, self.groups, self.hp)
        imp.s2 = 1.0 / gamma_draw(self.rng, shape, rate)

    def draw_eta(self) -> None:
        fs = self.state.factor
        R = self.state.Y - self.F
        Q = np.diag(1.0 / fs.sig1) + (fs.Lambda.T / fs.sig2) @ fs.Lambda
        mean = np.linalg.solve(Q, ((R / fs.sig2) @ fs.Lambda).T).T
        fs.eta = _mvn_draw(self.rng, mean, Q)

    def draw_loadings(self) -> None:
        """Loading rows one at a time under the MGP precisions ``phi * tau``."""
        fs = self.state.factor
        R = self.state.Y - self.F
        tau = mgp_tau(fs.delta)
        EtE = fs.eta.T @ fs.eta
        EtR = fs.eta.T @ R
        for ell in range(self.v):
            P = np.diag(fs.phi[ell] * tau) + EtE / fs.sig2[ell]
            m = np.linalg.solve(P, EtR[:, ell] / fs.sig2[ell])
            fs.Lambda[ell] = _mvn_draw(self.rng, m[None, :], P)[0]

    def draw_sig1(self) -> None:
        fs = self.state.factor
        fs.sig1 = 1.0 / gamma_draw(self.rng, self.hp.a0 + 0.5 * self.n,
                                   self.hp.b0 + 0.5 * np.sum(fs.eta ** 2, axis=0))

    def draw_phi(self) -> None:
        fs = self.state.factor
        nu = self.hp.nu1
        fs.phi = gamma_draw(self.rng, nu + 0.5, nu + 0.5 * mgp_tau(fs.delta)[None, :] * fs.Lambda ** 2)

    def draw_delta(self) -> None:
        fs = self.state.factor
        r = fs.r
        colsum = np.sum(fs.phi * fs.Lambda ** 2, axis=0)
        for h in range(r):
            tau_minus = mgp_tau(fs.delta) / fs.delta[h]
            shape = (self.hp.kappa1 if h == 0 else self.hp.kappa2) + 0.5 * self.v * (r - h)
            rate = 1.0 + 0.5 * np.sum(tau_minus[h:] * colsum[h:])
            fs.delta[h] = gamma_draw(self.rng, shape, rate)

    def gibbs_factor_block(self) -> None:
        """Scores, loadings, factor variances, local then global shrinkage."""
        self.draw_eta()
        self.draw_loadings()
        self.draw_sig1()
        self.draw_phi()
        self.draw_delta()
        self.LE = self.state.factor.eta @ self.state.factor.Lambda.T

    # -- indicators -------------------------------------------------------------

    def _loglik_with_d(self, d_new: np.ndarray, idx: np.ndarray):
        """Log-likelihood when ``d`` changes only on ``idx``; returns the new caches too."""
        change = d_new[idx] - self.d[idx]
        if not np.any(change):
            return self.loglik(), None
        dz = (self.delta[..., idx] * change) @ self.V[idx, :]
        z = self.z + dz
        q = np.einsum("lkip,lkip->lki", z, z)
        phi = np.exp(-q)
        F = np.einsum("lk,lki->il", self.state.rbf.lam, phi)
        return self._loglik(F), (d_new, z, q, phi, F)

    def group_conditional(self, g: int) -> float:
        """P(gamma_g = 1 | everything else)."""
        return self._group_conditional(g)[0]

    def _group_conditional(self, g):
        imp = self.state.rbf.importance
        idx = self.groups.members(g)
        d_on = self.d.copy()
        d_on[idx] = imp.rho[idx] * imp.beta[idx]
        d_off = self.d.copy()
        d_off[idx] = 0.0
        ll1, c1 = self._loglik_with_d(d_on, idx)
        ll0, c0 = self._loglik_with_d(d_off, idx)
        return inclusion_probability(ll1, ll0, self.qG), c1, c0

    def predictor_conditional(self, m: int) -> float:
        """P(rho_m = 1 | everything else) for a predictor in an active group."""
        return self._predictor_conditional(m)[0]

    def _predictor_conditional(self, m):
        imp = self.state.rbf.importance
        g = self.groups.group_of[m]
        idx = np.array([m])
        d_on = self.d.copy()
        d_on[m] = imp.gamma[g] * imp.beta[m]
        d_off = self.d.copy()
        d_off[m] = 0.0
        ll1, c1 = self._loglik_with_d(d_on, idx)
        ll0, c0 = self._loglik_with_d(d_off, idx)
        return inclusion_probability(ll1, ll0, imp.b[g]), c1, c0

    def _adopt(self, cache) -> None:
        if cache is not None:
            self.d, self.z, self.q, self.phi, self.F = cache

    def gibbs_gamma(self) -> None:
        imp = self.state.rbf.importance
        for g in self.rng.permutation(self.groups.M):
            prob, c1, c0 = self._group_conditional(g)
            new = int(self.rng.uniform() < prob)
            if new != imp.gamma[g]:
                imp.gamma[g] = new
                self._adopt(c1 if new else c0)

    def gibbs_rho(self) -> None:
        imp = self.state.rbf.importance
        gs = self.groups
        for m in self.rng.permutation(self.p):
            g = gs.group_of[m]
            if imp.gamma[g] == 0:
                imp.rho[m] = int(self.rng.uniform() < imp.b[g])
                continue
            prob, c1, c0 = self._predictor_conditional(m)
            new = int(self.rng.uniform() < prob)
            if new != imp.rho[m]:
                imp.rho[m] = new
                self._adopt(c1 if new else c0)
        self.draw_b()

    def draw_b(self) -> None:
        imp = self.state.rbf.importance
        gs = self.groups
        on = np.bincount(gs.group_of, weights=imp.rho, minlength=gs.M)
        imp.b = self.rng.beta(1.0 + on, 1.0 + gs.sizes - on)

    def gibbs_indicators(self, gamma: bool = True, rho: bool = True) -> None:
        """Group indicators in random order, then within-group indicators and ``b``."""
        if gamma:
            self.gibbs_gamma()
        if rho:
            self.gibbs_rho()

    # -- schedule -------------------------------------------------------------

    def adapt_scales(self) -> None:
        low, high = self.cfg.accept_low, self.cfg.accept_high
        rates = self.acc_centers.window_rate()
        for idx in np.ndindex(rates.shape):
            if np.isfinite(rates[idx]):
                self.center_scale[idx] = min(adapt_scale(self.center_scale[idx], rates[idx], low, high), 1.0)
        ra = self.acc_angles.window_rate()[0]
        if np.isfinite(ra):
            self.angle_scale = min(adapt_scale(self.angle_scale, ra, low, high), np.pi)
        rd = self.acc_d.window_rate()[0]
        if np.isfinite(rd):
            self.step_d = adapt_scale(self.step_d, rd, low, high)
        rates = self.acc_rw_d.window_rate()
        for m in np.flatnonzero(np.isfinite(rates)):
            self.scale_rw_d[m] = adapt_scale(self.scale_rw_d[m], rates[m], low, high)
        for c in (self.acc_centers, self.acc_angles, self.acc_d, self.acc_rw_d):
            c.reset()

    def _check(self, step: str) -> None:
        st = self.state
        ok = (np.all(np.isfinite(self.F)) and np.all(np.isfinite(st.rbf.lam))
              and np.all(np.isfinite(st.rbf.importance.beta))
              and np.all(np.isfinite(st.factor.Lambda)) and np.all(st.factor.sig2 > 0)
              and np.all(np.isfinite(st.factor.sig2)) and np.all(np.isfinite(self.LE)))
        if not ok:
            raise SamplerError(step, self.iteration)

    def step(self) -> None:
        """One full sweep."""
        cfg = self.cfg
        it = self.iteration
        for name in ("impute_missing", "gibbs_sigma2", "backfit_lambda", "mh_centers",
                     "mh_angles", "update_d", "gibbs_s_g", "gibbs_factor_block"):
            getattr(self, name)()
            self._check(name)
        if not cfg.clamp_indicators and it >= cfg.start_indicators:
            since = it - cfg.start_indicators
            rho_period = cfg.rho_period or cfg.indicator_period
            self.gibbs_indicators(gamma=since % cfg.indicator_period == 0, rho=since % rho_period == 0)
            self._check("gibbs_indicators")
        if it < cfg.burn_in and (it + 1) % cfg.adapt_window == 0:
            self.adapt_scales()
        # guard against drift in the incrementally updated projections
        if (it + 1) % 50 == 0:
            self.refresh()
        self.iteration += 1


def run_chain(data: Dataset, groups: GroupStructure, K: int, cfg: SamplerConfig | None = None,
              hp: Hyperparams | None = None, progress: bool = False) -> Chain:
    """Run one chain and return the thinned post-burn-in draws.

    Responses are centred on their observed means before sampling; the
    offsets are stored in ``chain.meta['y_center']``.
    """
    cfg = cfg or SamplerConfig()
    hp = hp or Hyperparams()
    if data.v < 1 or data.n < 2:
        raise ValueError("need at least two rows and one response")
    center = np.nanmean(data.Y, axis=0)
    centred = Dataset(data.X, data.Y - center[None, :])
    smp = Sampler(centred, groups, K, cfg, hp)
    miss_idx = np.argwhere(smp.missing)
    total = cfg.burn_in + cfg.samples
    store: dict[str, list] = {k: [] for k in ("gamma", "rho", "beta", "d", "s2", "b", "lam", "mu",
                                              "theta", "Lambda", "sig1", "sig2", "phi", "delta",
                                              "y_imputed")}
    fitted_sum = np.zeros((data.n, data.v))
    tril = np.tril_indices(data.p, -1)
    for it in range(total):
        smp.step()
        if progress and (it + 1) % 500 == 0:
            log.info("iteration %d / %d", it + 1, total)
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            st = smp.state
            imp = st.rbf.importance
            fs = st.factor
            store["gamma"].append(imp.gamma.copy())
            store["rho"].append(imp.rho.copy())
            store["beta"].append(imp.beta.copy())
            store["d"].append(imp.d)
            store["s2"].append(imp.s2.copy())
            store["b"].append(imp.b.copy())
            store["lam"].append(st.rbf.lam.copy())
            store["mu"].append(st.rbf.mu.copy())
            store["theta"].append(st.rbf.angles.theta[tril].copy())
            store["Lambda"].append(fs.Lambda.copy())
            store["sig1"].append(fs.sig1.copy())
            store["sig2"].append(fs.sig2.copy())
            store["phi"].append(fs.phi.copy())
            store["delta"].append(fs.delta.copy())
            store["y_imputed"].append(st.Y[smp.missing] + center[miss_idx[:, 1]])
            fitted_sum += smp.F + smp.LE
    draws = {k: np.asarray(v) for k, v in store.items()}
    draws["y_imputed"] = draws["y_imputed"].reshape(len(store["beta"]), -1)
    n_draws = draws["beta"].shape[0]
    meta = {
        "K": K,
        "seed": cfg.seed,
        "config": cfg.to_json(),
        "hyperparams": hp.to_json(),
        "dims": {"n": data.n, "p": data.p, "v": data.v, "r": smp.state.factor.r},
        "y_center": center,
        "lambda_prior": {"m": smp.lam_prior.m, "s": smp.lam_prior.s},
        "missing": (miss_idx + 1).tolist(),
        "acceptance": {
            "centers": smp.acc_centers.overall(),
            "angles": smp.acc_angles.overall(),
            "d": smp.acc_d.overall(),
            "d_random_walk": smp.acc_rw_d.overall(),
        },
        "final_scales": {
            "centers": smp.center_scale,
            "angles": smp.angle_scale,
            "d": smp.step_d,
            "d_random_walk": smp.scale_rw_d,
        },
    }
    return Chain(draws, groups, meta, fitted_sum / n_draws)
