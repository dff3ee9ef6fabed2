import numpy as np
import pytest
from checks import conjugate_oracles, kuo_mallick_errors, make_sampler
from conftest import random_instance
from scipy import stats

from grouprbf.data import Dataset
from grouprbf.evaluate import predict
from grouprbf.groups import GroupStructure, contiguous_groups
from grouprbf.kernel import AngleSet, ImportanceVector, RbfState
from grouprbf.priors import Hyperparams, log_posterior
from grouprbf.sampler import (
    SamplerConfig,
    SamplerError,
    adapt_scale,
    gibbs_sigma2,
    hmc_step,
    inclusion_probability,
    lambda_conditional,
    run_chain,
    sigma2_conditional,
    truncnorm_draw,
)

# -- configuration -------------------------------------------------------------------

def test_config_defaults():
    cfg = SamplerConfig()
    assert (cfg.burn_in, cfg.samples, cfg.thin) == (5000, 5000, 1)
    assert (cfg.adapt_window, cfg.accept_low, cfg.accept_high) == (100, 0.1, 0.3)
    assert cfg.start_indicators == 2000 and cfg.indicator_period == 10
    assert SamplerConfig(burn_in=1000).start_indicators == 400
    assert SamplerConfig(indicator_start=7).start_indicators == 7


@pytest.mark.parametrize("kw", [{"burn_in": 0}, {"thin": 0}, {"accept_low": 0.4}, {"center_scale": 0.0},
                                {"d_move": "gibbs"}, {"init_rho": "none"}, {"leapfrog": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SamplerConfig(**kw)


def test_config_json_round_trip():
    cfg = SamplerConfig(seed=4, thin=3, rho_period=1)
    assert SamplerConfig.from_json(cfg.to_json()) == cfg


# -- pure helpers ---------------------------------------------------------------------

def test_sigma2_conditional_examples():
    observed = np.ones((10, 1), dtype=bool)
    shape, rate = sigma2_conditional(np.zeros((10, 1)), observed, 0.1, 0.1)
    assert shape[0] == pytest.approx(5.1) and rate[0] == pytest.approx(0.1)
    resid = np.zeros((10, 1))
    resid[:2, 0] = 1.0                                   # SSR = 2
    assert sigma2_conditional(resid, observed, 0.1, 0.1)[1][0] == pytest.approx(1.1, abs=1e-15)
    # nothing observed: prior
    shape, rate = sigma2_conditional(np.ones((4, 1)), np.zeros((4, 1), bool), 0.1, 0.1)
    assert shape[0] == 0.1 and rate[0] == 0.1


def test_sigma2_precision_mean_at_zero_residual():
    rng = np.random.default_rng(3)
    N = 20000
    prec = np.array([1 / gibbs_sigma2(np.zeros((10, 1)), np.ones((10, 1), bool), Hyperparams(), rng)[0]
                     for _ in range(N)])
    se = np.sqrt(5.1 / 0.1 ** 2 / N)
    assert abs(prec.mean() - 51.0) < 3 * se


def test_lambda_conditional_limits(rng):
    phi = rng.uniform(size=20)
    r = 2.5 * phi + 0.01 * rng.normal(size=20)
    mean, _ = lambda_conditional(r, phi, 0.3, 0.0, 1e8)
    assert mean == pytest.approx(float(phi @ r / (phi @ phi)), rel=1e-9)
    mean, var = lambda_conditional(r, np.zeros(20), 0.3, 1.5, 2.0)
    assert mean == 1.5 and var == pytest.approx(4.0)


def test_lambda_conditional_matches_quadrature():
    x = np.array([0.1, 0.5, 0.9])
    phi = np.exp(-x ** 2)
    r = np.array([0.3, -0.2, 0.8])
    grid = np.linspace(-20, 20, 400001)
    logp = -0.5 * np.sum((r[None, :] - grid[:, None] * phi[None, :]) ** 2, axis=1) / 0.5 \
        - 0.5 * (grid - 0.4) ** 2 / 1.3 ** 2
    w = np.exp(logp - logp.max())
    ref = float(np.sum(w * grid) / np.sum(w))
    mean, _ = lambda_conditional(r, phi, 0.5, 0.4, 1.3)
    assert mean == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("rate,expect", [(0.2, 1.0), (0.5, 1.5), (0.0, 0.67)])
def test_adapt_scale(rate, expect):
    assert adapt_scale(1.0, rate) == pytest.approx(expect)


def test_inclusion_probability():
    assert inclusion_probability(-3.0, -3.0, 0.1) == pytest.approx(0.1, abs=1e-15)
    assert inclusion_probability(0.0, -1e6, 0.1) == 1.0
    assert inclusion_probability(-1e6, 0.0, 0.1) == 0.0
    assert inclusion_probability(5.0, 1.0, 1.0) == 1.0


def test_truncnorm_draws_stay_in_support(rng):
    x = truncnorm_draw(rng, np.full(10000, 0.98), 0.5, 0.0, 1.0)
    assert x.min() >= 0.0 and x.max() <= 1.0
    ref = stats.truncnorm((0 - 0.98) / 0.5, (1 - 0.98) / 0.5, loc=0.98, scale=0.5)
    assert stats.kstest(x, ref.cdf).pvalue > 0.01


def test_hmc_step_on_gaussian_target():
    """MALA on an exactly Gaussian target reproduces it (chi-square on thinned draws)."""
    rng = np.random.default_rng(11)
    A = np.array([[2.0, 0.6], [0.6, 1.0]])
    b = np.array([1.0, -0.5])
    mean = np.linalg.solve(A, b)
    cov = np.linalg.inv(A)

    def potential(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b, None

    x = mean.copy()
    keep = []
    for it in range(50000 * 4):
        x, _, _, _ = hmc_step(rng, x, potential, 0.9)
        if it % 4 == 0:
            keep.append(x[0])
    z = (np.array(keep) - mean[0]) / np.sqrt(cov[0, 0])
    edges = stats.norm.ppf(np.linspace(0, 1, 21))
    counts = np.histogram(z, bins=edges)[0]
    assert stats.chisquare(counts).pvalue > 0.01


def test_hmc_tiny_step_always_accepts(rng):
    def potential(x):
        return float(x @ x), 2 * x, None
    acc = [hmc_step(rng, rng.normal(size=3), potential, 1e-7)[1] for _ in range(200)]
    assert all(acc)


def test_hmc_rejects_non_finite():
    def potential(x):
        return (0.0, np.zeros_like(x), None) if np.all(x == 0) else (np.nan, x, None)
    x, ok, finite, _ = hmc_step(np.random.default_rng(0), np.zeros(2), potential, 0.1)
    assert not ok and not finite and np.array_equal(x, np.zeros(2))


# -- conjugate steps and indicators ----------------------------------------------------

def test_conjugate_steps_match_analytic_conditionals():
    z = conjugate_oracles(N=20000, seed=7)
    assert all(v < 3.0 for v in z.values()), z


@pytest.mark.parametrize("seed", range(10))
def test_indicator_conditionals_match_enumeration(seed):
    assert kuo_mallick_errors(seed) < 1e-12


def test_equal_likelihood_gives_prior():
    rng = np.random.default_rng(2)
    gs = contiguous_groups(10, 1)
    data, _, rbf, factor = random_instance(rng, 6, 10, 1, 1, gs=gs)
    rbf.lam[:] = 0.0                      # f = 0 whatever d is
    smp = make_sampler(data, gs, rbf, factor)
    assert smp.group_conditional(3) == pytest.approx(0.1, abs=1e-15)


# -- Metropolis steps ------------------------------------------------------------------

def _log_tn(x, mean, s, hi):
    return stats.truncnorm.logpdf(x, (0 - mean) / s, (hi - mean) / s, loc=mean, scale=s)


def test_center_ratio_matches_log_posterior_difference(rng, hp):
    data, gs, rbf, factor = random_instance(rng, 2, 3, 2, 2)
    rbf.importance.rho[1] = 0
    smp = make_sampler(data, gs, rbf, factor)
    smp.center_scale[:] = 0.3
    j = 1
    cur = smp.state.rbf.mu[:, j, :].copy()
    prop = rng.uniform(size=cur.shape)
    ratio, _ = smp.center_log_ratio(j, prop)
    lp = smp.lam_prior
    base = log_posterior(data, smp.state.rbf, factor, hp, lp)
    active = smp.d != 0
    for ell in range(2):
        moved = smp.state.rbf.copy()
        moved.mu[ell, j] = prop[ell]
        diff = log_posterior(data, moved, factor, hp, lp) - base
        corr = np.sum(_log_tn(cur[ell, active], prop[ell, active], 0.3, 1.0)
                      - _log_tn(prop[ell, active], cur[ell, active], 0.3, 1.0))
        assert ratio[ell] == pytest.approx(diff + corr, abs=1e-10)


def test_center_ratio_zero_for_identity_proposal(rng):
    data, gs, rbf, factor = random_instance(rng, 5, 3, 2, 2)
    smp = make_sampler(data, gs, rbf, factor)
    ratio, _ = smp.center_log_ratio(0, smp.state.rbf.mu[:, 0, :].copy())
    assert np.all(np.abs(ratio) < 1e-12)


def test_angle_ratio_matches_log_posterior_difference(rng, hp):
    data, gs, rbf, factor = random_instance(rng, 3, 4, 2, 2)
    smp = make_sampler(data, gs, rbf, factor)
    smp.angle_scale = 0.4
    m = 3
    cur = smp.state.rbf.angles.theta[m, :m].copy()
    ub = smp.angle_ub[m, :m]
    prop = rng.uniform(size=m) * ub
    ratio, _ = smp.angle_log_ratio(m, prop)
    lp = smp.lam_prior
    base = log_posterior(data, smp.state.rbf, factor, hp, lp)
    moved = smp.state.rbf.copy()
    moved.angles.theta[m, :m] = prop
    diff = log_posterior(data, moved, factor, hp, lp) - base
    corr = np.sum(_log_tn(cur, prop, 0.4, ub) - _log_tn(prop, cur, 0.4, ub))
    assert ratio == pytest.approx(diff + corr, abs=1e-10)
    same, _ = smp.angle_log_ratio(m, cur)
    assert abs(same) < 1e-12


def test_angles_noop_for_single_predictor(rng):
    data, gs, rbf, factor = random_instance(rng, 4, 1, 1, 1)
    smp = make_sampler(data, gs, rbf, factor)
    before = smp.rng.bit_generator.state
    smp.mh_angles()
    assert smp.rng.bit_generator.state == before


def test_inactive_parameters_follow_their_priors():
    rng = np.random.default_rng(5)
    gs = GroupStructure([[0, 1], [2, 3]])
    data, _, rbf, factor = random_instance(rng, 8, 4, 1, 2, gs=gs)
    rbf.importance.gamma[:] = [1, 0]
    smp = make_sampler(data, gs, rbf, factor, seed=5)
    mus, thetas, betas = [], [], []
    for _ in range(3000):
        smp.mh_centers()
        smp.mh_angles()
        smp.langevin_d()
        mus.append(smp.state.rbf.mu[0, 0, 3])
        thetas.append(smp.state.rbf.angles.theta[3, 2] / (2 * np.pi))
        betas.append(smp.state.rbf.importance.beta[2] / np.sqrt(smp.state.rbf.importance.s2[1]))
    assert stats.kstest(mus, "uniform").pvalue > 0.01
    assert stats.kstest(thetas, "uniform").pvalue > 0.01
    assert stats.kstest(betas, "norm").pvalue > 0.01


def test_imputation(rng):
    data, gs, rbf, factor = random_instance(rng, 6, 2, 2, 1)
    smp = make_sampler(data, gs, rbf, factor)
    before = smp.state.Y.copy()
    smp.impute_missing()
    assert np.array_equal(smp.state.Y, before)

    data, gs, rbf, factor = random_instance(rng, 6, 2, 2, 1, missing=0.3)
    data.Y[0, 0] = np.nan
    smp = make_sampler(data, gs, rbf, factor)
    smp.state.factor.sig2[:] = 1e-300
    smp.impute_missing()
    mean = smp.F + smp.LE
    assert np.allclose(smp.state.Y[~data.mask], mean[~data.mask], rtol=0, atol=1e-140)
    assert np.array_equal(smp.state.Y[data.mask], data.Y[data.mask])

    smp.state.factor.sig2[:] = 0.7
    draws = np.array([(smp.impute_missing(), smp.state.Y[0, 0])[1] for _ in range(20000)])
    assert abs(draws.mean() - mean[0, 0]) < 3 * np.sqrt(0.7 / 20000)


def test_adaptation_only_in_burn_in(rng):
    data, gs, rbf, factor = random_instance(rng, 10, 2, 1, 2)
    cfg = SamplerConfig(burn_in=100, samples=100, adapt_window=50, indicator_start=1000)
    smp = make_sampler(data, gs, rbf, factor, cfg=cfg)
    for _ in range(100):
        smp.step()
    scales = (smp.center_scale.copy(), smp.angle_scale, smp.step_d)
    for _ in range(100):
        smp.step()
    assert np.array_equal(smp.center_scale, scales[0])
    assert (smp.angle_scale, smp.step_d) == scales[1:]


# -- whole chains -------------------------------------------------------------------------

def _small_data(seed=0, n=30, p=4, v=2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, p))
    Y = np.column_stack([np.sin(3 * X[:, 0]) + 0.1 * rng.normal(size=n) for _ in range(v)])
    return Dataset(X, Y), contiguous_groups(2, p // 2)


def test_chain_storage_and_invariants():
    data, gs = _small_data()
    data.Y[3, 1] = np.nan
    cfg = SamplerConfig(burn_in=40, samples=30, thin=3, seed=1, indicator_start=10, indicator_period=5)
    ch = run_chain(data, gs, 2, cfg)
    assert ch.size == 10
    dr = ch.draws
    assert np.all((dr["mu"] >= 0) & (dr["mu"] <= 1))
    assert np.all(dr["sig2"] > 0) and np.all(dr["sig1"] > 0) and np.all(dr["s2"] > 0)
    on = dr["gamma"][:, gs.group_of] * dr["rho"]
    assert np.array_equal(dr["d"], np.where(on == 1, dr["beta"], 0.0))
    assert dr["y_imputed"].shape == (10, 1)
    assert ch.meta["missing"] == [[4, 2]]
    for s in range(ch.size):
        AngleSet.from_flat(4, dr["theta"][s]).validate()


def test_chain_is_deterministic():
    data, gs = _small_data()
    cfg = SamplerConfig(burn_in=30, samples=20, seed=9, indicator_start=5, indicator_period=2)
    a, b = run_chain(data, gs, 2, cfg), run_chain(data, gs, 2, cfg)
    for k in a.draws:
        assert np.array_equal(a.draws[k], b.draws[k])
    c = run_chain(data, gs, 2, SamplerConfig(burn_in=30, samples=20, seed=10, indicator_start=5))
    assert not np.array_equal(a.draws["beta"], c.draws["beta"])


def test_dimension_mismatch():
    data, gs = _small_data()
    with pytest.raises(ValueError):
        run_chain(data, contiguous_groups(3, 2), 2, SamplerConfig(burn_in=2, samples=2))
    with pytest.raises(ValueError):
        run_chain(data, gs, 0, SamplerConfig(burn_in=2, samples=2))


def test_non_finite_state_names_the_step(monkeypatch):
    data, gs = _small_data()
    from grouprbf import sampler as mod

    def broken(self):
        self.state.rbf.lam[0, 0] = np.nan
    monkeypatch.setattr(mod.Sampler, "backfit_lambda", broken)
    with pytest.raises(SamplerError) as err:
        run_chain(data, gs, 2, SamplerConfig(burn_in=5, samples=5))
    assert err.value.step == "backfit_lambda" and err.value.iteration == 0


def test_recovers_one_dimensional_sine():
    """Indicators clamped on, one response: plain Bayesian RBF regression."""
    rng = np.random.default_rng(21)
    sd = 0.2
    x = rng.uniform(size=(100, 1))
    y = np.sin(2 * np.pi * x[:, 0]) + sd * rng.normal(size=100)
    gs = contiguous_groups(1, 1)
    cfg = SamplerConfig(burn_in=1000, samples=1000, seed=3, clamp_indicators=True)
    ch = run_chain(Dataset(x, y[:, None]), gs, 6, cfg)
    xt = rng.uniform(size=(500, 1))
    yt = np.sin(2 * np.pi * xt[:, 0]) + sd * rng.normal(size=500)
    rmse = float(np.sqrt(np.mean((predict(ch, xt)[:, 0] - yt) ** 2)))
    assert rmse < 2 * sd


def test_state_from_explicit_components(rng):
    gs = contiguous_groups(1, 2)
    imp = ImportanceVector.from_d(gs, [0.5, 1.0])
    rbf = RbfState(np.zeros((1, 1)), np.full((1, 1, 2), 0.5), imp, AngleSet.identity(2))
    assert np.array_equal(rbf.d, [0.5, 1.0])


def test_prior_recovered_without_data():
    # with two observed rows the likelihood is nearly flat, so indicators revert to their priors
    gs = contiguous_groups(5, 3)
    gam, rho = [], []
    for seed in range(4):
        rng = np.random.default_rng(seed)
        Y = np.full((30, 2), np.nan)
        Y[:2] = [[1.0, -1.0], [-1.0, 1.0]]
        ch = run_chain(Dataset(rng.uniform(size=(30, gs.p)), Y), gs, 3,
                       SamplerConfig(burn_in=300, samples=1500, seed=seed))
        gam.append(ch.draws["gamma"].mean())
        rho.append(ch.draws["rho"].mean())
    for vals, target in ((gam, 0.2), (rho, 0.5)):
        se = np.std(vals, ddof=1) / 2
        assert abs(np.mean(vals) - target) <= 3 * max(se, 0.01)
