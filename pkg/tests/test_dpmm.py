import math

import numpy as np
import pytest
from scipy import stats

from bnpmrl.core import Dataset, Hyperstate, StickState, mixture_draw
from bnpmrl.distributions import RngHandle
from bnpmrl.dpmm import (
    AtomProposal,
    McmcSettings,
    Prepared,
    PriorConfig,
    loglik_matrix,
    run_chain,
    sample_labels,
    update_alpha,
    update_atoms,
    update_config,
    update_lambda,
    update_mu,
    update_tau2,
    update_weights,
)
from bnpmrl.io import chain_to_text

KS_LEVEL = 1e-3


def _hyper(**kw):
    base = dict(mu=np.zeros(2), sigma=np.eye(2), lam=0.0, tau2=1.0, rho=1.0, alpha=1.0, a_kappa=2.0)
    base.update(kw)
    return Hyperstate(**base)


def _state(L, config, hyper=None, theta=None, phi=None, kappa2=None, weights=None):
    theta = np.zeros(L) if theta is None else np.asarray(theta, float)
    phi = np.zeros(L) if phi is None else np.asarray(phi, float)
    kappa2 = np.ones(L) if kappa2 is None else np.asarray(kappa2, float)
    w = np.full(L, 1.0 / L) if weights is None else np.asarray(weights, float)
    s = mixture_draw(theta, phi, w, kappa2=kappa2, hyper=hyper or _hyper())
    s.config = np.asarray(config, dtype=int)
    return s


def _batch_se(x, nb=50):
    m = np.array([b.mean() for b in np.array_split(np.asarray(x), nb)])
    return m.std(ddof=1) / math.sqrt(nb)


def test_beta_kappa_conditionals():
    # one x = 0 per component, lambda = 0, tau2 = kappa2 = 1: beta ~ N(0, 1/2)
    L = 4000
    data = Dataset(np.ones(L), np.zeros(L, bool), covariate=np.zeros(L))
    s = _state(L, np.arange(L), _hyper(rho=1.5, a_kappa=2.0))
    update_atoms(s, data, np.random.default_rng(1))
    beta = s.atoms.beta
    assert stats.kstest(beta, stats.norm(0, math.sqrt(0.5)).cdf).pvalue > KS_LEVEL
    # 1/kappa2 | beta ~ Gamma(a_kappa + 1/2, rate rho + beta^2 / 2)
    g = (1.5 + 0.5 * beta ** 2) / s.atoms.kappa2
    assert stats.kstest(g, stats.gamma(2.5).cdf).pvalue > KS_LEVEL


def test_empty_components_redrawn_from_baseline():
    L = 4000
    h = _hyper(mu=np.array([1.0, -2.0]), sigma=np.array([[0.5, 0.2], [0.2, 0.3]]), lam=3.0, tau2=2.0)
    s = _state(L, np.zeros(0, int), h)
    update_atoms(s, Dataset.empty(), np.random.default_rng(2))
    pts = np.column_stack([s.atoms.theta, s.atoms.phi])
    np.testing.assert_allclose(pts.mean(axis=0), [1.0, -2.0], atol=4 * math.sqrt(0.5 / L))
    np.testing.assert_allclose(np.cov(pts.T), h.sigma, atol=0.05)
    assert stats.kstest(s.atoms.beta, stats.norm(3.0, math.sqrt(2.0)).cdf).pvalue > KS_LEVEL


def test_tau2_and_lambda_conditionals():
    prior = PriorConfig(a_tau=2.0, b_tau=1.0, a_lambda=1.0, b_lambda=4.0, L=3)
    beta = np.array([1.0, -1.0, 2.0])
    gen = np.random.default_rng(3)
    n = 5000
    tau2 = np.empty(n)
    lam = np.empty(n)
    for i in range(n):
        s = _state(3, [], _hyper(lam=0.5, tau2=2.0))
        s.atoms.beta = beta.copy()
        update_tau2(s, prior, gen)
        tau2[i] = s.hyper.tau2
        s.hyper.tau2 = 2.0
        update_lambda(s, prior, gen)
        lam[i] = s.hyper.lam
    ss = np.sum((beta - 0.5) ** 2)
    ig = stats.invgamma(2.0 + 1.5, scale=1.0 + 0.5 * ss)
    assert stats.kstest(tau2, ig.cdf).pvalue > KS_LEVEL
    v = 1.0 / (1.0 / 4.0 + 3 / 2.0)
    m = v * (1.0 / 4.0 + beta.sum() / 2.0)
    assert stats.kstest(lam, stats.norm(m, math.sqrt(v)).cdf).pvalue > KS_LEVEL


def test_mu_conditional_mean():
    prior = PriorConfig(a_mu=[0.0, 0.0], B_mu=np.eye(2), L=4)
    gen = np.random.default_rng(4)
    theta = np.array([1.0, 2.0, 0.0, 1.0])
    phi = np.array([-1.0, 0.0, -2.0, -1.0])
    draws = []
    for _ in range(4000):
        s = _state(4, [], theta=theta, phi=phi)
        update_mu(s, prior, gen)
        draws.append(s.hyper.mu)
    draws = np.array(draws)
    # precision 1 + L, mean sum / (1 + L)
    np.testing.assert_allclose(draws.mean(axis=0), [4.0 / 5, -4.0 / 5], atol=4 * math.sqrt(0.2 / 4000))
    np.testing.assert_allclose(draws.var(axis=0), [0.2, 0.2], rtol=0.1)


def test_alpha_conditional():
    prior = PriorConfig(a_alpha=3.0, b_alpha=0.1, L=6)
    zeta = np.array([0.3, 0.5, 0.7, 0.9, 0.6])
    gen = np.random.default_rng(5)
    out = np.empty(4000)
    for i in range(out.size):
        s = _state(6, [])
        s.sticks = StickState.from_zeta(zeta)
        update_alpha(s, gen, prior)
        out[i] = s.hyper.alpha
    rate = 0.1 - np.log(zeta).sum()
    assert stats.kstest(out, stats.gamma(3.0 + 5, scale=1.0 / rate).cdf).pvalue > KS_LEVEL


def test_weights_conjugate_update():
    # counts (3, 0, 2, 1): 1 - zeta_1 ~ Beta(1 + 3, alpha + 3), zeta_3 ~ Beta(alpha + 1, 1 + 2)
    config = [0, 0, 0, 2, 2, 3]
    gen = np.random.default_rng(6)
    w1, z3 = [], []
    for _ in range(4000):
        s = _state(4, config, _hyper(alpha=1.5))
        update_weights(s, gen)
        w1.append(s.weights[0, 0])
        z3.append(s.sticks.zeta[0, 2])
        assert abs(s.weights.sum() - 1.0) < 1e-12
    assert stats.kstest(w1, stats.beta(4.0, 4.5).cdf).pvalue > KS_LEVEL
    assert stats.kstest(z3, stats.beta(2.5, 3.0).cdf).pvalue > KS_LEVEL


def test_sample_labels_single_component():
    labels, bad = sample_labels(np.zeros((50, 1)), np.random.default_rng(0))
    assert np.all(labels == 0) and bad == 0


def test_sample_labels_frequencies_match_weights():
    w = np.array([0.5, 0.3, 0.15, 0.05])
    n = 200_000
    labels, _ = sample_labels(np.tile(np.log(w), (n, 1)) - 3.0, np.random.default_rng(1))
    counts = np.bincount(labels, minlength=4)
    assert stats.chisquare(counts, n * w).pvalue > KS_LEVEL


def test_sample_labels_all_minus_inf_rows():
    lp = np.full((3, 4), -np.inf)
    lp[0] = [0.0, -np.inf, -np.inf, -np.inf]
    labels, bad = sample_labels(lp, np.random.default_rng(2))
    assert bad == 2 and labels[0] == 0


def test_config_censored_probabilities():
    theta = np.log([2.0, 5.0])
    phi = np.log([1.0, 0.5])
    w = np.array([0.7, 0.3])
    n = 100_000
    t = np.full(n, 3.0)
    data = Dataset(t, np.ones(n, bool))
    s = _state(2, np.zeros(n, int), theta=theta, phi=phi, weights=w)
    update_config(s, data, np.random.default_rng(3))
    sf = w * stats.gamma.sf(3.0, a=np.exp(theta), scale=1.0 / np.exp(phi))
    p = sf / sf.sum()
    assert abs(np.mean(s.config == 0) - p[0]) < 4 * math.sqrt(p[0] * p[1] / n)


def test_config_with_underflowing_weights_uses_likelihood():
    # the only weighted component has rate exp(800) = inf, so its kernel is 0
    s = _state(2, [0], theta=np.log([2.0, 2.0]), phi=[800.0, 0.0], weights=[1.0, 0.0])
    data = Dataset([2.0], [False])
    update_config(s, data, np.random.default_rng(0))
    assert s.config[0] == 1


def _grid_posterior_means(t, cens, mu, sigma):
    th = np.linspace(-2.5, 3.5, 601)
    ph = np.linspace(-3.5, 3.0, 651)
    TH, PH = np.meshgrid(th, ph, indexing="ij")
    lp = stats.multivariate_normal(mu, sigma).logpdf(np.dstack([TH, PH]))
    a, scale = np.exp(TH), np.exp(-PH)
    for ti, ci in zip(t, cens):
        lp = lp + (stats.gamma.logsf(ti, a, scale=scale) if ci else stats.gamma.logpdf(ti, a, scale=scale))
    p = np.exp(lp - lp.max())
    p /= p.sum()
    return float((p * TH).sum()), float((p * PH).sum())


@pytest.mark.parametrize("mode,c", [("fisher", 1.5), ("sigma", 0.5)])
def test_atom_mh_matches_grid_posterior(mode, c):
    t = np.array([0.8, 1.7, 2.4, 3.1, 0.5, 1.2, 2.0])
    cens = np.array([0, 0, 0, 0, 0, 1, 1], bool)
    mu, sigma = np.array([0.5, 0.0]), 0.5 * np.eye(2)
    data = Prepared(Dataset(t, cens), pooled=True)
    s = _state(1, np.zeros(t.size, int), _hyper(mu=mu, sigma=sigma), weights=[1.0])
    gen = np.random.default_rng(7)
    prop = AtomProposal(mode, c)
    n, burn = 30_000, 1000
    out = np.empty((n, 2))
    for i in range(n + burn):
        update_atoms(s, data, gen, prop)
        if i >= burn:
            out[i - burn] = s.atoms.theta[0], s.atoms.phi[0]
    ref = _grid_posterior_means(t, cens, mu, sigma)
    for k in range(2):
        assert abs(out[:, k].mean() - ref[k]) < 4 * _batch_se(out[:, k]), (k, out[:, k].mean(), ref[k])


def test_loglik_matrix_permutation_invariant_mixture():
    rng = np.random.default_rng(8)
    theta, phi = rng.normal(0.5, 0.5, 5), rng.normal(0, 0.5, 5)
    w = rng.dirichlet(np.ones(5))
    data = Prepared(Dataset(rng.gamma(2, 1, 20), rng.random(20) < 0.3), pooled=True)
    perm = rng.permutation(5)
    a = _state(5, [], theta=theta, phi=phi, weights=w)
    b = _state(5, [], theta=theta[perm], phi=phi[perm], weights=w[perm])
    fa = np.log(np.exp(loglik_matrix(a, data)) @ a.weights[0])
    fb = np.log(np.exp(loglik_matrix(b, data)) @ b.weights[0])
    np.testing.assert_allclose(fa, fb, rtol=1e-12)


def test_run_chain_deterministic_and_recorded_draws():
    rng = np.random.default_rng(9)
    data = Dataset(rng.gamma(3.0, 1.0, 40), rng.random(40) < 0.2, covariate=rng.normal(0, 1, 40))
    prior = PriorConfig(L=10)
    settings = McmcSettings(iterations=60, burn_in=20, thinning=4, seed=11)
    a = run_chain(data, prior, settings)
    b = run_chain(data, prior, settings)
    assert len(a) == settings.n_draws == 10
    assert chain_to_text(a) == chain_to_text(b)
    c = run_chain(data, prior, settings, rng=RngHandle(12))
    assert chain_to_text(a) != chain_to_text(c)
    assert a.meta["data_digest"] == data.digest()
    for d in a.draws:
        assert d.config.shape == (40,) and abs(d.weights.sum() - 1) < 1e-12


def test_prior_only_chain_runs():
    ch = run_chain(None, PriorConfig(L=5), McmcSettings(iterations=30, burn_in=10))
    assert len(ch) == 20 and ch.meta["n"] == 0
    assert all(d.config.size == 0 for d in ch.draws)


def test_settings_validation():
    with pytest.raises(ValueError):
        McmcSettings(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        McmcSettings(proposal="other")
    with pytest.raises(ValueError):
        PriorConfig.from_dict({"L": 10, "bogus": 1})
