"""Blocked Gibbs sampler for the truncated DP mixture of gamma x normal kernels.

The joint kernel for a (time, covariate) pair is
``Gamma(t; exp(theta), exp(phi)) N(x; beta, kappa2)``. Right-censored times
contribute the gamma survival function instead of the density. All block
updates act on every component at once; random numbers are drawn for all L
components on every call so the stream consumption does not depend on which
components happen to be occupied.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .core import (
    Atoms,
    ChainOutput,
    Dataset,
    Hyperstate,
    MixtureState,
    StickState,
    _stick_break,
    cluster_counts,
)
from .distributions import (
    DomainError,
    RngHandle,
    as_generator,
    log_gamma_survival,
    sample_inverse_wishart2,
)

LOG_P_FLOOR = -700.0


class TuningWarning(UserWarning):
    """MH acceptance rate outside the usual [0.1, 0.6] range."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _mat(value):
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = m * np.eye(2)
    return m.reshape(2, 2)


@dataclass
class PriorConfig:
    """Fixed hyperprior constants.

    ``b_lambda`` is the prior variance of lambda. ``B_Sigma`` and ``a_Sigma``
    parameterise the inverse-Wishart prior so that its mean is
    ``B_Sigma / (a_Sigma - 3)``. ``a_kappa`` is the fixed inverse-gamma shape of
    the kernel variances kappa2.
    """

    a_alpha: float = 3.0
    b_alpha: float = 0.1
    a_mu: np.ndarray = field(default_factory=lambda: np.array([0.59, -2.12]))
    B_mu: np.ndarray = field(default_factory=lambda: 0.019 * np.eye(2))
    a_Sigma: float = 4.0
    B_Sigma: np.ndarray = field(default_factory=lambda: 0.019 * np.eye(2))
    a_lambda: float = 0.0
    b_lambda: float = 88.0
    a_tau: float = 2.0
    b_tau: float = 88.0
    a_kappa: float = 2.0
    a_rho: float = 1.0
    b_rho: float = 1.0 / 88.0
    L: int = 80

    def __post_init__(self):
        self.a_mu = np.asarray(self.a_mu, dtype=float).reshape(2)
        self.B_mu = _mat(self.B_mu)
        self.B_Sigma = _mat(self.B_Sigma)
        self.L = int(self.L)
        self.validate()

    def validate(self):
        for name in ("a_alpha", "b_alpha", "b_lambda", "a_tau", "b_tau", "a_kappa", "a_rho", "b_rho"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not self.a_Sigma > 1:
            raise DomainError("a_Sigma must exceed 1")
        for name in ("B_mu", "B_Sigma"):
            m = getattr(self, name)
            if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
                raise DomainError(f"{name} must be symmetric positive definite")
        if self.L < 2:
            raise DomainError("truncation level L must be at least 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown prior keys: {sorted(unknown)}")
        return cls(**known)

    # Presets for the simulated populations ------------------------------

    @classmethod
    def regression_default(cls) -> "PriorConfig":
        """Priors used for the six-component regression population (L = 80)."""
        return cls()

    @classmethod
    def sim1_default(cls) -> "PriorConfig":
        """Priors for the first two-group Weibull study (L = 40)."""
        return cls(a_alpha=2.0, b_alpha=0.8, a_mu=[1.87, 0.25], B_mu=0.27 * np.eye(2),
                   a_Sigma=4.0, B_Sigma=0.27 * np.eye(2), L=40)

    @classmethod
    def sim2_default(cls) -> "PriorConfig":
        """Priors for the second two-group Weibull study (L = 40).

        The Sigma prior is not given for this study; the scale is set equal to
        the mu prior covariance with 4 degrees of freedom.
        """
        return cls(a_alpha=2.0, b_alpha=0.8, a_mu=[3.02, 0.54], B_mu=0.1 * np.eye(2),
                   a_Sigma=4.0, B_Sigma=0.1 * np.eye(2), L=40)

    def prior_means(self) -> dict:
        sigma = self.B_Sigma / (self.a_Sigma - 3.0) if self.a_Sigma > 3 else self.B_Sigma.copy()
        tau2 = self.b_tau / (self.a_tau - 1.0) if self.a_tau > 1 else self.b_tau
        return dict(mu=self.a_mu.copy(), sigma=sigma, lam=self.a_lambda, tau2=tau2,
                    rho=self.a_rho / self.b_rho, alpha=self.a_alpha / self.b_alpha)


# Name used throughout the docs for the single-group model
DpmmPriorConfig = PriorConfig


@dataclass
class McmcSettings:
    """Chain length, thinning and proposal tuning.

    ``iterations`` counts all sweeps including burn-in; draws are recorded
    every ``thinning`` sweeps after ``burn_in``. Proposal adaptation stops at
    ``adapt_until`` (defaults to ``burn_in``).

    ``proposal`` selects the (theta, phi) random walk: ``"sigma"`` uses
    ``c * S2`` with ``S2`` the running mean of Sigma draws during adaptation;
    ``"fisher"`` scales ``c`` times the inverse of the local gamma Fisher
    information plus the prior precision and applies the Hastings correction.
    """

    iterations: int = 5000
    burn_in: int = 1000
    thinning: int = 1
    c: float = 1.5
    adapt_until: Optional[int] = None
    seed: int = 0
    proposal: str = "fisher"

    def __post_init__(self):
        if self.adapt_until is None:
            self.adapt_until = self.burn_in
        self.validate()

    def validate(self):
        if self.iterations < 1 or self.burn_in < 0 or self.thinning < 1:
            raise ValueError("iterations >= 1, burn_in >= 0 and thinning >= 1 required")
        if not self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if not 0 <= self.adapt_until <= self.burn_in:
            raise ValueError("adapt_until must lie in [0, burn_in]")
        if not self.c > 0:
            raise ValueError("proposal scale c must be positive")
        if self.proposal not in ("fisher", "sigma"):
            raise ValueError("proposal must be 'fisher' or 'sigma'")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning

    def records(self, it: int) -> bool:
        k = it - self.burn_in + 1
        return k > 0 and k % self.thinning == 0

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------

class Prepared:
    """Column arrays in the form the block updates use."""

    def __init__(self, data: Optional[Dataset], pooled=False):
        if data is None:
            data = Dataset.empty()
        self.data = data
        self.t = data.time
        self.n = data.n
        self.cens = data.censored
        self.obs = ~data.censored
        with np.errstate(divide="ignore"):
            self.logt = np.log(self.t)
        self.x = data.covariate
        if pooled or data.group is None:
            self.groups = np.zeros(self.n, dtype=int)
        else:
            self.groups = data.group


def _prepare(data, pooled=False) -> Prepared:
    return data if isinstance(data, Prepared) else Prepared(data, pooled=pooled)


# ---------------------------------------------------------------------------
# Likelihood pieces
# ---------------------------------------------------------------------------

def _obs_loglik(theta, phi, d: Prepared, labels):
    """Per-observation log likelihood of the time given its component."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        a = np.exp(theta[labels])
        r = np.exp(phi[labels])
        ll = np.empty(d.n)
        o = d.obs
        ll[o] = a[o] * phi[labels][o] + (a[o] - 1.0) * d.logt[o] - r[o] * d.t[o] - special.gammaln(a[o])
        c = d.cens
        if np.any(c):
            ll[c] = log_gamma_survival(d.t[c], a[c], r[c])
    return ll


def _component_loglik(theta, phi, d: Prepared, labels, L):
    ll = _obs_loglik(theta, phi, d, labels)
    ll = np.where(np.isnan(ll), -np.inf, ll)
    out = np.bincount(labels, weights=ll, minlength=L) if d.n else np.zeros(L)
    # bincount turns -inf into nan when mixed with +inf; keep rejections explicit
    return np.where(np.isnan(out), -np.inf, out)


def loglik_matrix(state: MixtureState, d: Prepared, include_covariate=True):
    """(n, L) matrix of log kernel values, survival factor for censored rows."""
    a = np.exp(state.atoms.theta)
    r = np.exp(state.atoms.phi)
    out = np.empty((d.n, state.L))
    o = d.obs
    if np.any(o):
        out[o] = (a * state.atoms.phi - special.gammaln(a))[None, :] \
            + d.logt[o, None] * (a - 1.0)[None, :] - d.t[o, None] * r[None, :]
    c = d.cens
    if np.any(c):
        out[c] = log_gamma_survival(d.t[c, None], a[None, :], r[None, :])
    if include_covariate and d.x is not None:
        k = state.atoms.kappa2
        out += -0.5 * np.log(2 * np.pi * k)[None, :] - 0.5 * (d.x[:, None] - state.atoms.beta[None, :]) ** 2 / k[None, :]
    return out


def _log_mvn2(x, mean, prec, logdet_prec):
    dx = x - mean
    q = np.einsum("li,ij,lj->l", dx, prec, dx)
    return 0.5 * logdet_prec - np.log(2 * np.pi) - 0.5 * q


# ---------------------------------------------------------------------------
# (theta, phi) proposals
# ---------------------------------------------------------------------------

class AtomProposal:
    """Random-walk proposal for the gamma kernel parameters.

    Parameters
    ----------
    mode : {"fisher", "sigma"}
    c : float
        Scale multiplier.
    S2 : ndarray, optional
        Fixed proposal covariance for ``"sigma"`` mode; the current Sigma is used
        when it is ``None``.
    """

    THETA_CLIP = 30.0

    def __init__(self, mode="fisher", c=1.5, S2=None):
        self.mode = mode
        self.c = float(c)
        self.S2 = None if S2 is None else _mat(S2)

    def _precision(self, theta, counts, sigma_inv):
        a = np.exp(np.clip(theta, -self.THETA_CLIP, self.THETA_CLIP))
        n = counts.astype(float)
        p11 = n * a * a * special.polygamma(1, a) + sigma_inv[0, 0]
        p12 = -n * a + sigma_inv[0, 1]
        p22 = n * a + sigma_inv[1, 1]
        return p11, p12, p22

    def propose(self, theta, phi, counts, sigma, z):
        """Return proposed (theta, phi) and the log Hastings correction."""
        if self.mode == "sigma":
            cov = self.c * (sigma if self.S2 is None else self.S2)
            chol = np.linalg.cholesky(cov)
            step = z @ chol.T
            return theta + step[:, 0], phi + step[:, 1], np.zeros(theta.shape[0])
        sigma_inv = np.linalg.inv(sigma)
        p11, p12, p22 = self._precision(theta, counts, sigma_inv)
        det = p11 * p22 - p12 * p12
        # covariance c * P^-1, factorised directly
        c11 = self.c * p22 / det
        c12 = -self.c * p12 / det
        c22 = self.c * p11 / det
        l11 = np.sqrt(c11)
        l21 = c12 / l11
        l22 = np.sqrt(np.maximum(c22 - l21 * l21, 0.0))
        dth = l11 * z[:, 0]
        dph = l21 * z[:, 0] + l22 * z[:, 1]
        th_new, ph_new = theta + dth, phi + dph
        q11, q12, q22 = self._precision(th_new, counts, sigma_inv)
        det_new = q11 * q22 - q12 * q12
        quad_fwd = (p11 * dth * dth + 2 * p12 * dth * dph + p22 * dph * dph) / self.c
        quad_bwd = (q11 * dth * dth + 2 * q12 * dth * dph + q22 * dph * dph) / self.c
        log_h = 0.5 * (np.log(det_new) - np.log(det)) - 0.5 * (quad_bwd - quad_fwd)
        return th_new, ph_new, log_h


# ---------------------------------------------------------------------------
# Block updates
# ---------------------------------------------------------------------------

def update_atoms(state: MixtureState, data, rng, proposal: Optional[AtomProposal] = None, stats=None):
    """Update every component's (theta, phi, beta, kappa2).

    Unoccupied components are redrawn from the baseline. Occupied ones get a
    random-walk MH step for (theta, phi) and conjugate normal / inverse-gamma
    draws for (beta, kappa2). Observations from every group are pooled.
    """
    d = _prepare(data, pooled=True)
    gen = as_generator(rng, "atoms")
    proposal = proposal or AtomProposal()
    h = state.hyper
    at = state.atoms
    L = state.L
    labels = state.config
    counts = np.bincount(labels, minlength=L) if d.n else np.zeros(L, dtype=int)
    active = counts > 0

    chol = np.linalg.cholesky(h.sigma)
    fresh = h.mu + gen.standard_normal((L, 2)) @ chol.T
    z = gen.standard_normal((L, 2))
    log_u = np.log(gen.random(L))

    theta, phi = at.theta.copy(), at.phi.copy()
    if np.any(active):
        th_new, ph_new, log_h = proposal.propose(theta, phi, counts, h.sigma, z)
        prec = np.linalg.inv(h.sigma)
        logdet = -np.linalg.slogdet(h.sigma)[1]
        lp_cur = _log_mvn2(np.column_stack([theta, phi]), h.mu, prec, logdet)
        lp_new = _log_mvn2(np.column_stack([th_new, ph_new]), h.mu, prec, logdet)
        ll_cur = _component_loglik(theta, phi, d, labels, L)
        ll_new = _component_loglik(th_new, ph_new, d, labels, L)
        with np.errstate(invalid="ignore"):
            log_acc = ll_new + lp_new - ll_cur - lp_cur + log_h
        ok = active & np.isfinite(th_new) & np.isfinite(ph_new) & (log_u < np.nan_to_num(log_acc, nan=-np.inf))
        theta = np.where(ok, th_new, theta)
        phi = np.where(ok, ph_new, phi)
        if stats is not None:
            stats["atoms_accept"] = stats.get("atoms_accept", 0) + int(ok.sum())
            stats["atoms_tried"] = stats.get("atoms_tried", 0) + int(active.sum())
    theta = np.where(active, theta, fresh[:, 0])
    phi = np.where(active, phi, fresh[:, 1])

    # beta | kappa2 then kappa2 | beta; empty components reduce to the prior
    if d.x is not None and d.n:
        nx = counts.astype(float)
        sx = np.bincount(labels, weights=d.x, minlength=L)
    else:
        nx = np.zeros(L)
        sx = np.zeros(L)
    s2 = 1.0 / (1.0 / h.tau2 + nx / at.kappa2)
    m = s2 * (sx / at.kappa2 + h.lam / h.tau2)
    beta = m + np.sqrt(s2) * gen.standard_normal(L)
    if d.x is not None and d.n:
        ss = np.bincount(labels, weights=(d.x - beta[labels]) ** 2, minlength=L)
    else:
        ss = np.zeros(L)
    kappa2 = (h.rho + 0.5 * ss) / gen.gamma(h.a_kappa + 0.5 * nx)

    state.atoms = Atoms(theta, phi, beta, kappa2)
    return state


def sample_labels(log_p, gen):
    """Draw one categorical label per row of unnormalised log probabilities.

    Rows whose entries are all -inf fall back to uniform probabilities and are
    reported in the returned count.
    """
    n, L = log_p.shape
    u = gen.random(n)
    if n == 0:
        return np.zeros(0, dtype=int), 0
    mx = np.max(log_p, axis=1, keepdims=True)
    bad = ~np.isfinite(mx[:, 0])
    if np.any(bad):
        log_p = log_p.copy()
        log_p[bad] = 0.0
        mx[bad] = 0.0
    p = np.exp(log_p - mx)
    cum = np.cumsum(p, axis=1)
    labels = np.sum(cum <= (u * cum[:, -1])[:, None], axis=1)
    return np.minimum(labels, L - 1), int(bad.sum())


def update_config(state: MixtureState, data, rng):
    """Draw each observation's component label from its full conditional.

    Group-specific weights are used when the state carries more than one
    weight vector; censored times contribute the gamma survival function.
    """
    d = _prepare(data, pooled=state.n_groups == 1)
    gen = as_generator(rng, "config")
    ll = loglik_matrix(state, d)
    with np.errstate(divide="ignore"):
        logw = np.log(state.sticks.weights)
    log_p = logw[d.groups] + ll
    # when every weighted term underflows, drop the weights and use the likelihood alone
    mx = np.max(log_p, axis=1) if d.n else np.zeros(0)
    bad = ~np.isfinite(mx)
    if np.any(bad):
        log_p[bad] = ll[bad]
    state.config, _ = sample_labels(log_p, gen)
    return state


update_config_grouped = update_config


def update_weights(state: MixtureState, rng):
    """Conjugate stick update: 1 - zeta_l ~ Beta(1 + M_l, alpha + sum_{r>l} M_r)."""
    gen = as_generator(rng, "weights")
    M = cluster_counts(state)[0]
    after = np.cumsum(M[::-1])[::-1][1:]
    zeta = gen.beta(state.hyper.alpha + after, 1.0 + M[:-1])
    zeta = np.clip(zeta, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    state.sticks = StickState(zeta=zeta[None, :], weights=_stick_break(zeta[None, :]))
    return state


def update_alpha(state: MixtureState, rng, prior: PriorConfig, stats=None):
    """alpha ~ Gamma(a_alpha + L - 1, b_alpha - log p_L) with log p_L = sum log zeta."""
    gen = as_generator(rng, "alpha")
    log_pL = float(np.sum(np.log(state.sticks.zeta[0])))
    if not log_pL >= LOG_P_FLOOR:
        log_pL = LOG_P_FLOOR
        if stats is not None:
            stats["alpha_clamped"] = stats.get("alpha_clamped", 0) + 1
    state.hyper.alpha = float(gen.gamma(prior.a_alpha + state.L - 1, 1.0 / (prior.b_alpha - log_pL)))
    return state


def update_mu(state, prior, gen):
    h = state.hyper
    pts = np.column_stack([state.atoms.theta, state.atoms.phi])
    sig_inv = np.linalg.inv(h.sigma)
    b_inv = np.linalg.inv(prior.B_mu)
    cov = np.linalg.inv(b_inv + state.L * sig_inv)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (b_inv @ prior.a_mu + sig_inv @ pts.sum(axis=0))
    h.mu = mean + np.linalg.cholesky(cov) @ gen.standard_normal(2)


def update_sigma(state, prior, gen):
    h = state.hyper
    dev = np.column_stack([state.atoms.theta, state.atoms.phi]) - h.mu
    h.sigma = sample_inverse_wishart2(gen, state.L + prior.a_Sigma, prior.B_Sigma + dev.T @ dev)


def update_lambda(state, prior, gen):
    h = state.hyper
    s2 = 1.0 / (1.0 / prior.b_lambda + state.L / h.tau2)
    m = s2 * (prior.a_lambda / prior.b_lambda + state.atoms.beta.sum() / h.tau2)
    h.lam = float(m + np.sqrt(s2) * gen.standard_normal())


def update_tau2(state, prior, gen):
    h = state.hyper
    ss = np.sum((state.atoms.beta - h.lam) ** 2)
    h.tau2 = float((prior.b_tau + 0.5 * ss) / gen.gamma(prior.a_tau + 0.5 * state.L))


def update_rho(state, prior, gen):
    h = state.hyper
    rate = prior.b_rho + np.sum(1.0 / state.atoms.kappa2)
    h.rho = float(gen.gamma(h.a_kappa * state.L + prior.a_rho, 1.0 / rate))


def update_hypers(state: MixtureState, rng, prior: PriorConfig):
    """Conjugate draws for mu, Sigma, lambda, tau2 and rho, in that order."""
    gen = as_generator(rng, "hypers")
    update_mu(state, prior, gen)
    update_sigma(state, prior, gen)
    update_lambda(state, prior, gen)
    update_tau2(state, prior, gen)
    update_rho(state, prior, gen)
    return state


# ---------------------------------------------------------------------------
# Initialisation and the chain driver
# ---------------------------------------------------------------------------

def initialize_state(data, prior: PriorConfig, rng, n_groups=1) -> MixtureState:
    """Starting state: quantile-binned labels, moment-matched atoms, prior-mean hypers."""
    d = _prepare(data, pooled=n_groups == 1)
    gen = as_generator(rng, "init")
    pm = prior.prior_means()
    L = prior.L
    hyper = Hyperstate(mu=pm["mu"], sigma=pm["sigma"], lam=pm["lam"], tau2=pm["tau2"], rho=pm["rho"],
                       alpha=pm["alpha"], b=0.5, a_kappa=prior.a_kappa)
    chol = np.linalg.cholesky(hyper.sigma)
    tp = hyper.mu + gen.standard_normal((L, 2)) @ chol.T
    theta, phi = tp[:, 0].copy(), tp[:, 1].copy()
    beta = hyper.lam + np.sqrt(hyper.tau2) * gen.standard_normal(L)
    kappa2 = hyper.rho / gen.gamma(hyper.a_kappa, size=L)
    labels = np.zeros(d.n, dtype=int)
    K = min(5, L, d.n)
    if K > 0:
        edges = np.quantile(d.t, np.linspace(0, 1, K + 1)[1:-1])
        labels = np.searchsorted(edges, d.t, side="right").astype(int)
        for k in range(K):
            tk = d.t[labels == k]
            if tk.size == 0:
                continue
            m = tk.mean()
            v = tk.var()
            if tk.size >= 2 and v > 0:
                a, r = m * m / v, m / v
            else:
                a, r = 1.0, 1.0 / m
            theta[k], phi[k] = np.clip(np.log(a), -10, 10), np.clip(np.log(r), -20, 20)
            if d.x is not None:
                xk = d.x[labels == k]
                beta[k] = xk.mean()
                kappa2[k] = xk.var() if xk.size >= 2 and xk.var() > 0 else 1.0
    atoms = Atoms(theta, phi, beta, kappa2)
    state = MixtureState(atoms, StickState.from_zeta(np.full((n_groups, L - 1), 0.5)), labels, hyper)
    if n_groups == 1:
        update_weights(state, gen)
    return state


def _check_rates(meta):
    msgs = []
    for block, rate in meta["acceptance"].items():
        if rate is not None and not 0.1 <= rate <= 0.6:
            msg = f"{block} acceptance rate {rate:.3f} outside [0.1, 0.6]; consider retuning c"
            warnings.warn(msg, TuningWarning, stacklevel=3)
            msgs.append(msg)
    meta["warnings"] = msgs


def _rate(stats, key):
    tried = stats.get(f"{key}_tried", 0)
    return None if tried == 0 else stats.get(f"{key}_accept", 0) / tried


def run_chain(data, prior: Optional[PriorConfig] = None, settings: Optional[McmcSettings] = None,
              rng=None, progress=None) -> ChainOutput:
    """Run the single-group sampler and return the thinned post-burn-in draws.

    Each sweep updates atoms, labels, stick weights, alpha and the remaining
    hyperparameters. Group labels in ``data`` are ignored (pooled fit).

    Parameters
    ----------
    data : Dataset or None
        ``None`` (or an empty dataset) runs the prior-only chain.
    rng : RngHandle, optional
        Defaults to ``RngHandle(settings.seed)``.
    """
    prior = prior or PriorConfig()
    settings = settings or McmcSettings()
    data = data if data is not None else Dataset.empty()
    handle = rng if rng is not None else RngHandle(settings.seed)
    d = Prepared(data, pooled=True)
    state = initialize_state(d, prior, handle, n_groups=1)
    proposal = AtomProposal(settings.proposal, settings.c)
    sigma_sum, sigma_n = np.zeros((2, 2)), 0
    stats: dict = {}
    draws, n_active = [], []
    for it in range(settings.iterations):
        if settings.proposal == "sigma":
            proposal.S2 = sigma_sum / sigma_n if sigma_n else state.hyper.sigma
        update_atoms(state, d, handle, proposal, stats)
        update_config(state, d, handle)
        update_weights(state, handle)
        update_alpha(state, handle, prior, stats)
        update_hypers(state, handle, prior)
        if it < settings.adapt_until:
            sigma_sum += state.hyper.sigma
            sigma_n += 1
        if settings.records(it):
            draws.append(state.copy())
            n_active.append(int(np.unique(state.config).size))
        if progress is not None:
            progress(it)
    meta = _base_meta("dpmm", data, prior, settings, handle)
    meta["acceptance"] = {"atoms": _rate(stats, "atoms")}
    meta["alpha_clamped"] = stats.get("alpha_clamped", 0)
    meta["n_active"] = n_active
    _check_rates(meta)
    return ChainOutput(draws=draws, meta=meta)


def _base_meta(model, data, prior, settings, handle):
    return {
        "model": model,
        "seed": handle.seed,
        "rng_key": list(handle.key),
        "iterations": settings.iterations,
        "burn_in": settings.burn_in,
        "thinning": settings.thinning,
        "adapt_until": settings.adapt_until,
        "proposal": settings.proposal,
        "c": settings.c,
        "L": prior.L,
        "n": data.n,
        "has_covariate": data.has_covariate,
        "data_digest": data.digest(),
        "prior": prior.to_dict(),
    }
