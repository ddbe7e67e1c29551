"""Two-group dependent DP mixture with common atoms and coupled stick fractions.

Both groups share the kernel parameters; group C uses fractions ``U_l W_l``
and group T uses ``V_l W_l`` with independent
``U, V ~ Beta(alpha, 1 - b)`` and ``W ~ Beta(1 + alpha - b, b)``. The stick
fractions are updated through slice variables that turn every full
conditional into a truncated beta, and (alpha, b) are updated jointly by a
random walk on (log alpha, logit b).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .core import ChainOutput, Dataset, StickState, _stick_break, cluster_counts
from .distributions import DomainError, RngHandle, as_generator, sample_kotz_bivariate_beta, sample_truncated_beta
from .dpmm import (
    AtomProposal,
    McmcSettings,
    Prepared,
    PriorConfig,
    _base_meta,
    _check_rates,
    _prepare,
    _rate,
    initialize_state,
    update_atoms,
    update_config,
    update_hypers,
)


@dataclass
class SliceLatents:
    """Slice variables of the last stick update (log scale to avoid underflow)."""

    log_nu: np.ndarray
    log_gamma: np.ndarray

    @property
    def nu(self):
        return np.exp(self.log_nu)

    @property
    def gamma(self):
        return np.exp(self.log_gamma)


def update_shared_atoms(state, data, rng, proposal: Optional[AtomProposal] = None, stats=None):
    """Atom update with both groups' observations pooled in every likelihood."""
    return update_atoms(state, data, rng, proposal, stats)


def update_config_grouped(state, data, rng):
    """Label update using each observation's own group weights."""
    return update_config(state, data, rng)


def _tail_counts(M):
    """sum_{r>l} M_r for l = 0..L-2."""
    return np.cumsum(M[::-1])[::-1][1:]


def slice_bound(log_slice, M, other):
    """Upper truncation point (1 - exp(log_slice / M)) / other, clipped to 1.

    ``M = 0`` imposes no constraint and yields 1.
    """
    M = np.asarray(M, dtype=float)
    safe = np.where(M > 0, M, 1.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        bound = -np.expm1(np.asarray(log_slice) / safe) / other
    return np.where(M > 0, np.minimum(bound, 1.0), 1.0)


def update_zeta_slice(state, data, rng, return_latents=False):
    """Slice-sampling update of (U_l, V_l, W_l) for every l < L.

    The L - 1 triples are conditionally independent given the counts, so the
    whole vector is updated at once; this is equivalent in distribution to
    scanning l in index order.
    """
    d = _prepare(data)
    gen = as_generator(rng, "zeta")
    h = state.hyper
    M = cluster_counts(state, d.groups)
    MC, MT = M[0, :-1], M[1, :-1]
    after_c, after_t = _tail_counts(M[0]), _tail_counts(M[1])
    U, V, W = (state.sticks.latent_uvw[:, k].copy() for k in range(3))
    Lm = U.shape[0]

    log_nu = np.log(gen.random(Lm)) + MC * np.log1p(-U * W)
    log_ga = np.log(gen.random(Lm)) + MT * np.log1p(-V * W)

    U = sample_truncated_beta(gen, after_c + h.alpha, 1.0 - h.b, 0.0, slice_bound(log_nu, MC, W))
    V = sample_truncated_beta(gen, after_t + h.alpha, 1.0 - h.b, 0.0, slice_bound(log_ga, MT, W))
    m_star = np.minimum(slice_bound(log_nu, MC, U), slice_bound(log_ga, MT, V))
    W = sample_truncated_beta(gen, after_c + after_t + h.alpha + 1.0 - h.b, h.b, 0.0, m_star)

    zeta = np.vstack([U * W, V * W])
    state.sticks = StickState(zeta=zeta, weights=_stick_break(zeta), latent_uvw=np.column_stack([U, V, W]))
    if return_latents:
        return state, SliceLatents(log_nu, log_ga)
    return state


def _beta_logpdf(x, a, b):
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - special.betaln(a, b)


def log_target_alpha_b(alpha, b, uvw, prior: PriorConfig):
    """Log full conditional of (alpha, b) on the (log alpha, logit b) scale.

    Gamma(a_alpha, b_alpha) prior on alpha, uniform prior on b, beta densities
    of the latent triples and the Jacobian alpha * b * (1 - b).
    """
    if not (alpha > 0 and 0 < b < 1):
        return -np.inf
    U, V, W = uvw[:, 0], uvw[:, 1], uvw[:, 2]
    lp = (prior.a_alpha - 1.0) * np.log(alpha) - prior.b_alpha * alpha
    lp += np.sum(_beta_logpdf(U, alpha, 1.0 - b) + _beta_logpdf(V, alpha, 1.0 - b)
                 + _beta_logpdf(W, 1.0 + alpha - b, b))
    return float(lp + np.log(alpha) + np.log(b) + np.log1p(-b))


def alpha_b_log_ratio(state, alpha_new, b_new, prior: PriorConfig):
    """Log MH acceptance ratio for moving (alpha, b) to the proposed values."""
    uvw = state.sticks.latent_uvw
    return log_target_alpha_b(alpha_new, b_new, uvw, prior) - log_target_alpha_b(
        state.hyper.alpha, state.hyper.b, uvw, prior)


class AlphaBProposal:
    """Adaptive bivariate normal random walk on (log alpha, logit b).

    During adaptation the shape is the empirical covariance of the visited
    points (once ``min_history`` are available) and a global log-scale is
    nudged toward ``target`` acceptance with decreasing steps. Both stay fixed
    after :meth:`freeze`.
    """

    def __init__(self, cov=None, min_history=200, every=50, target=0.3):
        self.base = np.diag([0.3 ** 2, 0.6 ** 2]) if cov is None else np.asarray(cov, dtype=float)
        self.log_scale = 0.0
        self.min_history = min_history
        self.every = every
        self.target = target
        self.history = []
        self.n_adapt = 0
        self.frozen = False

    @property
    def cov(self):
        return np.exp(2.0 * self.log_scale) * self.base

    def record(self, alpha, b, accepted):
        if self.frozen:
            return
        self.n_adapt += 1
        self.log_scale += (float(accepted) - self.target) / self.n_adapt ** 0.6
        self.history.append((np.log(alpha), special.logit(b)))
        k = len(self.history)
        if k >= self.min_history and k % self.every == 0:
            # drop the first half as transient
            emp = np.cov(np.asarray(self.history[k // 2:]).T)
            self.base = emp + 1e-8 * np.eye(2)

    def freeze(self):
        self.frozen = True
        self.history = []


def update_alpha_b(state, rng, prior: PriorConfig, proposal: Optional[AlphaBProposal] = None, stats=None):
    """Joint MH step for (alpha, b) given the latent (U, V, W)."""
    gen = as_generator(rng, "alpha_b")
    proposal = proposal or AlphaBProposal()
    h = state.hyper
    step = np.linalg.cholesky(proposal.cov) @ gen.standard_normal(2)
    log_u = np.log(gen.random())
    alpha_new = float(np.exp(np.log(h.alpha) + step[0]))
    b_new = float(special.expit(special.logit(h.b) + step[1]))
    accept = 0.0 < b_new < 1.0 and alpha_new > 0 and log_u < alpha_b_log_ratio(state, alpha_new, b_new, prior)
    if accept:
        h.alpha, h.b = alpha_new, b_new
    if stats is not None:
        stats["alpha_b_last"] = bool(accept)
        stats["alpha_b_tried"] = stats.get("alpha_b_tried", 0) + 1
        stats["alpha_b_accept"] = stats.get("alpha_b_accept", 0) + int(accept)
    return state


def initialize_ddp_state(data, prior: PriorConfig, rng):
    d = _prepare(data)
    state = initialize_state(d, prior, rng, n_groups=2)
    gen = as_generator(rng, "init")
    k = sample_kotz_bivariate_beta(gen, state.hyper.alpha, state.hyper.b, size=prior.L - 1)
    zeta = np.vstack([k.zeta_c, k.zeta_t])
    state.sticks = StickState(zeta=zeta, weights=_stick_break(zeta), latent_uvw=np.column_stack([k.u, k.v, k.w]))
    return state


def _two_group(data):
    data = data if data is not None else Dataset.empty(groups=True)
    if data.group is None:
        if data.n:
            raise DomainError("the two-group model needs a group label for every row")
        data = Dataset(data.time, data.censored, data.covariate, np.zeros(0, dtype=int))
    return data


def run_chain_ddp(data, prior: Optional[PriorConfig] = None, settings: Optional[McmcSettings] = None,
                  rng=None, progress=None) -> ChainOutput:
    """Run the two-group sampler.

    Each sweep updates shared atoms, grouped labels, the stick fractions via
    slice sampling, (alpha, b) and the remaining hyperparameters.
    """
    prior = prior or PriorConfig.sim1_default()
    settings = settings or McmcSettings()
    data = _two_group(data)
    handle = rng if rng is not None else RngHandle(settings.seed)
    d = Prepared(data)
    state = initialize_ddp_state(d, prior, handle)
    atom_prop = AtomProposal(settings.proposal, settings.c)
    ab_prop = AlphaBProposal()
    sigma_sum, sigma_n = np.zeros((2, 2)), 0
    stats: dict = {}
    draws, n_active = [], []
    for it in range(settings.iterations):
        if settings.proposal == "sigma":
            atom_prop.S2 = sigma_sum / sigma_n if sigma_n else state.hyper.sigma
        if it == settings.adapt_until:
            ab_prop.freeze()
        update_shared_atoms(state, d, handle, atom_prop, stats)
        update_config_grouped(state, d, handle)
        update_zeta_slice(state, d, handle)
        update_alpha_b(state, handle, prior, ab_prop, stats)
        update_hypers(state, handle, prior)
        if it < settings.adapt_until:
            sigma_sum += state.hyper.sigma
            sigma_n += 1
            ab_prop.record(state.hyper.alpha, state.hyper.b, stats["alpha_b_last"])
        if settings.records(it):
            draws.append(state.copy())
            n_active.append(int(np.unique(state.config).size))
        if progress is not None:
            progress(it)
    meta = _base_meta("ddpmm", data, prior, settings, handle)
    meta["acceptance"] = {"atoms": _rate(stats, "atoms"), "alpha_b": _rate(stats, "alpha_b")}
    meta["alpha_b_proposal_cov"] = ab_prop.cov.tolist()
    meta["n_active"] = n_active
    _check_rates(meta)
    return ChainOutput(draws=draws, meta=meta)
