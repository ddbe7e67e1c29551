"""Exponentiated-Weibull regression baseline.

Survival ``S(t | x) = 1 - [1 - exp(-t^alpha exp(beta0 + beta1 x))]^theta``
with a binary covariate ``x``. Posterior sampling is a four-dimensional
adaptive random walk on (log alpha, log theta, beta0, beta1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from .core import ChainOutput, Dataset, Observation
from .distributions import DomainError, RngHandle, as_generator
from .dpmm import McmcSettings, _check_rates
from .functionals import mrl_from_survival


@dataclass(frozen=True)
class EwmParams:
    alpha_w: float
    theta_w: float
    beta0: float
    beta1: float

    def __post_init__(self):
        if not (self.alpha_w > 0 and self.theta_w > 0):
            raise DomainError("alpha_w and theta_w must be positive")
        if not (np.isfinite(self.beta0) and np.isfinite(self.beta1)):
            raise DomainError("regression coefficients must be finite")

    def as_vector(self):
        """(log alpha, log theta, beta0, beta1), the sampler's scale."""
        return np.array([math.log(self.alpha_w), math.log(self.theta_w), self.beta0, self.beta1])

    @classmethod
    def from_vector(cls, z):
        return cls(math.exp(z[0]), math.exp(z[1]), float(z[2]), float(z[3]))


def _terms(alpha, theta, beta0, beta1, t, x):
    """log u = alpha log t + eta and log(1 - exp(-u))."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        log_u = alpha * np.log(t) + beta0 + beta1 * x
    u = np.exp(log_u)
    with np.errstate(divide="ignore"):
        log_f_weib = np.log(-np.expm1(-u))
    return log_u, u, log_f_weib


def _log_survival(alpha, theta, beta0, beta1, t, x):
    _, _, log_fw = _terms(alpha, theta, beta0, beta1, t, x)
    with np.errstate(divide="ignore"):
        return np.log1p(-np.exp(theta * log_fw))


def _log_density(alpha, theta, beta0, beta1, t, x):
    log_u, u, log_fw = _terms(alpha, theta, beta0, beta1, t, x)
    with np.errstate(divide="ignore", invalid="ignore"):
        return math.log(theta) + math.log(alpha) - np.log(t) + log_u + (theta - 1.0) * log_fw - u


def _check_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(~np.isfinite(t)):
        raise DomainError("times must be finite and nonnegative")
    return t


def ewm_survival(p: EwmParams, t, x=0):
    """Survival function at ``t`` for covariate ``x``."""
    t = _check_t(t)
    return np.exp(_log_survival(p.alpha_w, p.theta_w, p.beta0, p.beta1, t, x))


def ewm_density(p: EwmParams, t, x=0):
    t = _check_t(t)
    return np.exp(_log_density(p.alpha_w, p.theta_w, p.beta0, p.beta1, t, x))


def ewm_hazard(p: EwmParams, t, x=0):
    t = _check_t(t)
    a = (p.alpha_w, p.theta_w, p.beta0, p.beta1)
    return np.exp(_log_density(*a, t, x) - _log_survival(*a, t, x))


def ewm_mrl(p: EwmParams, t, x=0, tail=1e-10):
    """Mean residual life by quadrature of the survival function."""
    return mrl_from_survival(lambda u: float(ewm_survival(p, u, x)), t, tail=tail)


def ewm_mrl_grid(p: EwmParams, grid, x=0, tail=1e-10, n_fine=8001):
    """Mean residual life over a whole grid from one cumulative integral.

    The survival is integrated by the trapezoid rule on a fine grid that
    runs to the point where ``S < tail``; points past it are NaN.
    """
    grid = _check_t(np.atleast_1d(grid))
    hi = max(1.0, float(grid.max()))
    while float(ewm_survival(p, hi, x)) > tail:
        hi *= 2.0
    fine = np.union1d(grid, np.linspace(0.0, hi, n_fine))
    s = ewm_survival(p, fine, x)
    cum = integrate.cumulative_trapezoid(s, fine, initial=0.0)
    idx = np.searchsorted(fine, grid)
    sg = s[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sg > tail, (cum[-1] - cum[idx]) / sg, np.nan)


def ewm_functional(p: EwmParams, kind: str, t, x=0):
    fns = {"density": ewm_density, "survival": ewm_survival, "hazard": ewm_hazard, "mrl": ewm_mrl_grid}
    if kind not in fns:
        raise DomainError(f"functional {kind!r} is not available for the exponentiated Weibull")
    return fns[kind](p, t, x)


def ewm_loglik_terms(p: EwmParams, t, censored, x):
    """Per-row log likelihood: log density or, for censored rows, log survival."""
    a = (p.alpha_w, p.theta_w, p.beta0, p.beta1)
    return np.where(np.asarray(censored, dtype=bool), _log_survival(*a, t, x), _log_density(*a, t, x))


def ewm_log_likelihood(p: EwmParams, obs: Observation) -> float:
    x = obs.covariate if obs.covariate is not None else (obs.group or 0)
    return float(ewm_loglik_terms(p, [obs.time], [obs.censored], [x])[0])


# priors ----------------------------------------------------------------


@dataclass
class EwmPriors:
    """Normal priors on beta0, beta1 and exponential priors on alpha, theta (rates)."""

    beta0_mean: float = -10.0
    beta0_sd: float = 10.0
    beta1_mean: float = 0.0
    beta1_sd: float = 10.0
    alpha_rate: float = 1.0 / 1.1
    theta_rate: float = 1.0 / 0.9
    elicited: bool = False
    note: str = ""

    def __post_init__(self):
        if min(self.beta0_sd, self.beta1_sd, self.alpha_rate, self.theta_rate) <= 0:
            raise DomainError("prior spreads and rates must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown EWM prior keys: {sorted(unknown)}")
        return cls(**d)

    def log_density(self, z) -> float:
        """Log prior on the sampler scale, Jacobian of the log transforms included."""
        la, lt, b0, b1 = z
        return (-self.alpha_rate * math.exp(la) + la - self.theta_rate * math.exp(lt) + lt
                - 0.5 * ((b0 - self.beta0_mean) / self.beta0_sd) ** 2
                - 0.5 * ((b1 - self.beta1_mean) / self.beta1_sd) ** 2)

    def sample(self, rng, size):
        gen = as_generator(rng, "ewm")
        return np.column_stack([
            gen.exponential(1.0 / self.alpha_rate, size), gen.exponential(1.0 / self.theta_rate, size),
            gen.normal(self.beta0_mean, self.beta0_sd, size), gen.normal(self.beta1_mean, self.beta1_sd, size)])


def _g(p, theta):
    """log(-log(1 - p^(1/theta))), the value of alpha log q + beta0 at the p-quantile."""
    x = math.log(p) / theta
    if x < -30.0:
        # -log(1 - e^x) = e^x (1 + e^x / 2 + ...)
        return x + 0.5 * math.exp(x)
    return math.log(-math.log1p(-math.exp(x)))


def quantile_solution(q10, q50, q90, log_theta_bounds=(-8.0, 8.0)):
    """(alpha, theta, beta0) at x = 0 matching three quantiles, or None.

    For fixed theta the 10% and 90% equations are linear in (alpha, beta0);
    the median equation then fixes theta by a bracketing root search.
    """
    lq = np.log([q10, q50, q90])

    def ab(theta):
        alpha = (_g(0.9, theta) - _g(0.1, theta)) / (lq[2] - lq[0])
        return alpha, _g(0.1, theta) - alpha * lq[0]

    def resid(log_theta):
        theta = math.exp(log_theta)
        alpha, beta0 = ab(theta)
        return alpha * lq[1] + beta0 - _g(0.5, theta)

    lo, hi = log_theta_bounds
    grid = np.linspace(lo, hi, 161)
    vals = np.array([resid(v) for v in grid])
    sign = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if sign.size == 0:
        return None
    k = sign[0]
    lt = optimize.brentq(resid, grid[k], grid[k + 1], xtol=1e-14, rtol=1e-14)
    theta = math.exp(lt)
    alpha, beta0 = ab(theta)
    if alpha <= 0:
        return None
    return alpha, theta, beta0


def elicit_priors(q10: float, q50: float, q90: float, base: Optional[EwmPriors] = None) -> EwmPriors:
    """Priors centred at the EWM that reproduces three quantiles of the times.

    The prior means of alpha, theta and beta0 are set to the solution; the
    spreads of ``base`` (default: sd 10 for the coefficients) are kept. When
    no solution exists the base priors are returned with a note.
    """
    if not (0 < q10 < q50 < q90):
        raise DomainError("quantiles must satisfy 0 < q10 < q50 < q90")
    base = base or EwmPriors()
    sol = quantile_solution(q10, q50, q90)
    if sol is None:
        out = EwmPriors(**{**base.to_dict(), "elicited": False,
                           "note": "no exponentiated Weibull matches the quantiles; default prior means kept"})
        return out
    alpha, theta, beta0 = sol
    return EwmPriors(**{**base.to_dict(), "beta0_mean": beta0, "alpha_rate": 1.0 / alpha,
                        "theta_rate": 1.0 / theta, "elicited": True, "note": ""})


def covariate_of(data: Dataset) -> np.ndarray:
    """The binary regressor: group code when present, else the covariate column."""
    if data.group is not None:
        return data.group.astype(float)
    if data.covariate is not None:
        x = data.covariate
        if data.n and not np.all(np.isin(x, (0.0, 1.0))):
            raise DomainError("the exponentiated Weibull regression expects x in {0, 1}")
        return x.astype(float)
    return np.zeros(data.n)


# sampler ---------------------------------------------------------------


class AdaptiveProposal:
    """Random-walk covariance learned from the chain and frozen after burn-in.

    The shape is the running empirical covariance scaled by 2.38^2 / d; a
    global scale is driven toward ``target`` acceptance.
    """

    def __init__(self, d=4, init_sd=0.1, min_history=200, target=0.234):
        self.d = d
        self.cov0 = init_sd ** 2 * np.eye(d)
        self.min_history = min_history
        self.target = target
        self.log_scale = 0.0
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))
        self.frozen = False
        self._chol = np.linalg.cholesky(self.cov0)

    @property
    def cov(self):
        if self.n >= self.min_history:
            emp = self.m2 / (self.n - 1)
            base = 2.38 ** 2 / self.d * (emp + 1e-10 * np.eye(self.d))
        else:
            base = self.cov0
        return math.exp(2.0 * self.log_scale) * base

    def step(self, gen):
        return self._chol @ gen.standard_normal(self.d)

    def record(self, z, accepted):
        if self.frozen:
            return
        self.n += 1
        delta = z - self.mean
        self.mean += delta / self.n
        self.m2 += np.outer(delta, z - self.mean)
        self.log_scale += (float(accepted) - self.target) / self.n ** 0.6
        self._chol = np.linalg.cholesky(self.cov)

    def freeze(self):
        self.frozen = True


def _log_target(z, t, cens, x, priors):
    if not np.all(np.isfinite(z)) or abs(z[0]) > 50 or abs(z[1]) > 50:
        return -np.inf
    ll = ewm_loglik_terms(EwmParams.from_vector(z), t, cens, x)
    total = float(np.sum(ll)) if ll.size else 0.0
    if np.isnan(total):
        return -np.inf
    return total + priors.log_density(z)


def run_chain_ewm(data: Optional[Dataset], priors: Optional[EwmPriors] = None,
                  settings: Optional[McmcSettings] = None, rng=None, init: Optional[EwmParams] = None,
                  progress=None) -> ChainOutput:
    """Random-walk Metropolis-Hastings for the EWM regression."""
    data = data if data is not None else Dataset.empty()
    priors = priors or EwmPriors()
    settings = settings or McmcSettings()
    handle = rng if rng is not None else RngHandle(settings.seed)
    gen = as_generator(handle, "ewm")
    t, cens, x = data.time, data.censored, covariate_of(data)
    if init is None:
        init = EwmParams(1.0 / priors.alpha_rate, 1.0 / priors.theta_rate, priors.beta0_mean, priors.beta1_mean)
    z = init.as_vector()
    lp = _log_target(z, t, cens, x, priors)
    if not np.isfinite(lp):
        raise DomainError("initial EWM parameters have zero posterior density")
    prop = AdaptiveProposal()
    draws, accepted = [], 0
    for it in range(settings.iterations):
        if it == settings.adapt_until:
            prop.freeze()
        cand = z + prop.step(gen)
        lp_c = _log_target(cand, t, cens, x, priors)
        ok = math.log(gen.random()) < lp_c - lp
        if ok:
            z, lp = cand, lp_c
            accepted += 1
        if it < settings.adapt_until:
            prop.record(z, ok)
        if settings.records(it):
            draws.append(EwmParams.from_vector(z))
        if progress is not None:
            progress(it)
    meta = {
        "model": "ewm",
        "seed": handle.seed if isinstance(handle, RngHandle) else None,
        "rng_key": list(handle.key) if isinstance(handle, RngHandle) else None,
        "iterations": settings.iterations,
        "burn_in": settings.burn_in,
        "thinning": settings.thinning,
        "adapt_until": settings.adapt_until,
        "n": data.n,
        "data_digest": data.digest(),
        "prior": priors.to_dict(),
        "acceptance": {"ewm": accepted / settings.iterations},
        "proposal_cov": prop.cov.tolist(),
    }
    _check_rates(meta)
    return ChainOutput(draws=draws, meta=meta)
