"""Survival functionals of gamma-kernel mixture draws.

Every functional is a locally weighted mixture: component ``l`` gets weight
proportional to ``p_l N(x0 | beta_l, kappa2_l)`` (or ``p_l`` alone when no
covariate value is given). The mean residual life additionally reweights by
the component survival at ``t`` and combines closed-form gamma-kernel mrl
values, so no numerical integration is needed on the sampling path.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammainc, logsumexp

from .core import GROUPS, ChainOutput, MixtureState
from .distributions import DomainError, log_gamma_pdf, log_gamma_survival

DEFAULT_QUANTILES = (0.025, 0.5, 0.975)
TAIL_CUTOFF = 1e-8

KINDS = ("density", "survival", "hazard", "mrl", "mean_regression",
         "mrl_regression", "prob_mrl_order")


def group_index(group) -> int:
    if group is None:
        return 0
    if isinstance(group, str):
        return GROUPS.index(group)
    return int(group)


def _log_weights(draw: MixtureState, x0, group) -> np.ndarray:
    """Normalised log q_l(x0) for one draw."""
    p = draw.sticks.weights[group_index(group)]
    with np.errstate(divide="ignore"):
        lw = np.log(p)
    if x0 is not None:
        a = draw.atoms
        lw = lw - 0.5 * np.log(2 * np.pi * a.kappa2) - 0.5 * (x0 - a.beta) ** 2 / a.kappa2
    return lw - logsumexp(lw)


def _grid(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("times must be nonnegative")
    return t


def _log_kernel_terms(draw, t):
    """log density and log survival of every component at every t, shape (m, L)."""
    a = draw.atoms
    shape, rate = np.exp(a.theta), np.exp(a.phi)
    tt = np.atleast_1d(t)[:, None]
    with np.errstate(divide="ignore"):
        logf = np.where(tt > 0, log_gamma_pdf(np.where(tt > 0, tt, 1.0), shape, rate),
                        np.where(shape > 1, -np.inf, np.where(shape == 1, np.log(rate), np.inf)))
    logs = log_gamma_survival(tt, shape, rate)
    return logf, logs


def log_density_and_survival(draw, t, x0=None, group=None):
    t = _grid(t)
    lw = _log_weights(draw, x0, group)
    logf, logs = _log_kernel_terms(draw, t)
    log_surv = np.minimum(logsumexp(lw + logs, axis=1), 0.0)
    log_surv[np.atleast_1d(t) == 0] = 0.0
    return logsumexp(lw + logf, axis=1), log_surv


def conditional_density(draw: MixtureState, t, x0=None, group=None):
    """Mixture density f(t | x0) for one draw; ``x0=None`` gives the marginal."""
    lf, _ = log_density_and_survival(draw, t, x0, group)
    return _squeeze(np.exp(lf), t)


def conditional_survival(draw: MixtureState, t, x0=None, group=None):
    """Mixture survival S(t | x0) for one draw."""
    _, ls = log_density_and_survival(draw, t, x0, group)
    return _squeeze(np.exp(ls), t)


def conditional_hazard(draw: MixtureState, t, x0=None, group=None):
    lf, ls = log_density_and_survival(draw, t, x0, group)
    return _squeeze(np.exp(lf - ls), t)


def gamma_mrl(t, shape, rate):
    """Closed-form mean residual life of a Gamma(shape, rate) variable.

    ``m(t) = (a / r) Q(a + 1, r t) / Q(a, r t) - t`` with ``Q`` the upper
    regularised incomplete gamma function, evaluated in log space.
    """
    t = np.asarray(t, dtype=float)
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    log_ratio = log_gamma_survival(t, shape + 1.0, rate) - log_gamma_survival(t, shape, rate)
    return np.exp(np.log(shape) - np.log(rate) + log_ratio) - t


def _component_mrl(draw, tt):
    a = draw.atoms
    # exp(theta - phi) kept as one exponent so that m(0) equals the mean regression exactly
    shape = np.exp(a.theta)
    log_ratio = log_gamma_survival(tt, shape + 1.0, np.exp(a.phi)) - log_gamma_survival(tt, shape, np.exp(a.phi))
    return np.exp(a.theta - a.phi + log_ratio) - tt


def conditional_mrl(draw: MixtureState, t, x0=None, group=None, tail_cutoff=TAIL_CUTOFF):
    """Mean residual life as a survival-reweighted sum of kernel mrl values.

    Grid points where the mixture survival falls below ``tail_cutoff`` are
    returned as NaN; pass ``tail_cutoff=0`` to disable the guard.
    """
    t = _grid(t)
    tt = np.atleast_1d(t)[:, None]
    lw = _log_weights(draw, x0, group)
    logs = log_gamma_survival(tt, np.exp(draw.atoms.theta), np.exp(draw.atoms.phi))
    joint = lw + logs
    log_surv = logsumexp(joint, axis=1)
    q = np.exp(joint - log_surv[:, None])
    m = np.sum(q * _component_mrl(draw, tt), axis=1)
    if tail_cutoff > 0:
        m = np.where(log_surv < np.log(tail_cutoff), np.nan, m)
    return _squeeze(m, t)


def mean_regression(draw: MixtureState, x0=None, group=None):
    """E(T | x0) = sum_l q_l(x0) exp(theta_l - phi_l); vectorised over x0."""
    if x0 is None:
        return float(np.sum(np.exp(_log_weights(draw, None, group) + draw.atoms.theta - draw.atoms.phi)))
    xs = np.atleast_1d(np.asarray(x0, dtype=float))
    out = np.array([np.sum(np.exp(_log_weights(draw, x, group) + draw.atoms.theta - draw.atoms.phi))
                    for x in xs])
    return out if np.ndim(x0) else float(out[0])


def integrated_survival(draw: MixtureState, t, x0=None, group=None):
    """Closed form of int_0^t S(u | x0) du.

    Per component ``int_0^t Q(a, r u) du = t Q(a, r t) + (a / r) P(a + 1, r t)``.
    """
    t = _grid(t)
    tt = np.atleast_1d(t)[:, None]
    q = np.exp(_log_weights(draw, x0, group))
    a = draw.atoms
    shape, rate = np.exp(a.theta), np.exp(a.phi)
    comp = tt * np.exp(log_gamma_survival(tt, shape, rate)) + np.exp(a.theta - a.phi) * gammainc(shape + 1.0, rate * tt)
    return _squeeze(comp @ q, t)


def mrl_integral_form(draw: MixtureState, t, x0=None, group=None):
    """mrl as (E(T|x0) - int_0^t S) / S(t), the unweighted integral definition."""
    mean = mean_regression(draw, x0, group)
    return (mean - integrated_survival(draw, t, x0, group)) / conditional_survival(draw, t, x0, group)


def marginal_functionals(draw: MixtureState, t, group=None) -> dict:
    """Density, survival, hazard and mrl with the covariate factor removed."""
    lf, ls = log_density_and_survival(draw, t, None, group)
    return {
        "density": _squeeze(np.exp(lf), t),
        "survival": _squeeze(np.exp(ls), t),
        "hazard": _squeeze(np.exp(lf - ls), t),
        "mrl": conditional_mrl(draw, t, None, group),
    }


def inversion_survival(mrl, grid):
    """Survival from an mrl curve: S(t) = m(0)/m(t) exp(-int_0^t 1/m).

    The integral is accumulated with the trapezoid rule on ``grid``, which must
    start at 0.
    """
    m = np.asarray(mrl, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if np.any(~(m > 0)):
        raise DomainError("mrl must be strictly positive on the grid")
    if grid[0] != 0:
        raise DomainError("grid must start at 0")
    cum = integrate.cumulative_trapezoid(1.0 / m, grid, initial=0.0)
    return m[0] / m * np.exp(-cum)


def mrl_from_survival(survival_fn, t, upper=np.inf, tail=1e-10):
    """Numerical mrl int_t^inf S / S(t) for a survival function without a closed form.

    The upper integration limit is the first point where ``S < tail`` when
    ``upper`` is infinite.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if not np.isfinite(upper):
        hi = max(1.0, float(t.max()) if t.size else 1.0)
        while survival_fn(hi) > tail:
            hi *= 2.0
        upper = hi
    out = np.empty(t.shape)
    for i, ti in enumerate(t):
        s = survival_fn(ti)
        if s <= tail or ti >= upper:
            out[i] = np.nan
            continue
        val, _ = integrate.quad(survival_fn, ti, upper, limit=200, epsabs=0.0, epsrel=1e-10)
        out[i] = val / s
    return out


def _squeeze(values, t):
    return values if np.ndim(t) else float(values[0])


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------

@dataclass
class FunctionalRequest:
    """What to evaluate across the draws of a chain.

    Time-indexed kinds (density, survival, hazard, mrl) produce one curve per
    covariate value over ``time_grid``. ``mean_regression`` produces one curve
    over ``covariate_values``; ``mrl_regression`` one such curve per time in
    ``time_grid``.
    """

    kind: str
    time_grid: Optional[Sequence[float]] = None
    covariate_values: Optional[Sequence[float]] = None
    group: Optional[object] = None
    quantiles: Sequence[float] = DEFAULT_QUANTILES

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.time_grid is not None:
            self.time_grid = np.asarray(self.time_grid, dtype=float)
            if np.any(np.diff(self.time_grid) <= 0):
                raise ValueError("time grid must be strictly increasing")
            if np.any(self.time_grid < 0):
                raise ValueError("time grid must be nonnegative")
        if self.covariate_values is not None:
            self.covariate_values = np.atleast_1d(np.asarray(self.covariate_values, dtype=float))
        self.quantiles = tuple(float(q) for q in self.quantiles)
        if list(self.quantiles) != sorted(self.quantiles) or any(not 0 < q < 1 for q in self.quantiles):
            raise ValueError("quantiles must be sorted and inside (0, 1)")


@dataclass
class CurveSummary:
    """Pointwise posterior mean and quantile curves over ``grid``."""

    grid: np.ndarray
    mean: np.ndarray
    quantiles: dict = field(default_factory=dict)
    kind: str = ""
    covariate: Optional[float] = None
    group: Optional[str] = None
    time: Optional[float] = None

    def band(self, lo=0.025, hi=0.975):
        return self.quantiles[lo], self.quantiles[hi]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        levels = sorted(self.quantiles)
        w.writerow(["grid", "mean"] + [f"q_{q:g}" for q in levels])
        for i, g in enumerate(self.grid):
            row = [repr(float(g)), _fmt(self.mean[i])] + [_fmt(self.quantiles[q][i]) for q in levels]
            w.writerow(row)
        return buf.getvalue()

    def label(self) -> str:
        parts = [self.kind]
        if self.group is not None:
            parts.append(f"group{self.group}")
        if self.covariate is not None:
            parts.append(f"x{self.covariate:g}")
        if self.time is not None:
            parts.append(f"t{self.time:g}")
        return "_".join(parts)


def _fmt(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def curve_summary(values, grid, quantiles=DEFAULT_QUANTILES, **labels) -> CurveSummary:
    """Summarise a (n_draws, n_grid) array; NaN entries are ignored per point."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(values, axis=0)
        qs = {q: np.nanquantile(values, q, axis=0) for q in quantiles}
    return CurveSummary(grid=np.asarray(grid, dtype=float), mean=mean, quantiles=qs, **labels)


def evaluate(draw: MixtureState, kind, t=None, x0=None, group=None):
    """Evaluate one functional kind for a single draw."""
    if kind == "density":
        return conditional_density(draw, t, x0, group)
    if kind == "survival":
        return conditional_survival(draw, t, x0, group)
    if kind == "hazard":
        return conditional_hazard(draw, t, x0, group)
    if kind == "mrl":
        return conditional_mrl(draw, t, x0, group)
    if kind == "mean_regression":
        return mean_regression(draw, x0, group)
    if kind == "mrl_regression":
        return np.array([conditional_mrl(draw, float(t), x, group) for x in np.atleast_1d(x0)])
    raise ValueError(f"cannot evaluate {kind!r} on a single draw")


def summarize(chain: ChainOutput, req: FunctionalRequest) -> list:
    """Posterior curve summaries for a request, one :class:`CurveSummary` per curve."""
    draws = list(chain.draws if isinstance(chain, ChainOutput) else chain)
    if not draws:
        raise ValueError("cannot summarise an empty chain")
    g = req.group
    gname = None if g is None else (g if isinstance(g, str) else GROUPS[int(g)])
    if req.kind == "prob_mrl_order":
        x = None if req.covariate_values is None else float(req.covariate_values[0])
        prob = prob_mrl_order(draws, req.time_grid, x0=x)
        return [CurveSummary(grid=req.time_grid, mean=prob, quantiles={}, kind=req.kind, covariate=x)]
    if req.kind == "mean_regression":
        xs = req.covariate_values
        vals = np.array([mean_regression(d, xs, g) for d in draws])
        return [curve_summary(vals, xs, req.quantiles, kind=req.kind, group=gname)]
    if req.kind == "mrl_regression":
        out = []
        for t in req.time_grid:
            vals = np.array([evaluate(d, "mrl_regression", t, req.covariate_values, g) for d in draws])
            out.append(curve_summary(vals, req.covariate_values, req.quantiles,
                                     kind=req.kind, group=gname, time=float(t)))
        return out
    covs = [None] if req.covariate_values is None else [float(x) for x in req.covariate_values]
    out = []
    for x in covs:
        vals = np.array([evaluate(d, req.kind, req.time_grid, x, g) for d in draws])
        out.append(curve_summary(vals, req.time_grid, req.quantiles, kind=req.kind, covariate=x, group=gname))
    return out


def prob_mrl_order(chain, time_grid, x0=None):
    """Posterior fraction of draws with m_C(t) > m_T(t) at each grid point.

    Draws where either mrl is undefined (deep tail) are excluded pointwise.
    """
    draws = list(chain.draws if isinstance(chain, ChainOutput) else chain)
    t = np.asarray(time_grid, dtype=float)
    mc = np.array([conditional_mrl(d, t, x0, 0) for d in draws])
    mt = np.array([conditional_mrl(d, t, x0, 1) for d in draws])
    valid = np.isfinite(mc) & np.isfinite(mt)
    count = valid.sum(axis=0)
    hits = np.sum((mc > mt) & valid, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, hits / np.maximum(count, 1), np.nan)


def default_time_grid(chain, n=200, x0=None, group=None, level=0.995, max_draws=200):
    """Grid of ``n`` points from 0 to the ``level`` posterior-predictive quantile."""
    draws = list(chain.draws if isinstance(chain, ChainOutput) else chain)
    step = max(1, len(draws) // max_draws)
    sub = draws[::step]

    def excess(t):
        return np.mean([conditional_survival(d, t, x0, group) for d in sub]) - (1.0 - level)

    hi = max(np.mean([mean_regression(d, x0, group) for d in sub]), 1e-8)
    while excess(hi) > 0:
        hi *= 2.0
    upper = optimize.brentq(excess, 0.0, hi, xtol=1e-10 * hi)
    return np.linspace(0.0, upper, n)


def assert_finite_means(draw: MixtureState):
    """Kernel means exp(theta - phi) must be finite for the mixture mean to exist."""
    m = np.exp(draw.atoms.theta - draw.atoms.phi)
    if not np.all(np.isfinite(m)):
        raise DomainError("non-finite kernel mean in draw")
    return m
