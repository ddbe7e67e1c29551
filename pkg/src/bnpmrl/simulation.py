"""Synthetic populations, their exact functionals and censoring mechanisms.

Three scenarios are provided: a six-component gamma x normal joint
population of (time, covariate) pairs and two pairs of Weibull mixtures for
two-group comparisons. Weibull components use (shape, scale) with survival
``exp(-(t / scale) ** shape)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .core import Dataset
from .distributions import DomainError, as_generator, log_gamma_pdf, log_gamma_survival

FAMILIES = ("gamma_normal", "weibull")


class ConfigError(ValueError):
    """Invalid simulation or censoring configuration."""


@dataclass(frozen=True)
class MixturePopulation:
    """Finite mixture with one family shared by all components.

    ``gamma_normal``: ``shape``, ``rate`` of the gamma time kernel and
    ``mean``, ``sd`` of the normal covariate kernel. ``weibull``: ``shape``
    and ``scale``; ``mean`` and ``sd`` stay ``None``.
    """

    family: str
    weights: tuple
    shape: tuple
    rate: Optional[tuple] = None
    scale: Optional[tuple] = None
    mean: Optional[tuple] = None
    sd: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        need = ("shape", "rate", "mean", "sd") if self.family == "gamma_normal" else ("shape", "scale")
        for name in need:
            v = getattr(self, name)
            if v is None or len(v) != w.size:
                raise ConfigError(f"{name} must have one entry per component")
            if name != "mean" and np.any(np.asarray(v, dtype=float) <= 0):
                raise ConfigError(f"{name} must be positive")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def has_covariate(self) -> bool:
        return self.family == "gamma_normal"

    def sample(self, rng, n: int):
        """Draw ``n`` times (and covariates for the joint family)."""
        gen = as_generator(rng, "simulate")
        lab = gen.choice(self.n_components, size=n, p=np.asarray(self.weights, dtype=float))
        shape = np.asarray(self.shape, dtype=float)[lab]
        if self.family == "weibull":
            return np.asarray(self.scale, dtype=float)[lab] * gen.weibull(shape), None, lab
        t = gen.gamma(shape) / np.asarray(self.rate, dtype=float)[lab]
        x = gen.normal(np.asarray(self.mean, dtype=float)[lab], np.asarray(self.sd, dtype=float)[lab])
        return t, x, lab


def weibull(weights, shapes, scales) -> MixturePopulation:
    return MixturePopulation("weibull", tuple(weights), tuple(shapes), scale=tuple(scales))


REGRESSION_POPULATION = MixturePopulation(
    "gamma_normal",
    weights=(0.28, 0.1, 0.25, 0.21, 0.11, 0.05),
    shape=(45.0, 3.0, 125.0, 0.4, 0.5, 4.0),
    rate=(3.0, 0.2, 3.8, 0.2, 0.3, 5.0),
    mean=(-12.0, -8.0, 0.0, 12.0, 18.0, 21.0),
    sd=(6.0, 5.0, 4.0, 5.0, 3.0, 2.0),
)

SIM1_POPULATIONS = (
    weibull((0.7, 0.1, 0.05, 0.15), (2.0, 3.0, 4.0, 8.0), (8.0, 10.0, 30.0, 40.0)),
    weibull((0.5, 0.05, 0.025, 0.425), (2.0, 3.0, 4.0, 8.0), (8.0, 10.0, 30.0, 40.0)),
)

SIM2_POPULATIONS = (
    weibull((0.5, 0.05, 0.025, 0.425), (2.0, 0.6, 5.0, 8.0), (4.0, 4.0, 15.0, 30.0)),
    weibull((0.02, 0.02, 0.66, 0.2, 0.1), (0.6, 2.0, 5.0, 2.0, 4.0), (1.0, 4.0, 15.0, 8.0, 30.0)),
)


def _check_size(*sizes):
    for n in sizes:
        if int(n) != n or n < 1:
            raise ConfigError(f"sample sizes must be positive integers, got {n}")


def gen_regression_population(rng, n: int = 1500) -> Dataset:
    """Uncensored (time, covariate) pairs from the six-component joint mixture."""
    _check_size(n)
    t, x, _ = REGRESSION_POPULATION.sample(rng, int(n))
    return Dataset(t, np.zeros(int(n), dtype=bool), x, None)


def _two_group(rng, pops, n_c, n_t) -> Dataset:
    _check_size(n_c, n_t)
    tc, _, _ = pops[0].sample(rng, int(n_c))
    tt, _, _ = pops[1].sample(rng, int(n_t))
    t = np.concatenate([tc, tt])
    g = np.repeat([0, 1], [int(n_c), int(n_t)])
    return Dataset(t, np.zeros(t.size, dtype=bool), None, g)


def gen_sim1(rng, n_c: int = 250, n_t: int = 100) -> Dataset:
    """Two uncensored groups from the first pair of Weibull mixtures."""
    return _two_group(rng, SIM1_POPULATIONS, n_c, n_t)


def gen_sim2(rng, n_c: int = 250, n_t: int = 250) -> Dataset:
    """Two uncensored groups from the second pair of Weibull mixtures."""
    return _two_group(rng, SIM2_POPULATIONS, n_c, n_t)


SCENARIOS = {
    "regression": (gen_regression_population, (REGRESSION_POPULATION,), {"n": 1500}),
    "sim1": (gen_sim1, SIM1_POPULATIONS, {"n_c": 250, "n_t": 100}),
    "sim2": (gen_sim2, SIM2_POPULATIONS, {"n_c": 250, "n_t": 250}),
}


def scenario(name: str):
    """Generator, populations and default sizes of a named scenario."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[name]


# exact functionals --------------------------------------------------------


def _component_terms(pop: MixturePopulation, t):
    """Per-component log density, log survival and mrl, shape (len(t), K)."""
    tt = np.asarray(t, dtype=float)[:, None]
    shape = np.asarray(pop.shape, dtype=float)[None, :]
    if pop.family == "gamma_normal":
        rate = np.asarray(pop.rate, dtype=float)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            log_f = log_gamma_pdf(tt, shape, rate)
            log_s = log_gamma_survival(tt, shape, rate)
            log_ratio = log_gamma_survival(tt, shape + 1.0, rate) - log_s
            mrl = np.exp(np.log(shape / rate) + log_ratio) - tt
        return log_f, log_s, mrl
    scale = np.asarray(pop.scale, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (tt / scale) ** shape
        log_f = np.log(shape / scale) + (shape - 1.0) * np.log(tt / scale) - z
        log_s = -z
        # int_t^inf S = scale * Gamma(1 + 1/k) * Q(1/k, z)
        log_tail = np.log(scale) + special.gammaln(1.0 + 1.0 / shape) + log_gamma_survival(z, 1.0 / shape, 1.0)
        mrl = np.exp(log_tail - log_s)
    return log_f, log_s, mrl


def _log_weights(pop: MixturePopulation, x0):
    lw = np.log(np.asarray(pop.weights, dtype=float))
    if x0 is not None:
        if not pop.has_covariate:
            raise DomainError("this population has no covariate")
        m, s = np.asarray(pop.mean, dtype=float), np.asarray(pop.sd, dtype=float)
        lw = lw - 0.5 * ((x0 - m) / s) ** 2 - np.log(s)
        lw = lw - special.logsumexp(lw)
    return lw


def true_functionals(pop: MixturePopulation, t, x0: Optional[float] = None) -> dict:
    """Exact density, survival, hazard and mrl of a population on a time grid.

    With ``x0`` the joint family is conditioned on the covariate. The mrl is
    NaN where every component's survival underflows.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise DomainError("times must be nonnegative")
    lw = _log_weights(pop, x0)
    log_f, log_s, mrl = _component_terms(pop, t)
    log_dens = special.logsumexp(lw + log_f, axis=1)
    log_surv = np.minimum(special.logsumexp(lw + log_s, axis=1), 0.0)
    log_surv = np.where(t == 0, 0.0, log_surv)
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.exp(lw + log_s - log_surv[:, None])
        m = np.where(np.isfinite(log_surv), np.sum(np.where(post > 0, post * mrl, 0.0), axis=1), np.nan)
    dens, surv = np.exp(log_dens), np.exp(log_surv)
    with np.errstate(invalid="ignore", divide="ignore"):
        hazard = np.exp(log_dens - log_surv)
    return {"time": t, "density": dens, "survival": surv, "hazard": hazard, "mrl": m}


def true_mean_regression(pop: MixturePopulation, x0) -> np.ndarray:
    """E[T | x0] for the joint gamma x normal family."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    means = np.asarray(pop.shape, dtype=float) / np.asarray(pop.rate, dtype=float)
    return np.array([np.exp(_log_weights(pop, x)) @ means for x in x0])


def population_mean(pop: MixturePopulation) -> float:
    shape = np.asarray(pop.shape, dtype=float)
    w = np.asarray(pop.weights, dtype=float)
    if pop.family == "weibull":
        return float(w @ (np.asarray(pop.scale, dtype=float) * special.gamma(1.0 + 1.0 / shape)))
    return float(w @ (shape / np.asarray(pop.rate, dtype=float)))


# censoring ------------------------------------------------------------------


@dataclass(frozen=True)
class Censoring:
    """Censoring mechanism: ``none``, ``uniform`` on (lo, hi) or ``fixed`` at c."""

    kind: str = "none"
    lo: float = 0.0
    hi: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "fixed"):
            raise ConfigError(f"unknown censoring mechanism {self.kind!r}")
        if self.kind == "uniform" and not (0.0 <= self.lo < self.hi):
            raise ConfigError("uniform censoring needs 0 <= lo < hi")
        if self.kind == "fixed" and not self.c > 0:
            raise ConfigError("fixed censoring time must be positive")

    @classmethod
    def parse(cls, text: str) -> "Censoring":
        """Parse ``none``, ``uniform:lo:hi`` or ``fixed:c``."""
        parts = str(text).split(":")
        try:
            if parts[0] == "none" and len(parts) == 1:
                return cls()
            if parts[0] == "uniform" and len(parts) == 3:
                return cls("uniform", lo=float(parts[1]), hi=float(parts[2]))
            if parts[0] == "fixed" and len(parts) == 2:
                return cls("fixed", c=float(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"bad censoring mechanism {text!r}") from exc
        raise ConfigError(f"bad censoring mechanism {text!r}")


def apply_censoring(rng, data: Dataset, mechanism=Censoring()) -> Dataset:
    """Censor rows whose censoring time falls below the event time.

    Already-censored rows are left as they are.
    """
    if isinstance(mechanism, str):
        mechanism = Censoring.parse(mechanism)
    if mechanism.kind == "none":
        return data
    if mechanism.kind == "fixed":
        c = np.full(data.n, mechanism.c)
    else:
        c = as_generator(rng, "censor").uniform(mechanism.lo, mechanism.hi, data.n)
    hit = (c < data.time) & ~data.censored
    return Dataset(np.where(hit, c, data.time), data.censored | hit, data.covariate, data.group)
