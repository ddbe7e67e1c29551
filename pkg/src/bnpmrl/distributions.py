"""Random sampling and special functions used by the samplers and functionals.

Every random draw in the package goes through a :class:`RngHandle` (or a
``numpy.random.Generator`` obtained from one), so a chain is a deterministic
function of its seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "RngHandle",
    "BivBetaDraw",
    "as_generator",
    "gamma_log_pdf",
    "gamma_survival",
    "gamma_cdf",
    "log_gamma_survival",
    "log_gamma_pdf",
    "sample_kotz_bivariate_beta",
    "sample_truncated_beta",
    "sample_mvnormal2",
    "sample_inverse_wishart2",
    "sample_inverse_gamma",
    "sample_gamma",
    "sample_normal",
    "sample_beta",
    "sample_uniform",
]


class DomainError(ValueError):
    """Raised when a distribution is evaluated outside its parameter domain."""


# Fixed sub-stream offsets. New entries go at the end so existing streams
# keep their draws.
STREAM_OFFSETS = {
    "default": 0,
    "init": 1,
    "atoms": 2,
    "config": 3,
    "weights": 4,
    "alpha": 5,
    "hypers": 6,
    "zeta": 7,
    "alpha_b": 8,
    "ewm": 9,
    "simulate": 10,
    "censor": 11,
    "oracle": 12,
}


class RngHandle:
    """Seeded source of independent named random streams.

    Each named stream is a PCG64 generator seeded from
    ``SeedSequence(seed, spawn_key=key + (offset,))``, so adding a new stream
    (or drawing more from one) never perturbs the others.

    Parameters
    ----------
    seed : int
        Non-negative 64-bit seed.
    key : tuple of int, optional
        Spawn-key prefix; used by :meth:`child` to derive per-chain handles.
    """

    def __init__(self, seed: int, key: tuple = ()):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str = "default") -> np.random.Generator:
        if name not in self._streams:
            offset = STREAM_OFFSETS.get(name)
            if offset is None:
                raise KeyError(f"unknown random stream {name!r}")
            ss = np.random.SeedSequence(self.seed, spawn_key=self.key + (offset,))
            self._streams[name] = np.random.Generator(np.random.PCG64(ss))
        return self._streams[name]

    def child(self, index: int) -> "RngHandle":
        """Independent handle for chain ``index`` (disjoint spawn key)."""
        return RngHandle(self.seed, self.key + (1000 + int(index),))

    def __repr__(self):
        return f"RngHandle(seed={self.seed}, key={self.key})"


RngLike = Union[RngHandle, np.random.Generator, int]


def as_generator(rng: RngLike, name: str = "default") -> np.random.Generator:
    """Return a numpy Generator for ``rng`` (handle stream, generator or seed)."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngHandle):
        return rng.stream(name)
    return RngHandle(int(rng)).stream(name)


# ---------------------------------------------------------------------------
# Gamma special functions
# ---------------------------------------------------------------------------

_TINY_Q = 1e-280


def _check_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if np.any(~(arr > 0)) or np.any(~np.isfinite(arr)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return arr


def log_gamma_pdf(t, shape, rate):
    """Unchecked vectorised log density of Gamma(shape, rate) at ``t``."""
    t = np.asarray(t, dtype=float)
    return (shape * np.log(rate) + (shape - 1.0) * np.log(t) - rate * t
            - special.gammaln(shape))


def gamma_log_pdf(t, shape, rate):
    """Log density of the gamma distribution with shape/rate parameters.

    Raises
    ------
    DomainError
        If any argument is not strictly positive.
    """
    _check_positive("t", t)
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    out = log_gamma_pdf(t, shape, rate)
    return float(out) if np.ndim(out) == 0 else out


def _log_q_continued_fraction(a, x, max_iter=500, tol=1e-15):
    """log Q(a, x) from the Legendre continued fraction (modified Lentz).

    Only used for x > a + 1, where the fraction converges quickly and
    ``gammaincc`` may underflow.
    """
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < tol
        if done.all():
            break
    return -x + a * np.log(x) - special.gammaln(a) + np.log(h)


def log_gamma_survival(t, shape, rate):
    """Unchecked vectorised log survival function of Gamma(shape, rate).

    Uses ``scipy.special.gammaincc`` in the bulk and a log-space continued
    fraction where the regularized upper incomplete gamma underflows, so
    censored observations deep in a component's tail keep finite weights.
    """
    t, shape, rate = np.broadcast_arrays(np.asarray(t, float),
                                         np.asarray(shape, float),
                                         np.asarray(rate, float))
    x = rate * t
    q = special.gammaincc(shape, x)
    with np.errstate(divide="ignore"):
        out = np.log(q)
    tail = (q < _TINY_Q) & (x > shape + 1.0)
    if np.any(tail):
        out = np.array(out, dtype=float, copy=True)
        out[tail] = _log_q_continued_fraction(shape[tail], x[tail])
    return out


def gamma_survival(t, shape, rate):
    """Survival function (upper regularized incomplete gamma) of Gamma(shape, rate).

    Parameters
    ----------
    t : float or array_like
        Non-negative evaluation point(s).
    shape, rate : float or array_like
        Positive gamma parameters.

    Returns
    -------
    float or ndarray
        ``Pr(T > t)``, which is 1 at ``t = 0`` and nonincreasing in ``t``.
    """
    tarr = np.asarray(t, dtype=float)
    if np.any(~(tarr >= 0)):
        raise DomainError(f"t must be non-negative, got {t!r}")
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    out = special.gammaincc(shape, np.asarray(rate, float) * tarr)
    return float(out) if np.ndim(out) == 0 else out


def gamma_cdf(t, shape, rate):
    """Distribution function of Gamma(shape, rate) (lower regularized gamma)."""
    tarr = np.asarray(t, dtype=float)
    if np.any(~(tarr >= 0)):
        raise DomainError(f"t must be non-negative, got {t!r}")
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    out = special.gammainc(shape, np.asarray(rate, float) * tarr)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Bivariate beta and truncated beta
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BivBetaDraw:
    """One (or a vector of) draws from the product-construction bivariate beta.

    ``zeta_c = u * w`` and ``zeta_t = v * w`` hold exactly.
    """

    zeta_c: np.ndarray
    zeta_t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray


def _check_kotz(alpha, b):
    if not (np.all(np.asarray(alpha) > 0) and np.all(np.isfinite(alpha))):
        raise DomainError(f"alpha must be positive, got {alpha!r}")
    if not (np.all(np.asarray(b) > 0) and np.all(np.asarray(b) < 1)):
        raise DomainError(f"b must lie in (0, 1), got {b!r}")


def sample_kotz_bivariate_beta(rng: RngLike, alpha, b, size=None) -> BivBetaDraw:
    """Draw ``(zeta_c, zeta_t) = (U W, V W)`` with Beta(alpha, 1) marginals.

    ``U, V ~ Beta(alpha, 1 - b)`` and ``W ~ Beta(1 + alpha - b, b)``
    independently. The pair has correlation ``alpha b / (alpha + 1 - b)``.
    """
    _check_kotz(alpha, b)
    gen = as_generator(rng)
    u = gen.beta(alpha, 1.0 - b, size=size)
    v = gen.beta(alpha, 1.0 - b, size=size)
    w = gen.beta(1.0 + alpha - b, b, size=size)
    # Beta draws with a second parameter below one can round to exactly 1.
    top = np.nextafter(1.0, 0.0)
    u, v, w = (np.minimum(z, top) for z in (u, v, w))
    return BivBetaDraw(zeta_c=u * w, zeta_t=v * w, u=u, v=v, w=w)


def _truncated_beta_power_rejection(gen, a, b, lo, hi, max_rounds=2000):
    """Sample Beta(a, b) on (lo, hi) when its mass there underflows.

    Proposals come from the density proportional to ``x**(a-1)`` on (lo, hi);
    the remaining factor ``(1-x)**(b-1)`` is handled by rejection against its
    maximum over the interval.
    """
    n = a.shape[0]
    out = np.empty(n)
    ok = np.zeros(n, dtype=bool)
    log_ratio = a * (np.log(lo, where=lo > 0, out=np.full(n, -np.inf)) - np.log(hi))
    r = np.exp(log_ratio)
    # log max of (1-x)^(b-1) over the interval
    log_env = np.where(b >= 1.0, (b - 1.0) * np.log1p(-lo), (b - 1.0) * np.log1p(-hi))
    todo = np.arange(n)
    for _ in range(max_rounds):
        if todo.size == 0:
            break
        u1 = gen.random(todo.size)
        u2 = gen.random(todo.size)
        base = r[todo] + u1 * (1.0 - r[todo])
        x = hi[todo] * np.exp(np.log(base) / a[todo])
        log_acc = (b[todo] - 1.0) * np.log1p(-x) - log_env[todo]
        acc = np.log(u2) < log_acc
        out[todo[acc]] = x[acc]
        ok[todo[acc]] = True
        todo = todo[~acc]
    return out, ok


def sample_truncated_beta(rng: RngLike, a, b, lo, hi, return_flag=False):
    """Draw from Beta(a, b) restricted to the interval (lo, hi).

    Sampling is by inverse cdf on the restricted cdf range. Where the mass of
    the interval underflows double precision, an exact rejection sampler on the
    power-law envelope is used instead; if that also fails the endpoint nearest
    the mode is returned and the draw is flagged. Degenerate intervals (too
    narrow to resolve an interior point) return the midpoint, flagged.

    Parameters
    ----------
    rng : RngHandle or numpy.random.Generator
    a, b : float or array_like
        Positive beta parameters.
    lo, hi : float or array_like
        Interval bounds with ``0 <= lo < hi <= 1``.
    return_flag : bool
        Also return a boolean array marking fallback draws.

    Returns
    -------
    float or ndarray (and flags if requested)
        Draws lying strictly inside ``(lo, hi)``.
    """
    gen = as_generator(rng)
    scalar = all(np.ndim(z) == 0 for z in (a, b, lo, hi))
    a, b, lo, hi = (np.atleast_1d(np.asarray(z, dtype=float)) for z in (a, b, lo, hi))
    a, b, lo, hi = np.broadcast_arrays(a, b, lo, hi)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError("beta parameters must be positive")
    if np.any(lo < 0) or np.any(hi > 1) or np.any(~(lo < hi)):
        raise DomainError("truncation interval must satisfy 0 <= lo < hi <= 1")

    n = a.size
    a, b, lo, hi = (z.ravel().copy() for z in (a, b, lo, hi))
    out = np.empty(n)
    flag = np.zeros(n, dtype=bool)

    degenerate = (hi - lo) <= 4.0 * np.finfo(float).eps * hi
    out[degenerate] = 0.5 * (lo[degenerate] + hi[degenerate])
    flag[degenerate] = True

    # Work in the tail nearer the interval: reflect x -> 1 - x when the
    # interval sits in the upper half, so cdf differences keep precision.
    flo = special.betainc(a, b, lo)
    flip = flo > 0.5
    aa = np.where(flip, b, a)
    bb = np.where(flip, a, b)
    llo = np.where(flip, 1.0 - hi, lo)
    hhi = np.where(flip, 1.0 - lo, hi)

    live = ~degenerate
    f_lo = special.betainc(aa, bb, llo)
    f_hi = special.betainc(aa, bb, hhi)
    mass = f_hi - f_lo
    u = gen.random(n)
    inv = live & (mass > 1e-300) & (f_hi > 1e-300)
    if np.any(inv):
        p = f_lo[inv] + u[inv] * mass[inv]
        x = special.betaincinv(aa[inv], bb[inv], p)
        out[inv] = np.where(flip[inv], 1.0 - x, x)

    rest = live & ~inv
    if np.any(rest):
        idx = np.flatnonzero(rest)
        x, ok = _truncated_beta_power_rejection(gen, aa[idx], bb[idx], llo[idx], hhi[idx])
        # fallback: endpoint nearest the mode of the (reflected) density
        mode_hi = np.where(aa[idx] >= 1.0, hhi[idx], llo[idx])
        x = np.where(ok, x, mode_hi)
        out[idx] = np.where(flip[idx], 1.0 - x, x)
        flag[idx] = ~ok

    # keep strictly inside the interval
    inside_lo = np.nextafter(lo, hi)
    inside_hi = np.nextafter(hi, lo)
    out = np.minimum(np.maximum(out, inside_lo), inside_hi)

    if scalar:
        return (float(out[0]), bool(flag[0])) if return_flag else float(out[0])
    return (out, flag) if return_flag else out


# ---------------------------------------------------------------------------
# Standard samplers
# ---------------------------------------------------------------------------

def _as_spd2(matrix, name):
    m = np.asarray(matrix, dtype=float)
    if m.shape != (2, 2) or not np.allclose(m, m.T, rtol=1e-10, atol=1e-14):
        raise DomainError(f"{name} must be a symmetric 2x2 matrix")
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise DomainError(f"{name} must be positive definite") from None
    return m, chol


def sample_mvnormal2(rng: RngLike, mean, cov, size=None):
    """Bivariate normal draws; ``size`` draws give an array of shape (size, 2)."""
    gen = as_generator(rng)
    mean = np.asarray(mean, dtype=float).reshape(2)
    _, chol = _as_spd2(cov, "cov")
    if size is None:
        return mean + chol @ gen.standard_normal(2)
    z = gen.standard_normal((int(size), 2))
    return mean + z @ chol.T


def sample_inverse_wishart2(rng: RngLike, df, scale):
    """One 2x2 inverse-Wishart draw with ``df`` degrees of freedom and scale matrix.

    Parameterised so that the mean is ``scale / (df - 3)``. The draw is built
    from the Bartlett decomposition of a Wishart(df, scale^-1) matrix.
    """
    if not df > 1:
        raise DomainError(f"degrees of freedom must exceed 1, got {df!r}")
    gen = as_generator(rng)
    scale, _ = _as_spd2(scale, "scale")
    prec_chol = np.linalg.cholesky(np.linalg.inv(scale))
    t00 = np.sqrt(gen.chisquare(df))
    t11 = np.sqrt(gen.chisquare(df - 1.0))
    t10 = gen.standard_normal()
    bart = np.array([[t00, 0.0], [t10, t11]])
    a = prec_chol @ bart
    wish = a @ a.T
    sigma = np.linalg.inv(wish)
    return 0.5 * (sigma + sigma.T)


def sample_inverse_gamma(rng: RngLike, shape, scale, size=None):
    """Inverse-gamma draws with density proportional to x^(-shape-1) exp(-scale/x)."""
    _check_positive("shape", shape)
    _check_positive("scale", scale)
    gen = as_generator(rng)
    return scale / gen.gamma(shape, 1.0, size=size)


def sample_gamma(rng: RngLike, shape, rate, size=None):
    """Gamma draws with shape/rate parameterisation."""
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    gen = as_generator(rng)
    return gen.gamma(shape, 1.0 / np.asarray(rate, float), size=size)


def sample_normal(rng: RngLike, mean, var, size=None):
    """Normal draws parameterised by mean and variance."""
    _check_positive("var", var)
    gen = as_generator(rng)
    return gen.normal(mean, np.sqrt(var), size=size)


def sample_beta(rng: RngLike, a, b, size=None):
    _check_positive("a", a)
    _check_positive("b", b)
    return as_generator(rng).beta(a, b, size=size)


def sample_uniform(rng: RngLike, low=0.0, high=1.0, size=None):
    if not np.all(np.asarray(low) < np.asarray(high)):
        raise DomainError("uniform bounds must satisfy low < high")
    return as_generator(rng).uniform(low, high, size=size)
