"""Prior dependence between the two groups of the common-atom DDP mixture.

The stick fractions ``zeta`` are the surviving parts of the stick, so group
weights are ``w_1 = 1 - zeta_1`` and ``w_l = (1 - zeta_l) prod_{r<l} zeta_r``
with ``(zeta_C, zeta_T)`` Kotz bivariate beta. Every closed form here is a
function of (alpha, b) only, apart from the lognormal moment terms of the
event-time covariance. Each closed form has a Monte Carlo counterpart that
simulates the prior directly.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import special

from .distributions import DomainError, RngHandle, as_generator

T1 = np.array([1.0, -2.0])
T2 = np.array([2.0, -2.0])
T3 = np.array([1.0, -1.0])


@dataclass(frozen=True)
class KotzParams:
    """Parameters of the Kotz bivariate beta with Beta(alpha, 1) marginals."""

    alpha: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if not (0.0 < self.b < 1.0):
            raise DomainError(f"b must lie in (0, 1), got {self.b}")


def _params(p) -> KotzParams:
    return p if isinstance(p, KotzParams) else KotzParams(*p)


def _den(a, b):
    """(alpha + 1 - b)(alpha + 1)^2 (alpha + 2)."""
    return (a + 1.0 - b) * (a + 1.0) ** 2 * (a + 2.0)


def cov_zeta(p) -> float:
    p = _params(p)
    a, b = p.alpha, p.b
    return a * a * b / _den(a, b)


def var_zeta(alpha) -> float:
    return alpha / ((alpha + 1.0) ** 2 * (alpha + 2.0))


def cor_zeta(p) -> float:
    """Correlation of (zeta_C, zeta_T): alpha b / (alpha + 1 - b)."""
    p = _params(p)
    return p.alpha * p.b / (p.alpha + 1.0 - p.b)


def cov_weights(l: int, p) -> float:
    """Cov(w_lC, w_lT) in closed form.

    At ``l = 1`` the expression reduces to :func:`cov_zeta`, which is
    returned directly.
    """
    if l < 1:
        raise DomainError("l must be a positive integer")
    p = _params(p)
    if l == 1:
        return cov_zeta(p)
    a, b = p.alpha, p.b
    d = _den(a, b)
    first = ((a + 1.0 - b) * (a + 2.0) + a * a * b) / d
    ratio = (a * a * b + a * a * (a + 1.0 - b) * (a + 2.0)) / d
    return first * ratio ** (l - 1) - (a * a / (a + 1.0) ** 2) ** (l - 1) / (a + 1.0) ** 2


def cov_weights_moments(l: int, p) -> float:
    """Cov(w_lC, w_lT) assembled from the moments of U, V and W.

    An algebraically separate route to :func:`cov_weights`, used to check
    the closed form.
    """
    p = _params(p)
    a, b = p.alpha, p.b
    eu = a / (a + 1.0 - b)
    ew, ew2 = (1.0 + a - b) / (1.0 + a), (1.0 + a - b) * (2.0 + a - b) / ((1.0 + a) * (2.0 + a))
    e_prod = eu * eu * ew2
    e_both_rest = 1.0 - 2.0 * eu * ew + e_prod
    mean = a / (a + 1.0)
    return e_both_rest * e_prod ** (l - 1) - ((1.0 - mean) * mean ** (l - 1)) ** 2


def var_weight(l: int, alpha: float) -> float:
    """Var(w_l) under a DP with precision alpha."""
    if l < 1:
        raise DomainError("l must be a positive integer")
    a = alpha
    return (2.0 / ((a + 1.0) * (a + 2.0)) * ((a + a * a * (a + 2.0)) / ((a + 1.0) ** 2 * (a + 2.0))) ** (l - 1)
            - (a * a / (a + 1.0) ** 2) ** (l - 1) / (a + 1.0) ** 2)


def cor_weights(l: int, p) -> float:
    p = _params(p)
    return cov_weights(l, p) / var_weight(l, p.alpha)


def shared_mass(p) -> float:
    """sum_l E[w_lC w_lT], the common factor of the G and T covariances."""
    p = _params(p)
    a, b = p.alpha, p.b
    return ((a - 2.0) * b + a + 2.0) / (a * (2.0 * a - 3.0 * b + 5.0) - 2.0 * b + 2.0)


def cov_G(p, g0B: float) -> float:
    """Cov(G_C(B), G_T(B)) for a set B with baseline mass g0B."""
    if not (0.0 < g0B < 1.0):
        raise DomainError("g0B must lie in (0, 1)")
    return g0B * (1.0 - g0B) * shared_mass(p)


def cor_G(p) -> float:
    """Cor(G_C(B), G_T(B)); free of B."""
    p = _params(p)
    return (p.alpha + 1.0) * shared_mass(p)


def _lognormal_moment(t, mu, sigma):
    mu, sigma = np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)
    return math.exp(float(t @ mu + 0.5 * t @ sigma @ t))


def _check_mu_sigma(mu, sigma):
    mu, sigma = np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)
    if mu.shape != (2,) or sigma.shape != (2, 2):
        raise DomainError("mu must be a 2-vector and sigma a 2x2 matrix")
    if not np.allclose(sigma, sigma.T) or np.any(np.linalg.eigvalsh(sigma) <= 0):
        raise DomainError("sigma must be symmetric positive definite")
    return mu, sigma


def var_T(mu, sigma) -> float:
    """Marginal variance of an event time drawn from the prior mixture."""
    mu, sigma = _check_mu_sigma(mu, sigma)
    return (_lognormal_moment(T1, mu, sigma) + _lognormal_moment(T2, mu, sigma)
            - _lognormal_moment(T3, mu, sigma) ** 2)


def cov_T(p, mu, sigma) -> float:
    """Cov(T_C, T_T) after integrating out both mixing distributions."""
    mu, sigma = _check_mu_sigma(mu, sigma)
    spread = _lognormal_moment(T2, mu, sigma) - _lognormal_moment(T3, mu, sigma) ** 2
    return spread * shared_mass(p)


def cor_T(p, mu, sigma) -> float:
    return cov_T(p, mu, sigma) / var_T(mu, sigma)


# Monte Carlo oracles ------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    se: float

    def agrees(self, value, k=3.0) -> bool:
        return abs(self.estimate - value) <= k * self.se


def mc_cov(x, y) -> McEstimate:
    xc, yc = x - x.mean(), y - y.mean()
    prod = xc * yc
    return McEstimate(float(prod.sum() / (x.size - 1)), float(prod.std(ddof=1) / math.sqrt(x.size)))


def mc_cor(x, y) -> McEstimate:
    """Sample correlation with its influence-function standard error."""
    zx = (x - x.mean()) / x.std()
    zy = (y - y.mean()) / y.std()
    r = float(np.mean(zx * zy))
    psi = zx * zy - 0.5 * r * (zx ** 2 + zy ** 2)
    return McEstimate(r, float(psi.std(ddof=1) / math.sqrt(x.size)))


def _kotz_fractions(gen, a, b, size):
    u = gen.beta(a, 1.0 - b, size)
    v = gen.beta(a, 1.0 - b, size)
    w = gen.beta(1.0 + a - b, b, size)
    return u * w, v * w


def mc_sticks(p, n=10 ** 6, ls: Iterable[int] = (1, 2, 5), rng=None) -> dict:
    """Simulate (zeta_C, zeta_T) and the first weights of both groups.

    Returns estimates keyed ``"cor_zeta"``, ``("cov_weights", l)`` and
    ``("cor_weights", l)``.
    """
    p = _params(p)
    gen = as_generator(0 if rng is None else rng, "oracle")
    ls = sorted(set(int(l) for l in ls))
    out = {}
    rest_c, rest_t = np.ones(n), np.ones(n)
    for l in range(1, ls[-1] + 1):
        zc, zt = _kotz_fractions(gen, p.alpha, p.b, n)
        if l == 1:
            out["cor_zeta"] = mc_cor(zc, zt)
            out["cov_zeta"] = mc_cov(zc, zt)
        if l in ls:
            wc, wt = rest_c * (1.0 - zc), rest_t * (1.0 - zt)
            out[("cov_weights", l)] = mc_cov(wc, wt)
            out[("cor_weights", l)] = mc_cor(wc, wt)
        rest_c *= zc
        rest_t *= zt
    return out


def mc_random_measures(p, n=10 ** 5, L=500, g0B=0.5, mu=(0.0, 0.0), sigma=((1.0, 0.0), (0.0, 1.0)),
                       rng=None, tol=1e-17) -> dict:
    """Simulate truncated prior pairs (G_C, G_T) and one event time per group.

    ``B`` is the half-plane where a standard-normal coordinate of the atom
    exceeds ``Phi^{-1}(1 - g0B)``; the event times come from gamma kernels
    with atoms drawn from ``N2(mu, sigma)``. Stick levels past the point
    where every replicate's remaining mass is below ``tol`` are folded into
    the final atom, which changes nothing at double precision.
    """
    p = _params(p)
    mu, sigma = _check_mu_sigma(mu, sigma)
    gen = as_generator(0 if rng is None else rng, "oracle")
    cut = special.ndtri(1.0 - g0B)
    rest_c, rest_t = np.ones(n), np.ones(n)
    gc, gt = np.zeros(n), np.zeros(n)
    u_c, u_t = gen.random(n), gen.random(n)
    pick_c, pick_t = np.full(n, L - 1), np.full(n, L - 1)
    for l in range(L - 1):
        zc, zt = _kotz_fractions(gen, p.alpha, p.b, n)
        wc, wt = rest_c * (1.0 - zc), rest_t * (1.0 - zt)
        inside = gen.standard_normal(n) > cut
        gc += wc * inside
        gt += wt * inside
        # inverse-cdf atom choice: u falls in (1 - rest, 1 - rest + w]
        hit_c = (pick_c == L - 1) & (u_c <= 1.0 - rest_c + wc)
        hit_t = (pick_t == L - 1) & (u_t <= 1.0 - rest_t + wt)
        pick_c[hit_c] = l
        pick_t[hit_t] = l
        rest_c, rest_t = rest_c * zc, rest_t * zt
        if max(rest_c.max(), rest_t.max()) < tol:
            break
    inside = gen.standard_normal(n) > cut
    gc += rest_c * inside
    gt += rest_t * inside

    chol = np.linalg.cholesky(sigma)
    atom_c = mu + gen.standard_normal((n, 2)) @ chol.T
    atom_t = mu + gen.standard_normal((n, 2)) @ chol.T
    same = pick_c == pick_t
    atom_t[same] = atom_c[same]
    tc = gen.gamma(np.exp(atom_c[:, 0])) / np.exp(atom_c[:, 1])
    tt = gen.gamma(np.exp(atom_t[:, 0])) / np.exp(atom_t[:, 1])
    return {"cor_G": mc_cor(gc, gt), "cov_G": mc_cov(gc, gt),
            "cor_T": mc_cor(tc, tt), "cov_T": mc_cov(tc, tt)}


DEFAULT_GRID = tuple((a, b) for a in (0.25, 1.0, 4.0, 16.0) for b in (0.1, 0.5, 0.9))
TABLE_FIELDS = ("formula", "alpha", "b", "analytic", "mc_estimate", "mc_se", "pass")


def property_table(grid=DEFAULT_GRID, n_sticks=10 ** 6, n_measures=10 ** 5, L=500, ls=(1, 2, 5),
                   mu=(0.0, 0.0), sigma=((1.0, 0.0), (0.0, 1.0)), rng=None, k=3.0) -> list:
    """Closed forms against their oracles on a grid of (alpha, b).

    Returns one dict per (formula, alpha, b) with keys :data:`TABLE_FIELDS`.
    """
    rng = RngHandle(0) if rng is None else rng
    rows = []
    for i, (a, b) in enumerate(grid):
        p = KotzParams(a, b)
        sub = rng.child(i) if hasattr(rng, "child") else rng
        st = mc_sticks(p, n_sticks, ls, sub)
        rm = mc_random_measures(p, n_measures, L, 0.5, mu, sigma, sub)
        pairs = [("cor_zeta", cor_zeta(p), st["cor_zeta"])]
        for l in ls:
            pairs.append((f"cov_weights_l{l}", cov_weights(l, p), st[("cov_weights", l)]))
            pairs.append((f"cor_weights_l{l}", cor_weights(l, p), st[("cor_weights", l)]))
        pairs.append(("cor_G", cor_G(p), rm["cor_G"]))
        pairs.append(("cor_T", cor_T(p, mu, sigma), rm["cor_T"]))
        for name, value, est in pairs:
            rows.append({"formula": name, "alpha": a, "b": b, "analytic": value, "mc_estimate": est.estimate,
                         "mc_se": est.se, "pass": est.agrees(value, k)})
    return rows


def table_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_FIELDS)
    for r in rows:
        w.writerow([r["formula"], repr(float(r["alpha"])), repr(float(r["b"])), repr(float(r["analytic"])),
                    repr(float(r["mc_estimate"])), repr(float(r["mc_se"])), "pass" if r["pass"] else "fail"])
    return buf.getvalue()
