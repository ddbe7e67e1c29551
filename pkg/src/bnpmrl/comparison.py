"""Conditional predictive ordinates and their log averages (ALPML).

Parametric chains use the harmonic-mean identity over the per-draw
likelihood. Mixture chains use the label-based identity, the ratio of the
summed mixture-to-assigned-kernel ratios to the summed inverse assigned
kernels. By default each summand is replaced by its expectation over the
observation's label given the other parameters, which turns both sums into
the harmonic mean of the mixture density. Censored rows use survival in place
of density throughout.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .core import GROUPS, ChainOutput, Dataset
from .distributions import DomainError
from .dpmm import Prepared, loglik_matrix
from .ewm import covariate_of, ewm_loglik_terms

INSTABILITY_TOL = 0.01
FINAL_FRACTION = 0.1
CPO_METHODS = ("marginal", "labels")


@dataclass
class CpoReport:
    """Per-observation CPO values of one model on one dataset."""

    model: str
    group: np.ndarray
    time: np.ndarray
    censored: np.ndarray
    log_cpo: np.ndarray
    unstable: np.ndarray
    se: np.ndarray
    n_excluded: np.ndarray
    data_digest: str = ""
    group_labels: tuple = GROUPS
    running: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def cpo(self):
        return np.exp(self.log_cpo)

    @property
    def n(self):
        return self.log_cpo.size

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "row", "time", "status", "cpo", "log_cpo", "unstable"])
        for i in range(self.n):
            w.writerow([self.group_labels[self.group[i]] if self.group_labels else "", i, repr(float(self.time[i])),
                        int(self.censored[i]), repr(float(self.cpo[i])), repr(float(self.log_cpo[i])),
                        int(self.unstable[i])])
        return buf.getvalue()


def _running_log_ratio(log_num, log_den):
    """Running log estimate after each draw, shape (M, n)."""
    return np.logaddexp.accumulate(log_num, axis=0) - np.logaddexp.accumulate(log_den, axis=0)


def _instability(running):
    M = running.shape[0]
    start = min(M - 1, int(math.floor((1.0 - FINAL_FRACTION) * M)))
    tail = running[start:]
    with np.errstate(invalid="ignore"):
        change = np.max(np.abs(np.expm1(tail - running[-1])), axis=0)
    return ~(change <= INSTABILITY_TOL)


def _ratio_se(num, den, n_batches=20):
    """Delta-method standard error of sum(num) / sum(den) with batch means.

    ``num`` and ``den`` are (M, n) arrays scaled per column to avoid overflow.
    """
    M = num.shape[0]
    nb = min(n_batches, M)
    if nb < 2:
        return np.full(num.shape[1], np.nan)
    ratio = num.sum(axis=0) / den.sum(axis=0)
    resid = num - ratio * den
    batches = np.array([b.mean(axis=0) for b in np.array_split(resid, nb)])
    return batches.std(axis=0, ddof=1) / math.sqrt(nb) / den.mean(axis=0)


def _estimate(log_num, log_den, model, data, keep_running):
    """Shared tail of both estimators: point values, SE and stability flags."""
    ok = np.isfinite(log_den)
    n_excluded = np.sum(~ok, axis=0)
    log_num = np.where(ok, log_num, -np.inf)
    log_den = np.where(ok, log_den, -np.inf)
    log_cpo = special.logsumexp(log_num, axis=0) - special.logsumexp(log_den, axis=0)
    running = _running_log_ratio(log_num, log_den)
    unstable = _instability(running) | (n_excluded > 0)
    shift = np.max(log_den, axis=0)
    with np.errstate(invalid="ignore", over="ignore"):
        se = _ratio_se(np.exp(log_num - shift), np.exp(log_den - shift))
    group = data.group if data.group is not None else np.zeros(data.n, dtype=int)
    return CpoReport(model=model, group=group, time=data.time, censored=data.censored, log_cpo=log_cpo,
                     unstable=unstable, se=se, n_excluded=n_excluded, data_digest=data.digest(),
                     group_labels=GROUPS if data.group is not None else ("all",),
                     running=running if keep_running else None)


def _check_digest(chain: ChainOutput, data: Dataset):
    digest = chain.meta.get("data_digest")
    if digest is not None and digest != data.digest():
        raise DomainError("the chain was not fitted to this dataset")


def cpo_ewm(chain: ChainOutput, data: Dataset, keep_running=False) -> CpoReport:
    """Harmonic-mean CPO for a parametric chain of :class:`EwmParams` draws.

    Draws with zero likelihood for a row are excluded for that row and the
    row is flagged unstable.
    """
    _check_digest(chain, data)
    if not len(chain):
        raise DomainError("empty chain")
    x = covariate_of(data)
    ll = np.array([ewm_loglik_terms(p, data.time, data.censored, x) for p in chain.draws])
    ll = np.where(np.isnan(ll), -np.inf, ll)
    log_den = -ll
    # the numerator counts usable draws: exp(0) per finite term
    log_num = np.where(np.isfinite(log_den), 0.0, -np.inf)
    return _estimate(log_num, log_den, "ewm", data, keep_running)


def cpo_mixture(chain: ChainOutput, data: Dataset, keep_running=False, method="marginal") -> CpoReport:
    """Label-based CPO for DPMM and DDPMM chains.

    Each draw contributes ``f_mix(t_i) / k_assigned(t_i)`` to the numerator
    and ``1 / k_assigned(t_i)`` to the denominator, where ``f_mix`` mixes the
    kernels with the observation's group weights. The covariate factor enters
    both when the chain was fitted with a covariate.

    Parameters
    ----------
    method : {"marginal", "labels"}
        ``"labels"`` uses the sampled labels as they are. ``"marginal"``
        averages each summand over the label's full conditional, giving 1 and
        ``1 / f_mix(t_i)``. Both estimate the same CPO, but the sampled-label
        denominator has very heavy tails (a label occasionally lands on a
        component far from ``t_i``), which biases the estimate upward at
        practical chain lengths.
    """
    if method not in CPO_METHODS:
        raise ValueError(f"method must be one of {CPO_METHODS}")
    _check_digest(chain, data)
    if not len(chain):
        raise DomainError("empty chain")
    first = chain.draws[0]
    pooled = first.n_groups == 1
    d = Prepared(data, pooled=pooled)
    use_x = bool(chain.meta.get("has_covariate", data.has_covariate)) and data.has_covariate
    rows = np.arange(data.n)
    log_num = np.empty((len(chain), data.n))
    log_den = np.empty((len(chain), data.n))
    for j, s in enumerate(chain.draws):
        K = loglik_matrix(s, d, include_covariate=use_x)
        with np.errstate(divide="ignore"):
            log_w = np.log(s.weights[d.groups])
        mix = special.logsumexp(log_w + K, axis=1)
        if method == "labels":
            assigned = K[rows, s.config]
            log_num[j] = mix - assigned
            log_den[j] = -assigned
        else:
            log_num[j] = np.where(np.isfinite(mix), 0.0, -np.inf)
            log_den[j] = -mix
    model = chain.meta.get("model", "ddpmm")
    return _estimate(log_num, log_den, model, data, keep_running)


cpo_ddpmm = cpo_mixture
cpo_dpmm = cpo_mixture


def cpo(chain: ChainOutput, data: Dataset, keep_running=False, method="marginal") -> CpoReport:
    """Dispatch on the chain's model tag; ``method`` applies to mixture chains."""
    if chain.meta.get("model") == "ewm":
        return cpo_ewm(chain, data, keep_running)
    return cpo_mixture(chain, data, keep_running, method)


def alpml(report: CpoReport) -> dict:
    """Average log CPO per group and two pooled summaries.

    ``pooled_weighted`` averages over all observations (weights n_s);
    ``pooled_simple`` is the plain mean of the group values. Rows whose CPO
    is zero or not finite are left out and counted in ``excluded``.
    """
    good = np.isfinite(report.log_cpo)
    out = {}
    vals = []
    for code, label in enumerate(report.group_labels):
        sel = good & (report.group == code)
        if np.any(report.group == code):
            v = float(np.mean(report.log_cpo[sel])) if np.any(sel) else float("nan")
            out[label] = v
            vals.append(v)
    out["pooled_weighted"] = float(np.mean(report.log_cpo[good])) if np.any(good) else float("nan")
    out["pooled_simple"] = float(np.mean(vals)) if vals else float("nan")
    out["excluded"] = int(np.sum(~good))
    out["unstable"] = int(np.sum(report.unstable))
    return out


def summary_table(reports) -> list:
    """One row per model, in the given order."""
    rows = []
    for r in reports:
        row = {"model": r.model, "n": int(r.n)}
        row.update(alpml(r))
        rows.append(row)
    return rows


def summary_json(reports) -> str:
    return json.dumps({"alpml": summary_table(reports)}, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _batch_se(x, n_batches=20):
    nb = min(n_batches, x.size)
    if nb < 2:
        return float("nan")
    return float(np.std([b.mean() for b in np.array_split(x, nb)], ddof=1) / math.sqrt(nb))


def predictive_density(chain: ChainOutput, row: Dataset) -> np.ndarray:
    """Per-draw predictive density (or survival, if censored) of a one-row dataset."""
    if row.n != 1:
        raise DomainError("expected a single row")
    if chain.meta.get("model") == "ewm":
        x = covariate_of(row)
        return np.array([np.exp(ewm_loglik_terms(p, row.time, row.censored, x)[0]) for p in chain.draws])
    pooled = chain.draws[0].n_groups == 1
    d = Prepared(row, pooled=pooled)
    use_x = row.has_covariate
    out = np.empty(len(chain))
    for j, s in enumerate(chain.draws):
        K = loglik_matrix(s, d, include_covariate=use_x)[0]
        with np.errstate(divide="ignore"):
            out[j] = math.exp(special.logsumexp(np.log(s.weights[d.groups[0]]) + K))
    return out


def cpo_loo_refit(data: Dataset, rows, fit) -> tuple:
    """CPO by refitting without each row: the definition, at one fit per row.

    ``fit`` maps a dataset to a :class:`ChainOutput`. Returns the estimates
    and their batch-means standard errors.
    """
    est, se = [], []
    for i in rows:
        chain = fit(data.drop(i))
        dens = predictive_density(chain, data.subset(np.arange(data.n) == i))
        est.append(float(dens.mean()))
        se.append(_batch_se(dens))
    return np.array(est), np.array(se)
