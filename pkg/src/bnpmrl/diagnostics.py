"""Convergence summaries written next to each chain."""

from __future__ import annotations

import numpy as np

from .core import ChainOutput


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of autocorrelation pairs.

    Autocorrelations come from an FFT of the centred series; pairs of lags
    are summed until a pair turns negative.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or not np.all(np.isfinite(x)):
        return float("nan")
    xc = x - x.mean()
    var = xc @ xc / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1.0 / n))


def scalar_traces(chain: ChainOutput) -> dict:
    """Named scalar traces available for a chain's model."""
    if not len(chain):
        return {}
    if chain.meta.get("model") == "ewm":
        return {k: chain.trace(k) for k in ("alpha_w", "theta_w", "beta0", "beta1")}
    names = ["alpha", "lam", "tau2", "rho"]
    if chain.meta.get("model") == "ddpmm":
        names.insert(1, "b")
    out = {k: chain.trace(k) for k in names}
    mu = np.array([d.hyper.mu for d in chain.draws])
    out["mu_theta"], out["mu_phi"] = mu[:, 0], mu[:, 1]
    return out


def chain_diagnostics(chain: ChainOutput) -> dict:
    """Acceptance rates, warnings and per-scalar summaries with ESS."""
    summ = {}
    for name, tr in scalar_traces(chain).items():
        summ[name] = {
            "mean": float(np.mean(tr)),
            "sd": float(np.std(tr, ddof=1)) if tr.size > 1 else 0.0,
            "q025": float(np.quantile(tr, 0.025)),
            "q975": float(np.quantile(tr, 0.975)),
            "ess": effective_sample_size(tr),
        }
    return {
        "model": chain.meta.get("model"),
        "n_draws": len(chain),
        "acceptance": chain.meta.get("acceptance"),
        "warnings": chain.meta.get("warnings", []),
        "scalars": summ,
    }
