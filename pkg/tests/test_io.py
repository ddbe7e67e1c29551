import math

import numpy as np
import pytest

from bnpmrl.core import ChainOutput, Dataset
from bnpmrl.ddp import run_chain_ddp
from bnpmrl.diagnostics import chain_diagnostics, effective_sample_size
from bnpmrl.dpmm import McmcSettings, PriorConfig
from bnpmrl.ewm import EwmParams
from bnpmrl.io import chain_from_text, chain_to_text, merge_chains, read_chain, write_chain


def _ddp_chain(seed=0, digest_data=None):
    rng = np.random.default_rng(1)
    data = digest_data or Dataset(rng.gamma(2, 2, 20), rng.random(20) < 0.3, group=np.repeat([0, 1], 10))
    prior = PriorConfig.sim1_default()
    prior.L = 6
    return run_chain_ddp(data, prior, McmcSettings(iterations=12, burn_in=4, seed=seed))


def test_mixture_chain_round_trip_is_exact(tmp_path):
    ch = _ddp_chain()
    write_chain(ch, tmp_path / "c.jsonl")
    back = read_chain(tmp_path / "c.jsonl")
    assert back.meta == ch.meta
    assert len(back) == len(ch)
    for a, b in zip(ch.draws, back.draws):
        for name in ("theta", "phi", "beta", "kappa2"):
            np.testing.assert_array_equal(getattr(a.atoms, name), getattr(b.atoms, name))
        np.testing.assert_array_equal(a.sticks.zeta, b.sticks.zeta)
        np.testing.assert_array_equal(a.sticks.weights, b.sticks.weights)
        np.testing.assert_array_equal(a.sticks.latent_uvw, b.sticks.latent_uvw)
        np.testing.assert_array_equal(a.config, b.config)
        np.testing.assert_array_equal(a.hyper.sigma, b.hyper.sigma)
        assert a.hyper.alpha == b.hyper.alpha and a.hyper.b == b.hyper.b
    assert chain_to_text(back) == chain_to_text(ch)


def test_ewm_chain_round_trip():
    draws = [EwmParams(1.1, 0.7, -2.0, 0.3), EwmParams(math.pi, 1e-300, 5.0, -0.0)]
    ch = ChainOutput(draws=draws, meta={"model": "ewm", "seed": 1})
    back = chain_from_text(chain_to_text(ch))
    assert [d.as_vector().tolist() for d in back.draws] == [d.as_vector().tolist() for d in draws]


def test_bad_header_rejected():
    with pytest.raises(ValueError):
        chain_from_text('{"format":"other"}\n')
    with pytest.raises(ValueError):
        chain_from_text("")


def test_merge_chains():
    a, b = _ddp_chain(0), _ddp_chain(1)
    m = merge_chains([a, b])
    assert len(m) == len(a) + len(b) and m.meta["n_chains"] == 2
    assert merge_chains([a]) is a
    other = _ddp_chain(0, Dataset(np.ones(4), np.zeros(4, bool), group=[0, 0, 1, 1]))
    with pytest.raises(ValueError):
        merge_chains([a, other])


def test_ess_of_iid_and_ar1():
    rng = np.random.default_rng(2)
    n = 20_000
    assert effective_sample_size(rng.normal(size=n)) == pytest.approx(n, rel=0.1)
    # AR(1) with coefficient r has ESS n (1 - r) / (1 + r)
    r = 0.8
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = r * x[i - 1] + e[i]
    assert effective_sample_size(x) == pytest.approx(n * (1 - r) / (1 + r), rel=0.2)


def test_diagnostics_include_b_for_two_groups():
    d = chain_diagnostics(_ddp_chain())
    assert d["model"] == "ddpmm" and d["n_draws"] == 8
    assert {"alpha", "b", "mu_theta"} <= set(d["scalars"])
    assert set(d["acceptance"]) == {"atoms", "alpha_b"}
