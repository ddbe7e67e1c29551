"""
Parametric or nonparametric? Comparing fits by CPO
==================================================

Censor the first two-group study, fit both the exponentiated Weibull
regression (EWM) and the dependent mixture, and compare them by their
average log conditional predictive ordinate (ALPML). Higher is better.
"""

import numpy as np

from bnpmrl.comparison import cpo, summary_table
from bnpmrl.ddp import run_chain_ddp
from bnpmrl.distributions import RngHandle
from bnpmrl.dpmm import McmcSettings, PriorConfig
from bnpmrl.ewm import EwmPriors, elicit_priors, run_chain_ewm
from bnpmrl.simulation import apply_censoring, gen_sim1

rng = RngHandle(7)
data = apply_censoring(rng, gen_sim1(rng), "uniform:0:60")
print(f"{data.n} rows, {data.censored.mean():.0%} censored")

###############################################################################
# The parametric fit
# ------------------
# Centre the EWM prior on three sample quantiles. Bimodal data can fall
# outside what the EWM family reproduces, in which case the default prior
# means are kept and a note says so.

priors = elicit_priors(*np.quantile(data.time[~data.censored], [0.1, 0.5, 0.9]), base=EwmPriors())
print("elicited:", priors.elicited, priors.note)
ewm = run_chain_ewm(data, priors, McmcSettings(iterations=20000, burn_in=5000, thinning=10, seed=1), rng=rng)

###############################################################################
# The dependent mixture
# ---------------------

ddp = run_chain_ddp(data, PriorConfig.sim1_default(),
                    McmcSettings(iterations=3000, burn_in=1000, thinning=4, seed=1), rng=rng)

###############################################################################
# ALPML by group and pooled
# -------------------------

for row in summary_table([cpo(ddp, data), cpo(ewm, data)]):
    print("{model:>6}  C {C:8.3f}  T {T:8.3f}  pooled {pooled_weighted:8.3f}".format(**row))
