"""
Mean residual life regression on a continuous covariate
=======================================================

Model the joint density of (time, covariate) with a gamma x normal mixture.
Conditioning on the covariate gives a whole family of mrl curves and a
nonlinear mean regression.
"""

import numpy as np

from bnpmrl.distributions import RngHandle
from bnpmrl.dpmm import McmcSettings, PriorConfig, run_chain
from bnpmrl.functionals import FunctionalRequest, summarize
from bnpmrl.simulation import gen_regression_population, scenario, true_functionals, true_mean_regression

rng = RngHandle(51)
data = gen_regression_population(rng, 1500)
(population,) = scenario("regression")[1]

###############################################################################
# Fit the joint mixture
# ---------------------
# A short chain, again for speed.

chain = run_chain(data, PriorConfig.regression_default(),
                  McmcSettings(iterations=2500, burn_in=1000, thinning=5, seed=1), rng=rng)

###############################################################################
# Mean regression E[T | x]
# ------------------------

xs = np.linspace(-15, 20, 8)
(mr,) = summarize(chain, FunctionalRequest("mean_regression", covariate_values=xs))
lo, hi = mr.band()
for row in zip(xs, true_mean_regression(population, xs), mr.mean, lo, hi):
    print("x={:6.1f}  true {:6.2f}  mean {:6.2f}  95% [{:6.2f}, {:6.2f}]".format(*row))

###############################################################################
# Conditional mrl at a few covariate values
# -----------------------------------------
# summarize returns one curve per covariate value.

grid = np.array([0.5, 5.0, 10.0, 20.0])
x0 = [-10.0, 0.0, 10.0]
curves = summarize(chain, FunctionalRequest("mrl", time_grid=grid, covariate_values=x0))
for x, curve in zip(x0, curves):
    truth = true_functionals(population, grid, x0=x)["mrl"]
    print(f"x0={x:5.1f}  true", np.round(truth, 2), " posterior mean", np.round(curve.mean, 2))
