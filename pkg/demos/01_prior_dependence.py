"""
How much do the two groups share a priori?
==========================================

The dependent stick-breaking prior ties the control (C) and treatment (T)
random measures through a Kotz bivariate beta on the stick fractions.
Here we tabulate the closed-form correlations over a few (alpha, b) values
and check one of them by simulation.
"""

from bnpmrl.distributions import RngHandle
from bnpmrl.properties import cor_G, cor_weights, cor_zeta, mc_sticks, shared_mass

###############################################################################
# Correlation of the stick fractions and of the random measures
# --------------------------------------------------------------
# b close to 0 gives nearly independent groups, b close to 1 nearly
# identical ones. alpha moves the correlation much less.

print(f"{'alpha':>6} {'b':>5} {'cor zeta':>9} {'cor w_1':>8} {'cor w_5':>8} {'cor G':>7} {'shared':>7}")
for alpha in (0.5, 1.0, 5.0):
    for b in (0.1, 0.5, 0.9):
        p = (alpha, b)
        print(f"{alpha:6.1f} {b:5.1f} {cor_zeta(p):9.3f} {cor_weights(1, p):8.3f} "
              f"{cor_weights(5, p):8.3f} {cor_G(p):7.3f} {shared_mass(p):7.3f}")

###############################################################################
# A Monte Carlo check
# -------------------
# Simulate stick fractions directly and compare the sample correlation of
# the first weights with the closed form.

est = mc_sticks((1.0, 0.5), n=200_000, ls=(1, 2), rng=RngHandle(0))
for key, value in est.items():
    print(key, value)

###############################################################################
# The limit b -> 0
# ----------------
# The random-measure correlation does not vanish as b shrinks because the
# groups still share atoms. It tends to (alpha + 1) / (2 alpha + 1).

for b in (1e-1, 1e-3, 1e-6):
    print(f"b={b:g}  cor G = {cor_G((1.0, b)):.4f}")
print("limit", (1.0 + 1) / (2 * 1.0 + 1))
