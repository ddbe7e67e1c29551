"""End-to-end acceptance checks, one test per criterion.

Each test records a single pass/fail line, listed at the end of the pytest
run. Tolerances are the ones the criteria state; nothing here is tuned to
make a check pass.
"""

import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from bnpmrl import functionals, properties, simulation
from bnpmrl.cli import main as cli_main
from bnpmrl.comparison import cpo_loo_refit, cpo_mixture
from bnpmrl.core import ChainOutput, Dataset, mixture_draw, read_dataset_csv
from bnpmrl.ddp import run_chain_ddp, update_zeta_slice
from bnpmrl.distributions import RngHandle
from bnpmrl.dpmm import McmcSettings, Prepared, PriorConfig, run_chain

N_BATCHES = 50


def _batch_se(x, nb=N_BATCHES):
    x = np.asarray(x, dtype=float)
    means = np.array([b.mean() for b in np.array_split(x, nb)])
    return float(means.std(ddof=1) / math.sqrt(nb))


def _coverage(truth, lo, hi):
    ok = np.isfinite(truth) & np.isfinite(lo) & np.isfinite(hi)
    return float(np.mean((truth >= lo) & (truth <= hi) & ok))


# ---------------------------------------------------------------------------
# 1. closed-form prior dependence against Monte Carlo
# ---------------------------------------------------------------------------

def test_criterion_1_closed_form_prior_dependence(report):
    import time

    start = time.time()
    rows = properties.property_table(properties.DEFAULT_GRID, n_sticks=10 ** 6, n_measures=10 ** 5, L=500,
                                      ls=(1, 2, 5), rng=RngHandle(0))
    elapsed = time.time() - start
    failed = [r for r in rows if not r["pass"]]
    # limits: cor_G -> (alpha + 1) / (2 alpha + 1) as b -> 0, and cor_G inside (1/2, 1)
    limit_err = max(abs(properties.cor_G((a, 1e-10)) - (a + 1) / (2 * a + 1)) for a in (0.25, 1.0, 4.0, 16.0))
    inside = all(0.5 < properties.cor_G((a, b)) < 1.0
                 for a in np.geomspace(0.01, 100, 25) for b in np.linspace(0.01, 0.99, 25))
    ok = not failed and limit_err < 1e-8 and inside and elapsed < 300
    report(1, ok, f"{len(rows) - len(failed)}/{len(rows)} within 3 SE, b->0 limit err {limit_err:.1e}, "
                  f"cor_G in (1/2,1): {inside}, {elapsed:.0f}s")
    assert not failed, [(r["formula"], r["alpha"], r["b"]) for r in failed]
    assert limit_err < 1e-8 and inside
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 2. functional identities on posterior draws
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def regression_draws():
    data = simulation.gen_regression_population(RngHandle(21), 300)
    prior = PriorConfig.regression_default()
    prior.L = 20
    ch = run_chain(data, prior, McmcSettings(iterations=700, burn_in=500, thinning=20, seed=21))
    return ch.draws


@pytest.fixture(scope="module")
def two_group_draws():
    data = simulation.gen_sim1(RngHandle(22), 80, 40)
    prior = PriorConfig.sim1_default()
    prior.L = 15
    ch = run_chain_ddp(data, prior, McmcSettings(iterations=700, burn_in=500, thinning=20, seed=22))
    return ch.draws


def test_criterion_2_functional_identities(report, regression_draws, two_group_draws):
    worst_weighted, worst_quad, worst_zero, worst_inv, worst_uniform = 0.0, 0.0, 0.0, 0.0, 0.0
    cases = [(d, x0, None) for d in regression_draws for x0 in (-10.0, 0.0, 15.0)]
    cases += [(d, None, g) for d in two_group_draws for g in (0, 1)]
    for d, x0, g in cases:
        upper = functionals.default_time_grid([d], n=2, x0=x0, group=g, level=0.999)[-1]
        t = np.linspace(0.0, upper, 41)
        weighted = functionals.conditional_mrl(d, t, x0, g)
        integral = functionals.mrl_integral_form(d, t, x0, g)
        worst_weighted = max(worst_weighted, float(np.max(np.abs(weighted / integral - 1))))
        # independent route: numerical integral of the survival curve
        for ti in t[::10]:
            s = functionals.conditional_survival(d, ti, x0, g)
            tail, _ = integrate.quad(lambda u: functionals.conditional_survival(d, u, x0, g), ti, np.inf,
                                     limit=500, epsabs=0.0, epsrel=1e-11)
            worst_quad = max(worst_quad, abs(functionals.conditional_mrl(d, ti, x0, g) / (tail / s) - 1))
        m0 = functionals.conditional_mrl(d, 0.0, x0, g)
        mr = functionals.mean_regression(d, x0, g)
        worst_zero = max(worst_zero, abs(m0 - mr) / mr)
        # kernels with shape below 1 give S(t) a t^a cusp at the origin, so the 2000 points are
        # spaced quadratically there; the uniform-grid error is reported alongside
        for grid, key in ((upper * np.linspace(0.0, 1.0, 2000) ** 2, "inv"),
                          (np.linspace(0.0, upper, 2000), "uniform")):
            back = functionals.inversion_survival(functionals.conditional_mrl(d, grid, x0, g), grid)
            err = float(np.max(np.abs(back - functionals.conditional_survival(d, grid, x0, g))))
            if key == "inv":
                worst_inv = max(worst_inv, err)
            else:
                worst_uniform = max(worst_uniform, err)
    ok = worst_weighted < 1e-6 and worst_quad < 1e-6 and worst_zero <= 1e-12 and worst_inv < 1e-4
    report(2, ok, f"{len(cases)} draw/covariate cases: weighted vs integral {worst_weighted:.1e} "
                  f"(quadrature {worst_quad:.1e}), m(0) vs mean {worst_zero:.1e}, inversion {worst_inv:.1e} "
                  f"(uniform spacing {worst_uniform:.1e})")
    assert worst_weighted < 1e-6 and worst_quad < 1e-6
    assert worst_zero <= 1e-12
    assert worst_inv < 1e-4


# ---------------------------------------------------------------------------
# 3. prior reproduction with zero observations
# ---------------------------------------------------------------------------

# Priors with finite fourth moments everywhere so that the MC standard errors
# of the second moments exist.
GEWEKE_PRIOR = dict(a_alpha=3.0, b_alpha=1.0, a_mu=[0.5, -1.0], B_mu=np.diag([1.0, 0.5]), a_Sigma=12.0,
                    B_Sigma=np.diag([1.8, 0.9]), a_lambda=1.0, b_lambda=2.0, a_tau=6.0, b_tau=5.0,
                    a_kappa=6.0, a_rho=6.0, b_rho=2.0, L=20)
GEWEKE_SWEEPS = 50_000


def _prior_moments(p):
    """(E x, E x^2) of every scalar under the hierarchical prior."""
    nu = p["a_Sigma"]
    shape = (nu - 1.0) / 2.0  # Sigma_ii is inverse gamma with this shape and scale B_ii / 2

    def ig(a, s):
        return s / (a - 1.0), s * s / ((a - 1.0) * (a - 2.0))

    s11 = ig(shape, p["B_Sigma"][0, 0] / 2.0)
    s22 = ig(shape, p["B_Sigma"][1, 1] / 2.0)
    mu = p["a_mu"]
    tau2 = ig(p["a_tau"], p["b_tau"])
    rho = (p["a_rho"] / p["b_rho"], p["a_rho"] * (p["a_rho"] + 1.0) / p["b_rho"] ** 2)
    ak = p["a_kappa"]
    out = {
        "mu_theta": (mu[0], mu[0] ** 2 + p["B_mu"][0, 0]),
        "mu_phi": (mu[1], mu[1] ** 2 + p["B_mu"][1, 1]),
        "theta": (mu[0], mu[0] ** 2 + p["B_mu"][0, 0] + s11[0]),
        "phi": (mu[1], mu[1] ** 2 + p["B_mu"][1, 1] + s22[0]),
        "sigma11": s11,
        "sigma22": s22,
        "lam": (p["a_lambda"], p["a_lambda"] ** 2 + p["b_lambda"]),
        "tau2": tau2,
        "beta": (p["a_lambda"], p["a_lambda"] ** 2 + p["b_lambda"] + tau2[0]),
        "rho": rho,
        "kappa2": (rho[0] / (ak - 1.0), rho[1] / ((ak - 1.0) * (ak - 2.0))),
        "alpha": (p["a_alpha"] / p["b_alpha"], p["a_alpha"] * (p["a_alpha"] + 1.0) / p["b_alpha"] ** 2),
    }
    gam = stats.gamma(p["a_alpha"], scale=1.0 / p["b_alpha"])
    # stick fractions are Beta(alpha, 1) given alpha
    out["zeta"] = (gam.expect(lambda a: a / (a + 1.0)), gam.expect(lambda a: a / (a + 2.0)))
    return out


def _cross_moment_zeta(p):
    """E[zeta_C zeta_T] = E[U] E[V] E[W^2] averaged over alpha ~ Gamma and b ~ U(0, 1)."""
    gam = stats.gamma(p["a_alpha"], scale=1.0 / p["b_alpha"])

    def given(a, b):
        eu = a / (a + 1.0 - b)
        ew2 = (1.0 + a - b) * (2.0 + a - b) / ((a + 1.0) * (a + 2.0))
        return eu * eu * ew2

    val, _ = integrate.dblquad(lambda b, a: gam.pdf(a) * given(a, b), 0.0, np.inf, 0.0, 1.0, epsabs=1e-12)
    return val


def _traces(chain):
    out = {k: [] for k in ("theta", "phi", "beta", "kappa2", "mu_theta", "mu_phi", "sigma11", "sigma22",
                           "lam", "tau2", "rho", "alpha", "zeta", "b", "zeta_ct")}
    for d in chain.draws:
        h = d.hyper
        for k, v in (("theta", d.atoms.theta), ("phi", d.atoms.phi), ("beta", d.atoms.beta),
                     ("kappa2", d.atoms.kappa2)):
            out[k].append((v.mean(), (v * v).mean()))
        for k, v in (("mu_theta", h.mu[0]), ("mu_phi", h.mu[1]), ("sigma11", h.sigma[0, 0]),
                     ("sigma22", h.sigma[1, 1]), ("lam", h.lam), ("tau2", h.tau2), ("rho", h.rho),
                     ("alpha", h.alpha), ("b", h.b)):
            out[k].append((v, v * v))
        z = d.sticks.zeta
        out["zeta"].append((z.mean(), (z * z).mean()))
        if z.shape[0] == 2:
            out["zeta_ct"].append(((z[0] * z[1]).mean(), 0.0))
    return {k: np.array(v) for k, v in out.items() if v}


def _geweke(chain, expected):
    tr = _traces(chain)
    rows = []
    for name, (m1, m2) in expected.items():
        for order, target in ((1, m1), (2, m2)):
            if order == 2 and name == "zeta_ct":
                continue
            x = tr[name][:, order - 1]
            est, se = float(x.mean()), _batch_se(x)
            rows.append((name, order, est, target, se, abs(est - target) <= 3 * se))
    return rows


def test_criterion_3_prior_reproduction(report):
    import time

    start = time.time()
    prior = PriorConfig(**GEWEKE_PRIOR)
    settings = McmcSettings(iterations=GEWEKE_SWEEPS + 1000, burn_in=1000, seed=3)
    moments = _prior_moments(GEWEKE_PRIOR)
    rows = _geweke(run_chain(None, prior, settings), moments)
    ddp_moments = dict(moments, b=(0.5, 1.0 / 3.0), zeta_ct=(_cross_moment_zeta(GEWEKE_PRIOR), None))
    rows += _geweke(run_chain_ddp(None, PriorConfig(**GEWEKE_PRIOR), settings), ddp_moments)

    # Cor(zeta_C, zeta_T) at fixed (alpha, b) from repeated slice updates with no data
    gen = np.random.default_rng(31)
    cor_rows = []
    for a, b in ((0.5, 0.3), (2.0, 0.5), (8.0, 0.9)):
        L = 200_001
        s = mixture_draw(np.zeros(L), np.zeros(L), np.full((2, L), 1.0 / L))
        s.hyper.alpha, s.hyper.b = a, b
        s.sticks.latent_uvw = np.full((L - 1, 3), 0.5)
        update_zeta_slice(s, Prepared(Dataset.empty(groups=True)), gen)
        est = properties.mc_cor(s.sticks.zeta[0], s.sticks.zeta[1])
        cor_rows.append((a, b, est.estimate, properties.cor_zeta((a, b)), est.se,
                         est.agrees(properties.cor_zeta((a, b)))))
    elapsed = time.time() - start
    bad = [r for r in rows if not r[-1]]
    bad_cor = [r for r in cor_rows if not r[-1]]
    for r in bad + bad_cor:
        print("outside 3 SE:", r)
    ok = not bad and not bad_cor and elapsed < 600
    report(3, ok, f"{len(rows) - len(bad)}/{len(rows)} prior moments within 3 SE, "
                  f"{len(cor_rows) - len(bad_cor)}/{len(cor_rows)} zeta correlations, {elapsed:.0f}s")
    assert not bad, bad
    assert not bad_cor, bad_cor
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 4. two-group simulation studies
# ---------------------------------------------------------------------------

SIM_SETTINGS = McmcSettings(iterations=2000 + 2000 * 5, burn_in=2000, thinning=5, seed=4)


def _sim_study(name, seed):
    gen_fn, pops, sizes = simulation.scenario(name)
    data = gen_fn(RngHandle(seed), sizes["n_c"], sizes["n_t"])
    prior = PriorConfig.sim1_default() if name == "sim1" else PriorConfig.sim2_default()
    chain = run_chain_ddp(data, prior, SIM_SETTINGS, rng=RngHandle(seed))
    cover = {}
    for g in (0, 1):
        t = data.time[data.group == g]
        grid = np.linspace(*np.quantile(t, [0.01, 0.99]), 100)
        truth = simulation.true_functionals(pops[g], grid)
        for kind in ("density", "survival", "mrl"):
            curve = functionals.summarize(chain, functionals.FunctionalRequest(kind, grid, None, g))[0]
            cover[(g, kind)] = _coverage(truth[kind], *curve.band())
    cor = np.array([properties.cor_G((d.hyper.alpha, d.hyper.b)) for d in chain.draws])
    interval = tuple(np.quantile(cor, [0.025, 0.975]))
    return cover, interval, len(chain)


@pytest.mark.parametrize("name,seed", [("sim1", 41), ("sim2", 42)])
def test_criterion_4_simulation_recovery(report, name, seed):
    cover, (lo, hi), n = _sim_study(name, seed)
    worst = min(cover.values())
    inside = 0.5 < lo and hi < 1.0
    overlap = name != "sim2" or (lo < 0.9 and hi > 0.55)
    ok = worst >= 0.9 and inside and overlap
    detail = ", ".join(f"{'CT'[g]}/{k} {v:.2f}" for (g, k), v in sorted(cover.items()))
    report(f"4 ({name})", ok, f"{n} draws; band coverage {detail}; cor_G 95% interval ({lo:.3f}, {hi:.3f})")
    assert worst >= 0.9, cover
    assert inside and overlap, (lo, hi)


# ---------------------------------------------------------------------------
# 5. mean and mrl regression on the six-component population
# ---------------------------------------------------------------------------

REGRESSION_X0 = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)


def _conditional_quantile(pop, x0, p):
    hi = 1.0
    while simulation.true_functionals(pop, [hi], x0)["survival"][0] > 1 - p:
        hi *= 2.0
    from scipy.optimize import brentq

    return brentq(lambda t: simulation.true_functionals(pop, [t], x0)["survival"][0] - (1 - p), 0.0, hi)


def test_criterion_5_regression_recovery(report):
    pop = simulation.REGRESSION_POPULATION
    data = simulation.gen_regression_population(RngHandle(51), 1500)
    settings = McmcSettings(iterations=3000 + 2000 * 5, burn_in=3000, thinning=5, seed=51)
    chain = run_chain(data, PriorConfig.regression_default(), settings)
    xs = np.linspace(-15.0, 20.0, 71)
    mr = functionals.summarize(chain, functionals.FunctionalRequest("mean_regression", None, xs))[0]
    cover_mr = _coverage(simulation.true_mean_regression(pop, xs), *mr.band())
    cover_mrl = {}
    for x0 in REGRESSION_X0:
        grid = np.linspace(_conditional_quantile(pop, x0, 0.01), _conditional_quantile(pop, x0, 0.99), 60)
        curve = functionals.summarize(chain, functionals.FunctionalRequest("mrl", grid, [x0]))[0]
        cover_mrl[x0] = _coverage(simulation.true_functionals(pop, grid, x0)["mrl"], *curve.band())
    ok = cover_mr >= 0.9 and min(cover_mrl.values()) >= 0.9
    detail = ", ".join(f"x0={x:g}: {v:.2f}" for x, v in cover_mrl.items())
    report(5, ok, f"{len(chain)} draws; mean regression coverage {cover_mr:.2f}; mrl coverage {detail}")
    assert cover_mr >= 0.9
    assert min(cover_mrl.values()) >= 0.9, cover_mrl


# ---------------------------------------------------------------------------
# 6. CPO machinery
# ---------------------------------------------------------------------------

def _harmonic_mean_cpo(theta, phi, t, cens):
    a, scale = np.exp(theta)[:, None], np.exp(-phi)[:, None]
    lik = np.where(cens, stats.gamma.sf(t, a, scale=scale), stats.gamma.pdf(t, a, scale=scale))
    return 1.0 / np.mean(1.0 / lik, axis=0)


LOO_PRIOR = dict(a_alpha=2.0, b_alpha=0.8, a_mu=[1.87, 0.25], B_mu=0.27 * np.eye(2), a_Sigma=4.0,
                 B_Sigma=0.27 * np.eye(2), L=5)
LOO_SETTINGS = McmcSettings(iterations=1000 + 10_000, burn_in=1000, seed=6)


def _loo_fit(data):
    return run_chain_ddp(data, PriorConfig(**LOO_PRIOR), LOO_SETTINGS, rng=RngHandle(606))


def test_criterion_6_cpo_machinery(report):
    # single-component identity against the harmonic mean of the likelihood
    rng = np.random.default_rng(61)
    t = rng.gamma(2.0, 2.0, 30)
    cens = rng.random(30) < 0.3
    data = Dataset(t, cens)
    theta, phi = rng.normal(0.7, 0.2, 400), rng.normal(-0.7, 0.2, 400)
    draws = []
    for th, ph in zip(theta, phi):
        d = mixture_draw([th], [ph], [1.0])
        d.config = np.zeros(30, dtype=int)
        draws.append(d)
    one = ChainOutput(draws, {"model": "dpmm", "data_digest": data.digest()})
    ref = _harmonic_mean_cpo(theta, phi, t, cens)
    identity_err = max(float(np.max(np.abs(cpo_mixture(one, data, method=m).cpo / ref - 1)))
                       for m in ("marginal", "labels"))

    # label-based CPO against brute-force leave-one-out refits
    sim = simulation.gen_sim1(RngHandle(62), 10, 10)
    full = _loo_fit(sim)
    est = cpo_mixture(full, sim)
    loo, loo_se = cpo_loo_refit(sim, range(sim.n), _loo_fit)
    z = np.abs(est.cpo - loo) / np.hypot(est.se, loo_se)
    frac = float(np.mean(z <= 3.0))
    # the sampled-label form, reported for reference: same target, heavy-tailed
    lab = cpo_mixture(full, sim, method="labels")
    z_lab = np.abs(lab.cpo - loo) / np.hypot(lab.se, loo_se)
    ok = identity_err <= 1e-12 and frac >= 0.9
    report(6, ok, f"L=1 identity rel err {identity_err:.1e}; {int(np.sum(z <= 3))}/{sim.n} LOO refits "
                  f"within 3 combined SE (sampled labels: {int(np.sum(z_lab <= 3))}/{sim.n})")
    assert identity_err <= 1e-12
    assert frac >= 0.9, list(zip(est.cpo, loo, z))


LUNG_ENV = "BNPMRL_LUNG_CSV"


@pytest.mark.skipif(not os.environ.get(LUNG_ENV), reason=f"set {LUNG_ENV} to a two-group lung cancer CSV")
def test_criterion_6_lung_alpml(report, tmp_path):
    """Data-dependent: ALPML of the two-group mixture near -6.05 and not below the EWM."""
    path = os.environ[LUNG_ENV]
    fits = {}
    for model, extra in (("ddpmm", ["--prior-preset", "sim1", "--L", "40"]), ("ewm", ["--elicit"])):
        out = tmp_path / model
        code = cli_main(["fit", "--data", path, "--model", model, "--iterations", "60000", "--burn-in", "10000",
                         "--thinning", "25", "--seed", "1", "--out", str(out)] + extra)
        assert code == 0
        fits[model] = out / "chain.jsonl"
    code = cli_main(["compare", "--chain", str(fits["ddpmm"]), "--chain", str(fits["ewm"]), "--data", path,
                     "--out", str(tmp_path / "cmp")])
    assert code == 0
    import json

    rows = {r["model"]: r for r in json.loads((tmp_path / "cmp" / "summary.json").read_text())["alpml"]}
    a_ddp, a_ewm = rows["ddpmm"]["pooled_weighted"], rows["ewm"]["pooled_weighted"]
    ok = abs(a_ddp + 6.05) < 0.5 and a_ddp >= a_ewm
    report("6 (lung, data-dependent)", ok, f"ALPML ddpmm {a_ddp:.3f}, ewm {a_ewm:.3f}")
    assert abs(a_ddp + 6.05) < 0.5
    assert a_ddp >= a_ewm


# ---------------------------------------------------------------------------
# 7. determinism
# ---------------------------------------------------------------------------

def _pipeline(out: Path, in_process=True):
    steps = [
        ["simulate", "--scenario", "sim2", "--seed", "7", "--n-c", "60", "--n-t", "60", "--grid-points", "30"],
        ["fit", "--data", "{sim}/data.csv", "--model", "ddpmm", "--L", "10", "--iterations", "300",
         "--burn-in", "100", "--thinning", "2", "--chains", "2", "--seed", "7"],
        ["fit", "--data", "{sim}/data.csv", "--model", "ewm", "--iterations", "600", "--burn-in", "200",
         "--seed", "7"],
        ["functionals", "--chain", "{fit_ddpmm}/chain.jsonl", "--kind", "mrl", "--kind", "density",
         "--grid", "0:40:21"],
        ["functionals", "--chain", "{fit_ewm}/chain.jsonl", "--kind", "survival", "--grid", "0:40:21"],
    ]
    dirs = {"sim": out / "sim", "fit_ddpmm": out / "fit_ddpmm", "fit_ewm": out / "fit_ewm"}
    targets = [dirs["sim"], dirs["fit_ddpmm"], dirs["fit_ewm"], out / "curves_ddpmm", out / "curves_ewm"]
    for argv, target in zip(steps, targets):
        argv = [a.format(**{k: str(v) for k, v in dirs.items()}) for a in argv] + ["--out", str(target)]
        if in_process:
            assert cli_main(argv) == 0
        else:
            subprocess.run([sys.executable, "-m", "bnpmrl"] + argv, check=True, capture_output=True)
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_criterion_7_determinism(report, tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    c = _pipeline(tmp_path / "c", in_process=False)
    chains = [k for k in a if k.endswith("chain.jsonl")]
    curves = [k for k in a if k.startswith("curves")]
    same = a == b == c
    report(7, same and len(chains) == 2 and len(curves) >= 5,
           f"{len(a)} files ({len(chains)} chains, {len(curves)} curves) identical across two in-process "
           f"runs and a fresh interpreter: {same}")
    assert set(a) == set(b) == set(c)
    for k in a:
        assert a[k] == b[k] == c[k], k
