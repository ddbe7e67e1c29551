"""Command-line pipeline: simulate, fit, functionals, compare, properties.

Exit codes: 0 success, 2 usage or configuration error, 3 failed
precondition (invalid data, mismatched datasets, missing chain).
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import comparison, functionals, properties, simulation
from .core import GROUPS, Dataset, DatasetError, read_dataset_csv
from .ddp import run_chain_ddp
from .diagnostics import chain_diagnostics
from .distributions import DomainError, RngHandle
from .dpmm import McmcSettings, PriorConfig, run_chain
from .ewm import EwmPriors, elicit_priors, ewm_functional, run_chain_ewm
from .io import dumps, merge_chains, read_chain, write_chain

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION = 0, 2, 3
PRESETS = {"regression": PriorConfig.regression_default, "sim1": PriorConfig.sim1_default,
           "sim2": PriorConfig.sim2_default}
REGRESSION_X0 = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)


class UsageError(Exception):
    pass


class PreconditionError(Exception):
    pass


def _floats(text):
    text = (text or "").strip()
    return [] if not text else [float(v) for v in text.split(",")]


def _grid(text):
    """``start:stop:num`` or a comma-separated list."""
    if text is None:
        return None
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.asarray(_floats(text))


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# simulate -------------------------------------------------------------------


def _truth_grid_upper(pops):
    from scipy import optimize

    def s_at(pop, t):
        return simulation.true_functionals(pop, [t])["survival"][0]

    hi = 1.0
    for pop in pops:
        while s_at(pop, hi) > 1e-4:
            hi *= 2.0
    return max(optimize.brentq(lambda t: s_at(p, t) - 1e-4, 0.0, hi) for p in pops)


def _truth_csv(rows, header):
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else functionals._fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    try:
        gen_fn, pops, sizes = simulation.scenario(args.scenario)
        mech = simulation.Censoring.parse(args.censoring)
    except simulation.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    handle = RngHandle(args.seed)
    if len(pops) == 1:
        data = gen_fn(handle, args.n or sizes["n"])
    else:
        data = gen_fn(handle, args.n_c or sizes["n_c"], args.n_t or sizes["n_t"])
    data = simulation.apply_censoring(handle, data, mech)
    out = Path(args.out)
    grid = np.linspace(0.0, _truth_grid_upper(pops), args.grid_points)
    cols = ["density", "survival", "hazard", "mrl"]
    rows = []
    if len(pops) == 1:
        for x0 in REGRESSION_X0:
            tf = simulation.true_functionals(pops[0], grid, x0)
            rows += [[repr(x0), repr(float(t))] + [tf[c][i] for c in cols] for i, t in enumerate(grid)]
        truth = _truth_csv(rows, ["covariate", "time"] + cols)
        xs = np.linspace(-15.0, 20.0, args.grid_points)
        mr = simulation.true_mean_regression(pops[0], xs)
        _write(out / "truth_mean_regression.csv",
               _truth_csv([[repr(float(x)), m] for x, m in zip(xs, mr)], ["covariate", "mean_regression"]))
    else:
        for g, pop in zip(GROUPS, pops):
            tf = simulation.true_functionals(pop, grid)
            rows += [[g, repr(float(t))] + [tf[c][i] for c in cols] for i, t in enumerate(grid)]
        truth = _truth_csv(rows, ["group", "time"] + cols)
    _write(out / "data.csv", data.to_csv_text())
    _write(out / "truth.csv", truth)
    print(f"wrote {data.n} rows to {out / 'data.csv'}")
    return EXIT_OK


# fit ------------------------------------------------------------------------


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a mapping")
    known = {"model", "prior_preset", "prior", "mcmc", "ewm_prior", "elicit", "chains", "seed"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _load_data(path, allow_empty=True):
    if path is None:
        if not allow_empty:
            raise UsageError("--data is required")
        return Dataset.empty()
    if not Path(path).exists():
        raise PreconditionError(f"data file {path} does not exist")
    try:
        data, _ = read_dataset_csv(path)
    except DatasetError as exc:
        raise PreconditionError(f"invalid dataset: {exc}") from exc
    return data


def _fit_one(model, data, prior, settings, seed, index, n_chains):
    handle = RngHandle(seed) if n_chains == 1 else RngHandle(seed).child(index)
    if model == "ewm":
        return run_chain_ewm(data, prior, settings, handle)
    if model == "ddpmm":
        return run_chain_ddp(data, prior, settings, handle)
    return run_chain(data, prior, settings, handle)


def build_fit(args):
    """Resolve model, prior and settings from config file plus flags."""
    cfg = _load_config(args.config)
    model = args.model or cfg.get("model")
    if model not in ("dpmm", "ddpmm", "ewm"):
        raise UsageError("choose --model dpmm, ddpmm or ewm")
    data = _load_data(args.data)
    mc = dict(cfg.get("mcmc") or {})
    for key, flag in (("iterations", "iterations"), ("burn_in", "burn_in"), ("thinning", "thinning"),
                      ("c", "c"), ("proposal", "proposal"), ("adapt_until", "adapt_until")):
        if getattr(args, flag) is not None:
            mc[key] = getattr(args, flag)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", mc.get("seed", 0)))
    mc["seed"] = seed
    try:
        settings = McmcSettings(**mc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad MCMC settings: {exc}") from exc
    try:
        if model == "ewm":
            prior = EwmPriors.from_dict(cfg.get("ewm_prior") or {})
            if args.elicit or cfg.get("elicit"):
                obs = data.time[~data.censored]
                if obs.size < 3:
                    raise PreconditionError("elicitation needs at least three observed times")
                prior = elicit_priors(*np.quantile(obs, [0.1, 0.5, 0.9]), base=prior)
        else:
            preset = args.prior_preset or cfg.get("prior_preset") or ("sim1" if model == "ddpmm" else "regression")
            if preset not in PRESETS:
                raise UsageError(f"unknown prior preset {preset!r}")
            base = PRESETS[preset]().to_dict()
            base.update(cfg.get("prior") or {})
            if args.L is not None:
                base["L"] = args.L
            prior = PriorConfig.from_dict(base)
            prior.validate()
    except (TypeError, ValueError, DomainError) as exc:
        raise UsageError(f"bad prior configuration: {exc}") from exc
    if model == "ddpmm" and data.n and data.group is None:
        raise PreconditionError("the ddpmm model needs a group column")
    chains = args.chains if args.chains is not None else int(cfg.get("chains", 1))
    if chains < 1:
        raise UsageError("--chains must be at least 1")
    return model, data, prior, settings, seed, chains


def cmd_fit(args) -> int:
    model, data, prior, settings, seed, k = build_fit(args)
    jobs = [(model, data, prior, settings, seed, i, k) for i in range(k)]
    if k == 1:
        chains = [_fit_one(*jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=min(k, args.workers or k)) as pool:
            futures = [pool.submit(_fit_one, *j) for j in jobs]
            chains = [f.result() for f in futures]
    chain = merge_chains(chains)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_chain(chain, out / "chain.jsonl")
    diag = chain_diagnostics(chain)
    diag["per_chain"] = [chain_diagnostics(c) for c in chains] if k > 1 else None
    _write(out / "diagnostics.json", dumps(diag) + "\n")
    print(f"wrote {len(chain)} draws to {out / 'chain.jsonl'}")
    return EXIT_OK


# functionals ----------------------------------------------------------------


def _read_chain(path):
    if not Path(path).exists():
        raise PreconditionError(f"chain file {path} does not exist")
    return read_chain(path)


def _ewm_curves(chain, kind, grid, groups, quantiles):
    out = []
    for g in groups:
        x = 0 if g is None else GROUPS.index(g)
        vals = np.array([ewm_functional(p, kind, grid, x) for p in chain.draws])
        out.append(functionals.curve_summary(vals, grid, quantiles, kind=kind, group=g))
    return out


def _notes(curve):
    bad = ~np.isfinite(curve.mean)
    if not np.any(bad):
        return None
    first = curve.grid[np.argmax(bad)]
    return (f"{curve.label()}: undefined at {int(bad.sum())} grid point(s) from {first!r} on, "
            "where the survival underflows; those rows hold nan\n")


def cmd_functionals(args) -> int:
    chain = _read_chain(args.chain)
    if not len(chain):
        raise PreconditionError("the chain holds no draws")
    model = chain.meta.get("model")
    two_group = model != "ewm" and chain.draws[0].n_groups == 2
    quantiles = tuple(_floats(args.quantiles))
    kinds = args.kind or ["mrl"]
    x0 = _floats(args.x0) if args.x0 is not None else None
    if args.group:
        groups = [args.group]
    elif model == "ddpmm" or model == "ewm":
        groups = list(GROUPS)
    else:
        groups = [None]
    out = Path(args.out)
    written = []
    notes = []
    for kind in kinds:
        if model == "ewm":
            if kind not in ("density", "survival", "hazard", "mrl"):
                raise UsageError(f"{kind} is not available for ewm chains")
            grid = _grid(args.grid)
            if grid is None:
                raise UsageError("ewm chains need an explicit --grid")
            curves = _ewm_curves(chain, kind, grid, groups, quantiles)
        elif kind in ("mean_regression", "mrl_regression"):
            if not chain.meta.get("has_covariate"):
                raise PreconditionError(f"{kind} needs a chain fitted with a covariate")
            xs = x0 if x0 else list(np.linspace(-15.0, 20.0, 71))
            grid = _grid(args.grid) if kind == "mrl_regression" else None
            if kind == "mrl_regression" and grid is None:
                raise UsageError("mrl_regression needs --grid with the times")
            curves = []
            for g in groups:
                req = functionals.FunctionalRequest(kind, grid, xs, g, quantiles)
                curves += functionals.summarize(chain, req)
        elif kind == "prob_mrl_order":
            continue
        else:
            curves = []
            for g in groups:
                covs = x0 if (x0 and chain.meta.get("has_covariate")) else None
                grid = _grid(args.grid)
                if grid is None:
                    grid = functionals.default_time_grid(chain, x0=None if not covs else covs[0], group=g)
                req = functionals.FunctionalRequest(kind, grid, covs, g, quantiles)
                curves += functionals.summarize(chain, req)
        for c in curves:
            name = f"{c.label()}.csv"
            _write(out / name, c.to_csv_text())
            written.append(name)
            note = _notes(c)
            if note:
                notes.append(note)
    if two_group and model != "ewm":
        grid = _grid(args.grid)
        if grid is None:
            grid = functionals.default_time_grid(chain, group=0)
        req = functionals.FunctionalRequest("prob_mrl_order", grid, None, None, ())
        c = functionals.summarize(chain, req)[0]
        _write(out / "prob_mrl_order.csv", c.to_csv_text())
        written.append("prob_mrl_order.csv")
    if notes:
        _write(out / "notes.txt", "".join(notes))
    print(f"wrote {len(written)} curve file(s) to {out}")
    return EXIT_OK


# compare --------------------------------------------------------------------


def cmd_compare(args) -> int:
    data = _load_data(args.data, allow_empty=False)
    chains = [_read_chain(p) for p in args.chain]
    digests = {c.meta.get("data_digest") for c in chains}
    if len(digests) != 1 or data.digest() not in digests:
        raise PreconditionError("chains were fitted to different datasets (digest mismatch)")
    reports = [comparison.cpo(c, data, method=args.cpo_method) for c in chains]
    out = Path(args.out)
    seen = {}
    for r in reports:
        seen[r.model] = seen.get(r.model, 0) + 1
        suffix = "" if seen[r.model] == 1 else f"_{seen[r.model]}"
        _write(out / f"cpo_{r.model}{suffix}.csv", r.to_csv_text())
    _write(out / "summary.json", comparison.summary_json(reports))
    for row in comparison.summary_table(reports):
        print(f"{row['model']}: ALPML pooled (weighted) {row['pooled_weighted']:.4f}, "
              f"unstable {row['unstable']}")
    return EXIT_OK


# properties -----------------------------------------------------------------


def cmd_properties(args) -> int:
    grid = properties.DEFAULT_GRID
    if args.alpha or args.b:
        alphas = _floats(args.alpha) or [a for a, _ in grid]
        bs = _floats(args.b) or [b for _, b in grid]
        grid = tuple((a, b) for a in dict.fromkeys(alphas) for b in dict.fromkeys(bs))
    try:
        rows = properties.property_table(grid, args.n_sticks, args.n_measures, args.L, rng=RngHandle(args.seed))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    text = properties.table_to_csv(rows)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    failed = sum(not r["pass"] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} closed forms within 3 MC standard errors", file=sys.stderr)
    return EXIT_OK


# parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bnpmrl", description="Bayesian nonparametric mean residual life pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw a synthetic dataset and its true curves")
    s.add_argument("--scenario", required=True,
                   choices=sorted(simulation.SCENARIOS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, help="sample size for the regression scenario")
    s.add_argument("--n-c", type=int, help="group C size")
    s.add_argument("--n-t", type=int, help="group T size")
    s.add_argument("--censoring", default="none", help="none, uniform:lo:hi or fixed:c")
    s.add_argument("--grid-points", type=int, default=400)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run a sampler and write the chain")
    f.add_argument("--data", help="dataset CSV; omit for a prior-only run")
    f.add_argument("--model", choices=["dpmm", "ddpmm", "ewm"])
    f.add_argument("--config", help="YAML configuration file")
    f.add_argument("--prior-preset", choices=sorted(PRESETS))
    f.add_argument("--L", type=int)
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--thinning", type=int)
    f.add_argument("--adapt-until", type=int)
    f.add_argument("--c", type=float)
    f.add_argument("--proposal", choices=["fisher", "sigma"])
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--workers", type=int)
    f.add_argument("--elicit", action="store_true", help="centre EWM priors on data quantiles")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("functionals", help="posterior curve summaries from a chain")
    c.add_argument("--chain", required=True)
    c.add_argument("--kind", action="append", choices=functionals.KINDS)
    c.add_argument("--grid", help="start:stop:num or comma list; default from the posterior predictive")
    c.add_argument("--x0", help="comma-separated covariate values")
    c.add_argument("--group", choices=list(GROUPS))
    c.add_argument("--quantiles", default="0.025,0.5,0.975", help="comma list; empty for mean only")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_functionals)

    m = sub.add_parser("compare", help="CPO and ALPML for one or more chains")
    m.add_argument("--chain", action="append", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--cpo-method", choices=comparison.CPO_METHODS, default="marginal",
                   help="mixture chains: average over labels (marginal) or use the sampled labels")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_compare)

    r = sub.add_parser("properties", help="prior dependence closed forms against simulation")
    r.add_argument("--alpha", help="comma list of alpha values")
    r.add_argument("--b", help="comma list of b values")
    r.add_argument("--n-sticks", type=int, default=10 ** 6)
    r.add_argument("--n-measures", type=int, default=10 ** 5)
    r.add_argument("--L", type=int, default=500)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_properties)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bnpmrl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as exc:
        print(f"bnpmrl: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DomainError as exc:
        print(f"bnpmrl: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
