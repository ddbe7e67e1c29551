"""Chain files in JSON lines: one metadata header, then one draw per line.

Floats are written with Python's shortest round-trip repr, so a chain
loads back bit for bit and identical runs give identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Atoms, ChainOutput, Hyperstate, MixtureState, StickState
from .ewm import EwmParams

FORMAT = "bnpmrl-chain/1"


def _plain(obj):
    """Convert numpy containers and scalars to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def draw_to_dict(draw) -> dict:
    if isinstance(draw, EwmParams):
        return {"alpha_w": draw.alpha_w, "theta_w": draw.theta_w, "beta0": draw.beta0, "beta1": draw.beta1}
    h = draw.hyper
    return {
        "theta": draw.atoms.theta, "phi": draw.atoms.phi, "beta": draw.atoms.beta, "kappa2": draw.atoms.kappa2,
        "zeta": draw.sticks.zeta, "weights": draw.sticks.weights, "uvw": draw.sticks.latent_uvw,
        "config": draw.config,
        "hyper": {"mu": h.mu, "sigma": h.sigma, "lam": h.lam, "tau2": h.tau2, "rho": h.rho, "alpha": h.alpha,
                  "b": h.b, "a_kappa": h.a_kappa},
    }


def draw_from_dict(d: dict, model: str):
    if model == "ewm":
        return EwmParams(d["alpha_w"], d["theta_w"], d["beta0"], d["beta1"])
    arr = lambda k: np.asarray(d[k], dtype=float)
    L = len(d["theta"])
    zeta = np.asarray(d["zeta"], dtype=float).reshape(len(d["weights"]), L - 1)
    uvw = None if d["uvw"] is None else np.asarray(d["uvw"], dtype=float).reshape(L - 1, 3)
    h = d["hyper"]
    return MixtureState(
        atoms=Atoms(arr("theta"), arr("phi"), arr("beta"), arr("kappa2")),
        sticks=StickState(zeta=zeta, weights=np.asarray(d["weights"], dtype=float), latent_uvw=uvw),
        config=np.asarray(d["config"], dtype=int),
        hyper=Hyperstate(h["mu"], h["sigma"], h["lam"], h["tau2"], h["rho"], h["alpha"], h["b"], h["a_kappa"]),
    )


def chain_to_text(chain: ChainOutput) -> str:
    lines = [dumps({"format": FORMAT, "meta": chain.meta})]
    lines += [dumps(draw_to_dict(d)) for d in chain.draws]
    return "\n".join(lines) + "\n"


def write_chain(chain: ChainOutput, path) -> None:
    Path(path).write_text(chain_to_text(chain))


def chain_from_text(text: str) -> ChainOutput:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty chain file")
    head = json.loads(lines[0])
    if head.get("format") != FORMAT:
        raise ValueError(f"not a chain file (format {head.get('format')!r})")
    meta = head["meta"]
    model = meta.get("model")
    return ChainOutput(draws=[draw_from_dict(json.loads(ln), model) for ln in lines[1:]], meta=meta)


def read_chain(path) -> ChainOutput:
    return chain_from_text(Path(path).read_text())


def merge_chains(chains) -> ChainOutput:
    """Concatenate independent chains of the same model over the same data."""
    chains = list(chains)
    if not chains:
        raise ValueError("nothing to merge")
    if len({c.meta.get("model") for c in chains}) != 1 or len({c.meta.get("data_digest") for c in chains}) != 1:
        raise ValueError("chains must share model and dataset")
    if len(chains) == 1:
        return chains[0]
    meta = dict(chains[0].meta)
    meta["chains"] = [c.meta for c in chains]
    meta["n_chains"] = len(chains)
    return ChainOutput(draws=[d for c in chains for d in c.draws], meta=meta)
