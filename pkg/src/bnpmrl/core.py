"""Data model and state containers shared by the samplers.

Observations are held column-wise in a :class:`Dataset`; sampler state is a
:class:`MixtureState` whose atom parameters, stick-breaking variables and
configuration labels are numpy arrays so every block update is vectorised.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distributions import DomainError

GROUPS = ("C", "T")


# ---------------------------------------------------------------------------
# Observations and datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    """One subject: survival time, right-censoring flag, covariate, group."""

    time: float
    censored: bool = False
    covariate: Optional[float] = None
    group: Optional[str] = None


class DatasetError(ValueError):
    """Dataset validation failure; ``errors`` lists ``(row_index, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"row {i}: {msg}" for i, msg in self.errors)
        super().__init__(f"{len(self.errors)} invalid row(s): {lines}")


@dataclass
class Dataset:
    """Column-oriented validated dataset.

    ``group`` holds integer codes indexing :data:`GROUPS` (0 = C, 1 = T) or is
    ``None`` for single-group data. ``covariate`` is ``None`` when the dataset
    carries no covariate column.
    """

    time: np.ndarray
    censored: np.ndarray
    covariate: Optional[np.ndarray] = None
    group: Optional[np.ndarray] = None

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.censored = np.asarray(self.censored, dtype=bool)
        if self.covariate is not None:
            self.covariate = np.asarray(self.covariate, dtype=float)
        if self.group is not None:
            self.group = np.asarray(self.group, dtype=int)

    @property
    def n(self) -> int:
        return int(self.time.shape[0])

    @property
    def has_covariate(self) -> bool:
        return self.covariate is not None

    @property
    def n_groups(self) -> int:
        return 1 if self.group is None else 2

    def group_codes(self) -> np.ndarray:
        if self.group is None:
            return np.zeros(self.n, dtype=int)
        return self.group

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(
            time=self.time[mask],
            censored=self.censored[mask],
            covariate=None if self.covariate is None else self.covariate[mask],
            group=None if self.group is None else self.group[mask],
        )

    def drop(self, index: int) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[index] = False
        return self.subset(keep)

    def to_observations(self) -> list:
        rows = []
        for i in range(self.n):
            rows.append(Observation(
                time=float(self.time[i]),
                censored=bool(self.censored[i]),
                covariate=None if self.covariate is None else float(self.covariate[i]),
                group=None if self.group is None else GROUPS[self.group[i]],
            ))
        return rows

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        header = ["time", "status"]
        if self.covariate is not None:
            header.append("covariate")
        if self.group is not None:
            header.append("group")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for i in range(self.n):
            row = [repr(float(self.time[i])), "1" if self.censored[i] else "0"]
            if self.covariate is not None:
                row.append(repr(float(self.covariate[i])))
            if self.group is not None:
                row.append(GROUPS[self.group[i]])
            writer.writerow(row)
        return buf.getvalue()

    def digest(self) -> str:
        """SHA-256 of the canonical CSV serialisation."""
        return hashlib.sha256(self.to_csv_text().encode("utf-8")).hexdigest()

    @classmethod
    def empty(cls, covariate=False, groups=False) -> "Dataset":
        return cls(
            time=np.zeros(0),
            censored=np.zeros(0, dtype=bool),
            covariate=np.zeros(0) if covariate else None,
            group=np.zeros(0, dtype=int) if groups else None,
        )


@dataclass
class ValidationReport:
    """Per-group sizes, censoring counts and exact-duplicate rows."""

    sizes: dict
    censored: dict
    duplicates: list = field(default_factory=list)

    def summary(self, group=None):
        key = group if group is not None else "all"
        return self.sizes[key], self.censored[key]


def validate_dataset(rows: Sequence[Observation]):
    """Validate a list of observations and build a :class:`Dataset`.

    Returns
    -------
    (Dataset, ValidationReport)

    Raises
    ------
    DatasetError
        Listing every invalid row: non-positive or non-finite times, mixed
        covariate presence, or unknown group labels.
    """
    errors = []
    rows = list(rows)
    has_cov = [r.covariate is not None for r in rows]
    cov_all = bool(rows) and all(has_cov)
    cov_any = any(has_cov)
    grp_any = any(r.group is not None for r in rows)
    for i, r in enumerate(rows):
        t = r.time
        if t is None or not np.isfinite(t) or t <= 0:
            errors.append((i, f"time must be positive, got {t!r}"))
        if cov_any and not cov_all and r.covariate is None:
            errors.append((i, "missing covariate (covariate presence must be all-or-none)"))
        if r.covariate is not None and not np.isfinite(r.covariate):
            errors.append((i, f"covariate must be finite, got {r.covariate!r}"))
        if grp_any and r.group not in GROUPS:
            errors.append((i, f"unknown group label {r.group!r}; expected one of {GROUPS}"))
    if errors:
        raise DatasetError(errors)

    data = Dataset(
        time=np.array([r.time for r in rows], dtype=float),
        censored=np.array([bool(r.censored) for r in rows], dtype=bool),
        covariate=np.array([r.covariate for r in rows], dtype=float) if cov_all else None,
        group=np.array([GROUPS.index(r.group) for r in rows], dtype=int) if grp_any else None,
    )
    sizes = {"all": data.n}
    cens = {"all": int(data.censored.sum())}
    if data.group is not None:
        for code, name in enumerate(GROUPS):
            m = data.group == code
            sizes[name] = int(m.sum())
            cens[name] = int(data.censored[m].sum())
    seen = {}
    dups = []
    for i, r in enumerate(rows):
        key = (r.time, bool(r.censored), r.covariate, r.group)
        if key in seen:
            dups.append((seen[key], i))
        else:
            seen[key] = i
    return data, ValidationReport(sizes=sizes, censored=cens, duplicates=dups)


def read_dataset_csv(path_or_text, *, text=False):
    """Read the ``time,status,covariate,group`` CSV format.

    ``status`` is 0 for an observed event and 1 for a right-censored time. The
    covariate and group columns are optional; empty covariate cells are read as
    missing (and rejected by validation unless the whole column is empty).
    """
    if text:
        handle = io.StringIO(path_or_text)
    else:
        handle = open(path_or_text, newline="", encoding="utf-8")
    with handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        if "time" not in fields or "status" not in fields:
            raise DatasetError([(0, "header must contain 'time' and 'status'")])
        rows, errors = [], []
        for i, rec in enumerate(reader):
            try:
                t = float(rec["time"])
            except (TypeError, ValueError):
                errors.append((i, f"unparseable time {rec['time']!r}"))
                continue
            status = (rec.get("status") or "").strip()
            if status not in ("0", "1"):
                errors.append((i, f"status must be 0 or 1, got {status!r}"))
                continue
            cov = rec.get("covariate")
            cov = float(cov) if cov not in (None, "") else None
            grp = rec.get("group")
            grp = grp.strip() if grp not in (None, "") else None
            rows.append(Observation(time=t, censored=status == "1", covariate=cov, group=grp))
        if errors:
            raise DatasetError(errors)
    return validate_dataset(rows)


def write_dataset_csv(data: Dataset, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data.to_csv_text())


# ---------------------------------------------------------------------------
# Mixture parameters and stick breaking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AtomParams:
    """Kernel parameters of one mixture component.

    The survival kernel is Gamma(exp(theta), exp(phi)) (shape, rate) and the
    covariate kernel is N(beta, kappa2).
    """

    theta: float
    phi: float
    beta: float
    kappa2: float

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise DomainError("theta and phi must be finite")
        if not self.kappa2 > 0:
            raise DomainError("kappa2 must be positive")


@dataclass
class Atoms:
    """Vectorised atom parameters for all L components."""

    theta: np.ndarray
    phi: np.ndarray
    beta: np.ndarray
    kappa2: np.ndarray

    def __len__(self):
        return int(self.theta.shape[0])

    def __getitem__(self, l) -> AtomParams:
        return AtomParams(float(self.theta[l]), float(self.phi[l]),
                          float(self.beta[l]), float(self.kappa2[l]))

    @property
    def shape(self):
        return np.exp(self.theta)

    @property
    def rate(self):
        return np.exp(self.phi)

    def means(self):
        """Gamma-kernel means exp(theta - phi)."""
        return np.exp(self.theta - self.phi)

    def copy(self):
        return Atoms(self.theta.copy(), self.phi.copy(), self.beta.copy(), self.kappa2.copy())

    def permuted(self, perm):
        return Atoms(self.theta[perm], self.phi[perm], self.beta[perm], self.kappa2[perm])


def _stick_break(zeta) -> np.ndarray:
    """Unchecked stick breaking along the last axis; output length L = len(zeta)+1."""
    zeta = np.asarray(zeta, dtype=float)
    lead = np.cumprod(zeta, axis=-1)
    prefix = np.concatenate([np.ones(zeta.shape[:-1] + (1,)), lead[..., :-1]], axis=-1)
    head = (1.0 - zeta) * prefix
    return np.concatenate([head, lead[..., -1:]], axis=-1) if zeta.shape[-1] else np.ones(zeta.shape[:-1] + (1,))


def stick_break(zeta) -> np.ndarray:
    """Weights from stick-breaking fractions.

    ``w[0] = 1 - zeta[0]``, ``w[l] = (1 - zeta[l]) prod_{r<l} zeta[r]`` and the
    last weight is the remainder ``prod_r zeta[r]``.

    Parameters
    ----------
    zeta : array_like, shape (L-1,) or (G, L-1)
        Fractions in (0, 1).

    Returns
    -------
    ndarray, shape (L,) or (G, L)
    """
    z = np.asarray(zeta, dtype=float)
    if np.any(~((z > 0) & (z < 1))):
        raise DomainError("stick-breaking fractions must lie in (0, 1)")
    return _stick_break(z)


def zeta_from_weights(weights) -> np.ndarray:
    """Recover the fractions from a stick-breaking weight vector."""
    w = np.asarray(weights, dtype=float)
    remaining = 1.0 - np.concatenate([np.zeros(w.shape[:-1] + (1,)),
                                      np.cumsum(w[..., :-2], axis=-1)], axis=-1)
    return 1.0 - w[..., :-1] / remaining


@dataclass
class StickState:
    """Stick-breaking variables per group.

    ``zeta`` has shape (G, L-1), ``weights`` (G, L). ``latent_uvw`` holds the
    (U, V, W) factors of the two-group model, shape (L-1, 3), else ``None``.
    """

    zeta: np.ndarray
    weights: np.ndarray
    latent_uvw: Optional[np.ndarray] = None

    @classmethod
    def from_zeta(cls, zeta, latent_uvw=None):
        zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
        return cls(zeta=zeta, weights=_stick_break(zeta), latent_uvw=latent_uvw)

    def copy(self):
        return StickState(self.zeta.copy(), self.weights.copy(),
                          None if self.latent_uvw is None else self.latent_uvw.copy())


@dataclass
class Hyperstate:
    """Shared hyperparameters.

    ``a_kappa`` is the fixed shape of the inverse-gamma prior on kappa2.
    ``b`` is only used by the two-group model.
    """

    mu: np.ndarray
    sigma: np.ndarray
    lam: float
    tau2: float
    rho: float
    alpha: float
    b: float = 0.5
    a_kappa: float = 2.0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(2)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(2, 2)

    def validate(self):
        try:
            np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise DomainError("sigma must be positive definite") from None
        if not (self.tau2 > 0 and self.rho > 0 and self.alpha > 0 and self.a_kappa > 0):
            raise DomainError("tau2, rho, alpha and a_kappa must be positive")
        if not 0 < self.b < 1:
            raise DomainError("b must lie in (0, 1)")

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class MixtureState:
    """Full sampler state.

    ``config`` holds 0-based component labels, one per observation in dataset
    order. ``imputed_times`` is reserved for a latent-time treatment of
    censoring; the samplers use the survival-factor likelihood and leave it
    ``None``.
    """

    atoms: Atoms
    sticks: StickState
    config: np.ndarray
    hyper: Hyperstate
    imputed_times: Optional[dict] = None

    @property
    def L(self) -> int:
        return len(self.atoms)

    @property
    def n_groups(self) -> int:
        return int(self.sticks.weights.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return self.sticks.weights

    def copy(self) -> "MixtureState":
        return MixtureState(self.atoms.copy(), self.sticks.copy(), self.config.copy(),
                            self.hyper.copy(), None)


def cluster_counts(state: MixtureState, groups=None) -> np.ndarray:
    """Occupancy counts M[g, l] = #{i in group g : config_i = l}.

    Parameters
    ----------
    state : MixtureState
    groups : array_like of int, optional
        Group code of each observation; all zeros when omitted.

    Returns
    -------
    ndarray of int, shape (G, L)
    """
    L = state.L
    G = state.n_groups
    labels = np.asarray(state.config, dtype=int)
    if groups is None:
        groups = np.zeros(labels.shape[0], dtype=int)
    out = np.zeros((G, L), dtype=int)
    if labels.size:
        np.add.at(out, (np.asarray(groups, dtype=int), labels), 1)
    return out


@dataclass
class ChainOutput:
    """Posterior draws after burn-in and thinning plus run metadata.

    ``meta`` carries the seed, burn-in, thinning, truncation level, per-block
    MH acceptance rates and the dataset digest.
    """

    draws: list
    meta: dict

    def __len__(self):
        return len(self.draws)

    def __iter__(self):
        return iter(self.draws)

    @property
    def model(self):
        return self.meta.get("model")

    def trace(self, name):
        """Stack a scalar hyperparameter (or EWM parameter) over the draws."""
        first = self.draws[0]
        if hasattr(first, "hyper"):
            return np.array([getattr(d.hyper, name) for d in self.draws])
        return np.array([getattr(d, name) for d in self.draws])


def mixture_draw(theta, phi, weights, beta=None, kappa2=None, hyper=None) -> MixtureState:
    """Build a standalone draw from component parameters and weights.

    ``weights`` may be a single vector or one row per group. Useful for
    evaluating functionals of hand-specified mixtures.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    L = theta.shape[0]
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (L,)).copy()
    beta = np.zeros(L) if beta is None else np.broadcast_to(np.asarray(beta, dtype=float), (L,)).copy()
    kappa2 = np.ones(L) if kappa2 is None else np.broadcast_to(np.asarray(kappa2, dtype=float), (L,)).copy()
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    if w.shape[1] != L:
        raise ValueError("weights must have one entry per component")
    w = w / w.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = zeta_from_weights(w) if L > 1 else np.zeros((w.shape[0], 0))
    sticks = StickState(zeta=zeta, weights=w)
    if hyper is None:
        hyper = Hyperstate(np.zeros(2), np.eye(2), 0.0, 1.0, 1.0, 1.0)
    return MixtureState(Atoms(theta, phi, beta, kappa2), sticks, np.zeros(0, dtype=int), hyper)
