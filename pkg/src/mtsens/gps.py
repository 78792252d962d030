"""Generalized propensity score models producing posterior draws of simplexes.

Two reference models: an exact per-stratum Dirichlet posterior for discrete
low-dimensional covariates, and a Bayesian-bootstrap ridge multinomial logit
for general covariates. Downstream code consumes the (M1, n, J) draw array
opaquely, so any model that emits simplex draws can be swapped in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from .dataset import ObservationalDataset
from .errors import DataError, NumericError

CLAMP = 1e-6
MAX_STRATA = 64


@dataclass(frozen=True, eq=False)
class GpsDraws:
    """M1 posterior draws of every unit's treatment-probability vector."""

    draws: np.ndarray  # (M1, n, J) float64, rows on the open simplex
    model: str
    seed: int

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.draws, dtype=np.float64))
        if d.ndim != 3:
            raise DataError("gps draws must have shape (M1, n, J)")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def m1(self) -> int:
        return self.draws.shape[0]

    @property
    def n(self) -> int:
        return self.draws.shape[1]

    @property
    def treatment_count(self) -> int:
        return self.draws.shape[2]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


def _clamp_renorm(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, CLAMP, 1.0 - CLAMP)
    p /= p.sum(axis=-1, keepdims=True)
    return p


def _master_seed(rng) -> int:
    """Normalize an int seed or Generator into one master integer."""
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    raise DataError(f"rng must be an int seed or numpy Generator, got {type(rng).__name__}")


def _child_rngs(master: int, count: int) -> list[np.random.Generator]:
    # counter-based children: replicate r gets the same stream no matter
    # how many replicates run or in what order
    return [
        np.random.default_rng(np.random.SeedSequence(master, spawn_key=(r,)))
        for r in range(count)
    ]


# ---------------------------------------------------------------------------
# stratified Dirichlet model


def fit_gps_stratified(
    ds: ObservationalDataset,
    strat_columns: Sequence[int],
    m1: int,
    prior_weight: float = 1.0,
    rng: int | np.random.Generator = 0,
) -> GpsDraws:
    """Exact posterior for discrete covariates: Dirichlet(counts + prior_weight) per stratum.

    Every unit in a stratum shares that stratum's drawn simplex. Saturated,
    so exact whenever the true GPS depends on the stratifying columns only.

    Raises:
        DataError: a stratifying column is not discrete, or the joint
            stratification exceeds 64 cells.
    """
    if m1 < 1:
        raise DataError("m1 must be >= 1")
    if prior_weight <= 0:
        raise DataError("prior_weight must be > 0")
    strat_columns = tuple(int(c) for c in strat_columns)
    for c in strat_columns:
        if not 0 <= c < ds.p:
            raise DataError(f"stratifying column {c} outside 0..{ds.p - 1}")
        col = ds.covariates[:, c]
        if not np.all(col == np.round(col)):
            raise DataError(
                f"column {ds.covariate_names[c]!r} is continuous; "
                "the stratified model needs discrete columns"
            )
    if not strat_columns:
        raise DataError("need at least one stratifying column")

    key = ds.covariates[:, strat_columns]
    strata, inverse = np.unique(key, axis=0, return_inverse=True)
    s_count = strata.shape[0]
    if s_count > MAX_STRATA:
        raise DataError(f"{s_count} joint strata exceed the limit of {MAX_STRATA}")

    J = ds.treatment_count
    counts = np.zeros((s_count, J))
    np.add.at(counts, (inverse, ds.treatment - 1), 1.0)

    seed = _master_seed(rng)
    gen = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    # (m1, s_count, J): one simplex per stratum per draw
    per_stratum = np.stack(
        [gen.dirichlet(counts[s] + prior_weight, size=m1) for s in range(s_count)],
        axis=1,
    )
    draws = _clamp_renorm(per_stratum[:, inverse, :])
    return GpsDraws(draws=draws, model="stratified", seed=seed)


# ---------------------------------------------------------------------------
# Bayesian-bootstrap ridge multinomial logit


def _fit_multilogit_weighted(
    x: np.ndarray,
    arms: np.ndarray,
    treatment_count: int,
    weights: np.ndarray,
    ridge: float,
    max_iter: int = 1000,
) -> np.ndarray:
    """Weighted ridge multinomial logit; returns fitted (n, J) probabilities.

    Reference-class parameterization (arm 1 pinned at 0); the intercept is
    never penalized. Covariates are used as given, so the ridge penalty is in
    the caller's units.

    Raises:
        NumericError: optimizer did not converge (message carries the final
            gradient norm).
    """
    n, p = x.shape
    J = treatment_count
    y_ind = np.zeros((n, J - 1))
    y_ind[np.arange(n), :] = 0.0
    for j in range(2, J + 1):
        y_ind[arms == j, j - 2] = 1.0
    xd = np.column_stack([np.ones(n), x])  # (n, p+1)

    def objective(theta):
        b = theta.reshape(p + 1, J - 1)
        z = xd @ b  # (n, J-1), reference class has logit 0
        zfull = np.column_stack([np.zeros(n), z])
        zmax = zfull.max(axis=1)
        lse = zmax + np.log(np.exp(zfull - zmax[:, None]).sum(axis=1))
        nll = float(weights @ (lse - (y_ind * z).sum(axis=1)))
        prob = np.exp(z - lse[:, None])  # (n, J-1)
        gz = weights[:, None] * (prob - y_ind)
        grad = xd.T @ gz
        nll += 0.5 * ridge * float((b[1:] ** 2).sum())
        grad[1:] += ridge * b[1:]
        return nll, grad.ravel()

    scale = float(weights.sum())
    res = minimize(
        objective,
        np.zeros((p + 1) * (J - 1)),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-9 * max(scale, 1.0), "ftol": 1e-14},
    )
    gnorm = float(np.max(np.abs(res.jac)))
    if not res.success and gnorm > 1e-5 * max(scale, 1.0):
        raise NumericError(
            f"multinomial logit did not converge in {max_iter} iterations; "
            f"final gradient norm {gnorm:.3g}"
        )
    b = res.x.reshape(p + 1, J - 1)
    z = np.column_stack([np.zeros(n), xd @ b])
    return softmax(z, axis=1)


def fit_gps_multilogit(
    ds: ObservationalDataset,
    m1: int,
    ridge: float = 1e-4,
    rng: int | np.random.Generator = 0,
    max_iter: int = 1000,
) -> GpsDraws:
    """Bayesian-bootstrap posterior: each replicate reweights units by flat
    Dirichlet weights and refits a ridge multinomial logit.

    Covariates are standardized internally (fitted probabilities are reported
    at the original rows), so ``ridge`` is in standardized units.
    """
    if m1 < 1:
        raise DataError("m1 must be >= 1")
    if ridge < 0:
        raise DataError("ridge must be >= 0")
    mu = ds.covariates.mean(axis=0)
    sd = ds.covariates.std(axis=0)
    sd[sd < 1e-12] = 1.0
    xs = (ds.covariates - mu) / sd

    seed = _master_seed(rng)
    n, J = ds.n, ds.treatment_count
    out = np.empty((m1, n, J))
    for r, gen in enumerate(_child_rngs(seed, m1)):
        w = gen.dirichlet(np.ones(n)) * n
        out[r] = _fit_multilogit_weighted(xs, ds.treatment, J, w, ridge, max_iter)
    return GpsDraws(draws=_clamp_renorm(out), model="multilogit", seed=seed)


# ---------------------------------------------------------------------------
# cache


def dataset_hash(ds: ObservationalDataset) -> str:
    h = hashlib.sha256()
    h.update(ds.covariates.tobytes())
    h.update(ds.treatment.tobytes())
    h.update(ds.outcome.tobytes())
    h.update(",".join(ds.covariate_names).encode())
    return h.hexdigest()[:16]


def cache_path(cache_dir, ds: ObservationalDataset, model_config: str, seed: int) -> Path:
    key = hashlib.sha256(
        f"{dataset_hash(ds)}|{model_config}|{seed}".encode()
    ).hexdigest()[:24]
    return Path(cache_dir) / f"gps_{key}.npz"


def save_gps(path, draws: GpsDraws) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path, draws=draws.draws, model=np.array(draws.model), seed=np.array(draws.seed)
    )


def load_gps(path) -> GpsDraws | None:
    """Stored draws, or None when the file is absent or unreadable."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with np.load(path) as z:
            return GpsDraws(
                draws=z["draws"], model=str(z["model"]), seed=int(z["seed"])
            )
    except Exception:
        return None
