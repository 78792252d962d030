"""Synthetic-data lab: generators with known ground truth, oracles, and metrics.

Each generator returns a SyntheticTruth carrying two views of the simulated
cohort: the observed dataset an analyst would get (hidden covariates dropped)
and an oracle dataset with everything visible. The potential-outcome matrix
and the assignment probabilities travel along, so true effects and true
confounding functions are computed from the cohort itself instead of being
re-derived from the mechanism by hand.

Replication studies and contour sweeps drive the estimation engine through
its public entry points only; nothing here reaches into engine internals.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from ._rng import SIM_STREAM, subseed
from . import sumtrees
from .confounding import (
    ConfoundingSpec,
    PointMass,
    Uniform,
    build_strategy,
    residual_sd,
    stratified,
)
from .dataset import ObservationalDataset, make_dataset
from .engine import EngineConfig, GpsModelConfig, run_sensitivity
from .errors import DataError

MAX_CONTOUR_CELLS = 10_000

SCENARIOS = (
    "illustrative",
    "illustrative-nointeraction",
    "contextual-umc1",
    "contextual-umc2",
    "contextual-umc3",
)

STRATEGY_NAMES = (
    "naive",
    "oracle",
    "I",
    "I-scalar",
    "I3",
    "II",
    "II-scalar",
    "III-up",
    "III-down",
    "IV",
)

_PAIRS = ((1, 2), (1, 3), (2, 3))


# ---------------------------------------------------------------------------
# truth bundle


@dataclass(frozen=True)
class SyntheticTruth:
    """Simulated cohort with its generating truth attached.

    potential_outcomes: (n, J) matrix of 0/1 floats, one column per arm.
    unmeasured: the hidden covariate values, (n,) or (n, k).
    true_gps: the assignment probabilities each unit's arm was drawn from.
    """

    dataset: ObservationalDataset
    oracle_dataset: ObservationalDataset
    potential_outcomes: np.ndarray
    unmeasured: np.ndarray
    true_gps: np.ndarray
    config: Mapping[str, object]

    def __post_init__(self):
        po = np.ascontiguousarray(np.asarray(self.potential_outcomes, dtype=np.float64))
        gps = np.ascontiguousarray(np.asarray(self.true_gps, dtype=np.float64))
        um = np.ascontiguousarray(np.asarray(self.unmeasured, dtype=np.float64))
        ds = self.dataset
        n, J = ds.n, ds.treatment_count
        if po.shape != (n, J):
            raise DataError(f"potential outcomes must be shaped ({n}, {J}), got {po.shape}")
        if gps.shape != (n, J):
            raise DataError(f"true GPS must be shaped ({n}, {J}), got {gps.shape}")
        if um.ndim not in (1, 2) or um.shape[0] != n:
            raise DataError("unmeasured covariates must be (n,) or (n, k)")
        if not np.isfinite(gps).all() or (gps < 0).any():
            raise DataError("true GPS entries must be finite and nonnegative")
        if np.abs(gps.sum(axis=1) - 1.0).max() > 1e-8:
            raise DataError("true GPS rows must sum to 1")
        picked = po[np.arange(n), ds.treatment - 1]
        if not np.array_equal(picked, ds.outcome.astype(np.float64)):
            raise DataError("observed outcome disagrees with the selected potential outcome")
        other = self.oracle_dataset
        if other.n != n or not np.array_equal(other.treatment, ds.treatment):
            raise DataError("oracle view must cover the same units and arms")
        if not np.array_equal(other.outcome, ds.outcome):
            raise DataError("oracle view must carry the same outcomes")
        for arr in (po, gps, um):
            arr.setflags(write=False)
        object.__setattr__(self, "potential_outcomes", po)
        object.__setattr__(self, "true_gps", gps)
        object.__setattr__(self, "unmeasured", um)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def treatment_count(self) -> int:
        return self.dataset.treatment_count


def _check_pair(truth: SyntheticTruth, pair) -> tuple[int, int]:
    j, k = int(pair[0]), int(pair[1])
    J = truth.treatment_count
    if not (1 <= j <= J and 1 <= k <= J) or j == k:
        raise DataError(f"pair must name two distinct arms in 1..{J}, got ({j}, {k})")
    return j, k


def true_c0(truth: SyntheticTruth, pair) -> float:
    """Arm j's mean potential outcome contrasted between units observed under
    j and units observed under k: the scalar confounding value the cohort
    actually realized."""
    j, k = _check_pair(truth, pair)
    po_j = truth.potential_outcomes[:, j - 1]
    a = truth.dataset.treatment
    in_j, in_k = a == j, a == k
    if not in_j.any() or not in_k.any():
        raise DataError(f"pair ({j}, {k}): an arm has no units")
    return float(po_j[in_j].mean() - po_j[in_k].mean())


def true_c(truth: SyntheticTruth, pair, x_value: float, column: int = 0) -> float:
    """Stratified variant of true_c0: condition on one observed covariate value."""
    j, k = _check_pair(truth, pair)
    col = truth.dataset.covariates[:, int(column)]
    mask = col == float(x_value)
    if not mask.any():
        raise DataError(f"no units with covariate column {column} == {x_value}")
    po_j = truth.potential_outcomes[:, j - 1]
    a = truth.dataset.treatment
    in_j = mask & (a == j)
    in_k = mask & (a == k)
    if not in_j.any() or not in_k.any():
        raise DataError(f"stratum {x_value}: pair ({j}, {k}) has an empty arm")
    return float(po_j[in_j].mean() - po_j[in_k].mean())


def true_cate(truth: SyntheticTruth, pair) -> float:
    """This cohort's realized average effect: mean of Y(j) - Y(k) over everyone."""
    j, k = _check_pair(truth, pair)
    po = truth.potential_outcomes
    return float(po[:, j - 1].mean() - po[:, k - 1].mean())


# ---------------------------------------------------------------------------
# small shared draw helpers


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _draw_arms(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    v = rng.random(probs.shape[0])
    a = (v[:, None] > cum).sum(axis=1) + 1
    return np.minimum(a, probs.shape[1]).astype(np.int64)


# ---------------------------------------------------------------------------
# illustrative generator: one observed binary covariate, one hidden


_ILL_TREAT = ((0.2, 0.4), (-0.3, 0.8), (0.1, 0.5))  # (x1, u) logit slopes per arm
_ILL_NOISE_SD = 0.1
_ILL_OUT = {
    # (x1, u, x1*u) logistic outcome coefficients per arm
    True: ((-0.8, -1.2, 1.5), (-0.6, 0.5, 0.3), (0.3, 1.3, 0.2)),
    False: ((0.1, -1.8, 0.0), (-0.7, 1.6, 0.0), (-0.5, 2.1, 0.0)),
}
_ILL_P_X1 = 0.4
_ILL_P_U = 0.5


def gen_illustrative(n: int, interaction: bool = True, seed: int = 0) -> SyntheticTruth:
    """Three-arm cohort driven by one observed and one hidden binary covariate.

    Assignment logits get independent N(0, 0.1) noise per arm; the outcome
    surfaces optionally carry an x1*u interaction. Draw order is fixed
    (x1, u, noise, arm, potential outcomes), so a seed pins the cohort.
    """
    n = int(n)
    if n < 100:
        raise DataError("need n >= 100")
    rng = np.random.default_rng(seed)
    x1 = (rng.random(n) < _ILL_P_X1).astype(np.float64)
    u = (rng.random(n) < _ILL_P_U).astype(np.float64)
    noise = rng.normal(0.0, _ILL_NOISE_SD, size=(n, 3))
    logits = np.column_stack([bx * x1 + bu * u for bx, bu in _ILL_TREAT]) + noise
    gps = _softmax_rows(logits)
    a = _draw_arms(rng, gps)
    coef = _ILL_OUT[bool(interaction)]
    probs = np.column_stack(
        [special.expit(cx * x1 + cu * u + cxu * x1 * u) for cx, cu, cxu in coef]
    )
    po = (rng.random((n, 3)) < probs).astype(np.float64)
    y = po[np.arange(n), a - 1]
    observed = make_dataset(
        x1[:, None], a, y, covariate_names=("x1",), covariate_kinds=("indicator",)
    )
    oracle = make_dataset(
        np.column_stack([x1, u]),
        a,
        y,
        covariate_names=("x1", "u"),
        covariate_kinds=("indicator", "indicator"),
    )
    return SyntheticTruth(
        dataset=observed,
        oracle_dataset=oracle,
        potential_outcomes=po,
        unmeasured=u,
        true_gps=gps,
        config={
            "generator": "illustrative",
            "n": n,
            "interaction": bool(interaction),
            "seed": int(seed),
        },
    )


def true_cates_illustrative(interaction: bool = True) -> dict[tuple[int, int], float]:
    """Exact pairwise effects for the illustrative mechanism; the outcome
    surfaces average over two Bernoullis in closed form."""
    coef = _ILL_OUT[bool(interaction)]
    means = []
    for cx, cu, cxu in coef:
        m = 0.0
        for x1v, px in ((0.0, 1.0 - _ILL_P_X1), (1.0, _ILL_P_X1)):
            for uv, pu in ((0.0, 1.0 - _ILL_P_U), (1.0, _ILL_P_U)):
                m += px * pu * float(special.expit(cx * x1v + cu * uv + cxu * x1v * uv))
        means.append(m)
    return {
        (1, 2): means[0] - means[1],
        (1, 3): means[0] - means[2],
        (2, 3): means[1] - means[2],
    }


@lru_cache(maxsize=1)
def _illustrative_gps_by_x1() -> np.ndarray:
    # marginal assignment probabilities given x1 alone: average the softmax
    # over the hidden covariate and the three noise terms (9-point
    # Gauss-Hermite per dimension, accurate far past any tolerance used here)
    nodes, weights = np.polynomial.hermite_e.hermegauss(9)
    w = weights / weights.sum()
    grid = np.stack(np.meshgrid(nodes, nodes, nodes, indexing="ij"), axis=-1).reshape(-1, 3)
    gw = (w[:, None, None] * w[None, :, None] * w[None, None, :]).reshape(-1)
    out = np.zeros((2, 3))
    for x1v in (0, 1):
        acc = np.zeros(3)
        for uv, pu in ((0.0, 1.0 - _ILL_P_U), (1.0, _ILL_P_U)):
            base = np.array([bx * x1v + bu * uv for bx, bu in _ILL_TREAT])
            acc += pu * (gw[:, None] * _softmax_rows(base[None, :] + _ILL_NOISE_SD * grid)).sum(axis=0)
        out[x1v] = acc
    out.setflags(write=False)
    return out


def illustrative_marginal_gps(x1) -> np.ndarray:
    """P(arm | x1) with the hidden covariate and assignment noise averaged out."""
    x1 = np.asarray(x1, dtype=np.float64)
    return _illustrative_gps_by_x1()[(x1 > 0.5).astype(np.int64)]


# ---------------------------------------------------------------------------
# contextual generator: 15 covariates, nonlinear assignment, three UMC views


_COV_NAMES = tuple(f"x{i}" for i in range(1, 16))
# x9/x10 are categorical but travel as integer codes, so a saved cohort
# reloads to the identical matrix
_COV_KINDS = (
    "numeric", "numeric", "numeric", "numeric", "numeric",
    "indicator", "indicator", "indicator", "ordinal", "ordinal",
    "numeric", "numeric", "numeric", "numeric", "numeric",
)

_UMC_HIDDEN = {"i": (4,), "ii": (13,), "iii": (14, 15)}

_TRANSFORM_ARITY = {"square": 2, "product": 3, "expscale": 3, "gt": 3}


def _validate_transforms(transforms, label: str) -> None:
    for t in transforms:
        if not t or t[0] not in _TRANSFORM_ARITY:
            raise DataError(
                f"{label}: unknown transform {t[0] if t else t!r}; "
                f"choose from {tuple(_TRANSFORM_ARITY)}"
            )
        if len(t) != _TRANSFORM_ARITY[t[0]]:
            raise DataError(f"{label}: transform {t!r} has the wrong arity")
        ids = t[1:3] if t[0] == "product" else t[1:2]
        for i in ids:
            if not 1 <= int(i) <= 15:
                raise DataError(f"{label}: covariate id {i} outside 1..15")


def transform_columns(x: np.ndarray, transforms) -> np.ndarray:
    """Evaluate declarative column transforms on the raw covariate matrix.

    Transforms use 1-based covariate ids matching the column names x1..x15:
    ("square", i), ("product", i, j), ("expscale", i, scale) for exp(scale*xi),
    ("gt", i, threshold) for the 0/1 indicator of xi > threshold.
    """
    x = np.asarray(x, dtype=np.float64)
    cols = np.empty((x.shape[0], len(transforms)), dtype=np.float64)
    for t_idx, t in enumerate(transforms):
        kind = t[0]
        if kind == "square":
            cols[:, t_idx] = x[:, int(t[1]) - 1] ** 2
        elif kind == "product":
            cols[:, t_idx] = x[:, int(t[1]) - 1] * x[:, int(t[2]) - 1]
        elif kind == "expscale":
            cols[:, t_idx] = np.exp(float(t[2]) * x[:, int(t[1]) - 1])
        elif kind == "gt":
            cols[:, t_idx] = (x[:, int(t[1]) - 1] > float(t[2])).astype(np.float64)
        else:
            raise DataError(f"unknown transform {kind!r}")
    return cols


def _draw_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    x = np.empty((n, 15), dtype=np.float64)
    x[:, 0] = rng.normal(0.0, 1.0, n)
    x[:, 1] = rng.uniform(-1.0, 1.0, n)
    x[:, 2] = rng.beta(3.0, 3.0, n)
    x[:, 3] = rng.normal(-1.0, 1.0, n)
    x[:, 4] = rng.normal(1.0, 1.0, n)
    x[:, 5] = (rng.random(n) < 0.6).astype(np.float64)
    x[:, 6] = (rng.random(n) < 0.3).astype(np.float64)
    x[:, 7] = (rng.random(n) < 0.5).astype(np.float64)
    x[:, 8] = rng.choice([1.0, 2.0, 3.0], size=n, p=[0.3, 0.2, 0.5])
    x[:, 9] = rng.choice([1.0, 2.0, 3.0], size=n, p=[0.1, 0.8, 0.1])
    x[:, 10] = rng.standard_t(10.0, n)
    x[:, 11] = rng.gamma(2.0, 0.5, n)  # shape 2, rate 2
    x[:, 12] = 1.0 / rng.gamma(20.0, 1.0 / 20.0, n)  # inverse-gamma(20, 20)
    x[:, 13] = rng.normal(-1.0, 2.0, n)
    x[:, 14] = rng.normal(1.0, 2.0, n)
    return x


# The interaction products below give the hidden columns of views ii and iii
# their entanglement with x11/x12 (and with each other for view iii); x4 stays
# additive and independent, the simplest hidden-confounder case.
_CTX_TREAT_LINEAR = (1, 2, 4, 5, 6, 8, 9, 11, 12, 13, 14, 15)
_CTX_TREAT_TRANSFORMS = (
    ("square", 1),
    ("product", 11, 13),
    ("product", 12, 13),
    ("product", 14, 15),
    ("product", 11, 14),
    ("product", 12, 15),
    ("product", 11, 15),
    ("product", 12, 14),
    ("expscale", 2, 0.5),
    ("gt", 12, 0.8392),  # population median of x12
)
_CTX_OUT_LINEAR = (1, 3, 4, 5, 7, 8, 10, 11, 12, 13, 14, 15)
_CTX_OUT_TRANSFORMS = (
    ("square", 3),
    ("product", 11, 13),
    ("product", 12, 13),
    ("product", 14, 15),
    ("product", 11, 14),
    ("product", 12, 15),
    ("product", 11, 15),
    ("product", 12, 14),
    ("expscale", 1, 0.5),
    ("gt", 11, 0.0),  # population median of x11
)

# Coefficients are frozen output of scripts/calibrate_contextual.py; see that
# script for the targets each number was tuned against. The structure worth
# knowing when reading them: x4 pulls arms 1 and 3 apart while carrying a
# strong common outcome slope (the hidden confounder of view i), and the
# x5/x14 assignment loadings were solved so that the confounding x4 injects
# into raw arm-level event rates is offset by measured-covariate selection.
# A fit that adjusts for the measured columns removes the offset but not the
# hidden part, which is what the view is for.
_CTX_XI_L = (
    (0.200113, -0.259813, 0.848641, 0.294498, 0.306255, -0.200000,
     0.114755, 0.134318, 0.283355, -1.007297, 0.221928, -0.049927),
    (-0.150085, 0.346417, 0.000000, 0.000000, -0.306255, 0.300000,
     -0.114755, -0.179090, 0.212516, 1.208756, -0.049972, 0.074890),
    (0.100057, 0.173209, -0.998401, -1.365222, 0.204170, 0.200000,
     0.057377, 0.089545, -0.354194, -0.604378, -0.731291, 0.049927),
)
_CTX_XI_NL = (
    (0.074372, 0.173898, -0.174558, 0.021380, -0.055919, 0.041157,
     0.028036, -0.027439, 0.469187, -0.280000),
    (-0.049582, -0.144915, 0.261837, -0.028507, 0.041939, -0.027438,
     -0.042055, 0.054878, -0.351891, 0.420000),
    (0.024791, 0.115932, 0.130918, 0.035633, 0.027959, -0.054876,
     0.028036, 0.041159, -0.234594, -0.210000),
)
_CTX_TAUS = (-0.647439, 2.431036, -0.287984)
_CTX_ETA_L = (
    (0.250142, 2.114919, 1.996802, -1.802396, 0.654565, -0.500000,
     0.224165, 0.268636, -0.425032, 1.611675, -0.549689, -0.074890),
    (-0.200113, -1.586189, 1.996802, 0.000000, -0.436377, 0.400000,
     -0.224165, -0.223863, 0.566710, -1.410216, 0.000000, 0.124817),
    (0.300170, 1.057460, 1.996802, -1.602129, 0.327283, 0.600000,
     0.112082, 0.179090, 0.425032, 1.208756, -0.549689, 0.099854),
)
_CTX_ETA_NL = (
    (0.774905, 0.207021, -0.249368, 0.030543, -0.059913, 0.039197,
     0.040052, -0.039199, 0.165677, -0.400000),
    (-0.516603, -0.165617, 0.311711, -0.030543, 0.039942, -0.058796,
     -0.040052, 0.058798, -0.165677, 0.500000),
    (0.516603, 0.124213, 0.124684, 0.040724, 0.039942, -0.039197,
     0.020026, 0.039199, 0.082839, -0.200000),
)

# larger gamma spreads the assignment logits, thinning the worst-unit
# probability mass; values chosen so the three levels order cleanly
OVERLAP_GAMMAS = {"strong": 1.0, "moderate": 2.0, "weak": 3.5}
RATIO_ALPHAS = {
    "1:1:1": (0.0, -2.025152, -0.669602),
    "1:10:9": (0.0, 1.098978, 2.695703),
}

# realized-cohort effect targets for the default outcome surfaces, measured
# once on a 10^6-unit draw by the calibration script
CONTEXTUAL_TRUE_CATES = {(1, 2): 0.05, (1, 3): -0.11, (2, 3): -0.16}


@dataclass(frozen=True)
class ContextualDgpConfig:
    """Fifteen-covariate cohort spec: nonlinear assignment, nonparallel
    outcome surfaces, and a choice of which covariates the observed view hides.

    gamma scales the covariate part of the assignment logits (larger means
    sparser overlap); alphas set the arm ratio; umc is "i" (hide x4),
    "ii" (hide x13) or "iii" (hide x14 and x15). Covariate ids in the
    transform lists are 1-based and match the column names x1..x15.
    """

    n: int = 1500
    alphas: tuple[float, float, float] = RATIO_ALPHAS["1:1:1"]
    gamma: float = OVERLAP_GAMMAS["strong"]
    umc: str = "i"
    treat_linear: tuple[int, ...] = _CTX_TREAT_LINEAR
    treat_transforms: tuple = _CTX_TREAT_TRANSFORMS
    xi_linear: tuple = _CTX_XI_L
    xi_nonlinear: tuple = _CTX_XI_NL
    out_linear: tuple[int, ...] = _CTX_OUT_LINEAR
    out_transforms: tuple = _CTX_OUT_TRANSFORMS
    taus: tuple[float, float, float] = _CTX_TAUS
    eta_linear: tuple = _CTX_ETA_L
    eta_nonlinear: tuple = _CTX_ETA_NL
    seed: int = 0

    def __post_init__(self):
        if self.n < 100:
            raise DataError("need n >= 100")
        if self.umc not in _UMC_HIDDEN:
            raise DataError(f"umc must be one of {tuple(_UMC_HIDDEN)}, got {self.umc!r}")
        if self.gamma < 0:
            raise DataError("gamma must be nonnegative")
        if len(self.alphas) != 3 or len(self.taus) != 3:
            raise DataError("alphas and taus must have one entry per arm")
        for ids, label in ((self.treat_linear, "treat_linear"), (self.out_linear, "out_linear")):
            if any(not 1 <= int(i) <= 15 for i in ids):
                raise DataError(f"{label}: covariate ids must be in 1..15")
        _validate_transforms(self.treat_transforms, "treat_transforms")
        _validate_transforms(self.out_transforms, "out_transforms")
        checks = (
            ("xi_linear", self.xi_linear, len(self.treat_linear)),
            ("xi_nonlinear", self.xi_nonlinear, len(self.treat_transforms)),
            ("eta_linear", self.eta_linear, len(self.out_linear)),
            ("eta_nonlinear", self.eta_nonlinear, len(self.out_transforms)),
        )
        for name, mat, width in checks:
            if len(mat) != 3 or any(len(row) != width for row in mat):
                raise DataError(f"{name} must be 3 coefficient rows of length {width}")


def contextual_default(
    n: int = 1500,
    umc: str = "i",
    overlap: str = "strong",
    ratio: str = "1:1:1",
    seed: int = 0,
) -> ContextualDgpConfig:
    """Shipped configuration with named overlap level and arm ratio."""
    if overlap not in OVERLAP_GAMMAS:
        raise DataError(f"overlap must be one of {tuple(OVERLAP_GAMMAS)}, got {overlap!r}")
    if ratio not in RATIO_ALPHAS:
        raise DataError(f"ratio must be one of {tuple(RATIO_ALPHAS)}, got {ratio!r}")
    return ContextualDgpConfig(
        n=n,
        alphas=RATIO_ALPHAS[ratio],
        gamma=OVERLAP_GAMMAS[overlap],
        umc=umc,
        seed=seed,
    )


def gen_contextual(cfg: ContextualDgpConfig) -> SyntheticTruth:
    """Cohort from a ContextualDgpConfig. Draw order is fixed (covariates in
    column order, arm, potential outcomes), so a seed pins the cohort."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    x = _draw_covariates(rng, n)
    xa = x[:, [int(i) - 1 for i in cfg.treat_linear]]
    qa = transform_columns(x, cfg.treat_transforms)
    xi_l = np.asarray(cfg.xi_linear, dtype=np.float64)
    xi_nl = np.asarray(cfg.xi_nonlinear, dtype=np.float64)
    logits = np.asarray(cfg.alphas, dtype=np.float64)[None, :] + cfg.gamma * (
        xa @ xi_l.T + qa @ xi_nl.T
    )
    gps = _softmax_rows(logits)
    a = _draw_arms(rng, gps)
    xy = x[:, [int(i) - 1 for i in cfg.out_linear]]
    qy = transform_columns(x, cfg.out_transforms)
    eta_l = np.asarray(cfg.eta_linear, dtype=np.float64)
    eta_nl = np.asarray(cfg.eta_nonlinear, dtype=np.float64)
    probs = special.expit(
        np.asarray(cfg.taus, dtype=np.float64)[None, :] + xy @ eta_l.T + qy @ eta_nl.T
    )
    po = (rng.random((n, 3)) < probs).astype(np.float64)
    y = po[np.arange(n), a - 1]
    hidden = _UMC_HIDDEN[cfg.umc]
    keep = [i for i in range(1, 16) if i not in hidden]
    observed = make_dataset(
        x[:, [i - 1 for i in keep]],
        a,
        y,
        covariate_names=tuple(_COV_NAMES[i - 1] for i in keep),
        covariate_kinds=tuple(_COV_KINDS[i - 1] for i in keep),
    )
    oracle = make_dataset(x, a, y, covariate_names=_COV_NAMES, covariate_kinds=_COV_KINDS)
    return SyntheticTruth(
        dataset=observed,
        oracle_dataset=oracle,
        potential_outcomes=po,
        unmeasured=x[:, [i - 1 for i in hidden]],
        true_gps=gps,
        config={"generator": "contextual", **asdict(cfg)},
    )


# ---------------------------------------------------------------------------
# metrics


def metrics(estimates, truth: float) -> dict[str, float]:
    """AAB, RMSE and interval coverage over replications.

    estimates: (R,) point estimates, or (R, 3) rows of
    (estimate, lower95, upper95). Without intervals coverage is NaN.
    """
    arr = np.asarray(estimates, dtype=np.float64)
    truth = float(truth)
    if arr.ndim == 1:
        est, cov = arr, float("nan")
    elif arr.ndim == 2 and arr.shape[1] == 3:
        est = arr[:, 0]
        cov = float(((arr[:, 1] <= truth) & (truth <= arr[:, 2])).mean())
    else:
        raise DataError("estimates must be (R,) or (R, 3) of (estimate, lower, upper)")
    if est.shape[0] < 1:
        raise DataError("need at least one replication")
    dev = est - truth
    return {
        "AAB": float(np.abs(dev).mean()),
        "RMSE": float(np.sqrt((dev**2).mean())),
        "coverage": cov,
    }


# ---------------------------------------------------------------------------
# strategy specs and the replication runner


def strategy_spec(
    truth: SyntheticTruth,
    strategy: str,
    *,
    stratified_column: int | None = None,
    h: float = 1.0,
    sigma_hat: float | None = None,
    direction: str | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> ConfoundingSpec:
    """Confounding-function priors for one sensitivity strategy, anchored at
    the cohort's realized c values.

    With stratified_column set, strategies I-III build their prior per stratum
    of that observed covariate column; IV is the natural-bounds uniform either
    way. pairs restricts the spec to those ordered pairs (default: all).
    """
    strat = str(strategy).upper()
    J = truth.treatment_count
    if pairs is None:
        pairs = [(j, k) for j in range(1, J + 1) for k in range(1, J + 1) if j != k]
    priors: dict[tuple[int, int], object] = {}
    for pair in pairs:
        j, k = _check_pair(truth, pair)
        if strat == "IV":
            priors[(j, k)] = Uniform(-1.0, 1.0)
        elif stratified_column is None:
            c0 = true_c0(truth, (j, k))
            priors[(j, k)] = build_strategy(strat, c0, h=h, sigma_hat=sigma_hat, direction=direction)
        else:
            col = truth.dataset.covariates[:, stratified_column]
            table = {
                float(v): build_strategy(
                    strat,
                    true_c(truth, (j, k), float(v), column=stratified_column),
                    h=h,
                    sigma_hat=sigma_hat,
                    direction=direction,
                )
                for v in np.unique(col)
            }
            priors[(j, k)] = stratified(stratified_column, table)
    return ConfoundingSpec(priors=priors)


def scenario_truths(scenario: str) -> dict[tuple[int, int], float]:
    """Long-run pairwise effects each scenario's estimates are judged against."""
    if scenario == "illustrative":
        return true_cates_illustrative(True)
    if scenario == "illustrative-nointeraction":
        return true_cates_illustrative(False)
    if scenario in ("contextual-umc1", "contextual-umc2", "contextual-umc3"):
        return dict(CONTEXTUAL_TRUE_CATES)
    raise DataError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")


def _gen_scenario(scenario: str, n: int, overlap: str, ratio: str, seed: int) -> SyntheticTruth:
    if scenario == "illustrative":
        return gen_illustrative(n, True, seed)
    if scenario == "illustrative-nointeraction":
        return gen_illustrative(n, False, seed)
    if scenario in ("contextual-umc1", "contextual-umc2", "contextual-umc3"):
        umc = {"contextual-umc1": "i", "contextual-umc2": "ii", "contextual-umc3": "iii"}[scenario]
        return gen_contextual(contextual_default(n=n, umc=umc, overlap=overlap, ratio=ratio, seed=seed))
    raise DataError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")


def _run_strategy(
    truth: SyntheticTruth,
    strategy: str,
    illustrative: bool,
    m1: int,
    m2: int,
    trees: sumtrees.SumOfTreesConfig,
    eng_seed: int,
    h: float,
    direction: str,
    cache_dir: str | None,
) -> dict[tuple[int, int], tuple[float, float, float]]:
    ds = truth.dataset
    strat_col = 0 if illustrative else None
    if illustrative:
        gps_cfg = GpsModelConfig(model="stratified", strat_columns=(0,))
        oracle_gps = GpsModelConfig(model="stratified", strat_columns=(0, 1))
    else:
        gps_cfg = GpsModelConfig(model="multilogit")
        oracle_gps = GpsModelConfig(model="multilogit")

    # (view, spec, m1, m2, gps config, pairs to read off this run)
    runs: list[tuple] = []
    if strategy == "naive":
        # all-zero spec: the nested draws would be identical, one fit suffices
        runs.append((ds, ConfoundingSpec({}), 1, 1, gps_cfg, _PAIRS))
    elif strategy == "oracle":
        runs.append((truth.oracle_dataset, ConfoundingSpec({}), 1, 1, oracle_gps, _PAIRS))
    elif strategy == "I3":
        # per evaluated pair, only that pair's own confounding is corrected
        for j, k in _PAIRS:
            spec = strategy_spec(truth, "I", stratified_column=strat_col, pairs=[(j, k), (k, j)])
            runs.append((ds, spec, m1, m2, gps_cfg, ((j, k),)))
    else:
        name, _, flavor = strategy.partition("-")
        col = None if flavor == "scalar" else strat_col
        kw: dict = {}
        if name in ("II", "III"):
            kw["sigma_hat"] = residual_sd(ds)
            kw["h"] = h
        if name == "III":
            kw["direction"] = flavor if flavor in ("up", "down") else direction
        spec = strategy_spec(truth, name, stratified_column=col, **kw)
        runs.append((ds, spec, m1, m2, gps_cfg, _PAIRS))

    out: dict[tuple[int, int], tuple[float, float, float]] = {}
    for view, spec, m1e, m2e, gcfg, read in runs:
        cfg = EngineConfig(
            m1=m1e, m2=m2e, estimand="CATE", gps=gcfg, trees=trees,
            seed=eng_seed, jobs=1, gps_cache_dir=cache_dir,
        )
        res = run_sensitivity(view, spec, cfg)
        for j, k in read:
            e = res.effect(j, k)
            out[(j, k)] = (e.mean, e.lower95, e.upper95)
    return out


@dataclass(frozen=True)
class ReplicationStudy:
    """Per-strategy, per-pair replication results plus the scenario truths."""

    scenario: str
    strategies: tuple[str, ...]
    reps: int
    n: int
    truths: Mapping[tuple[int, int], float]
    results: Mapping[tuple[str, tuple[int, int]], np.ndarray]  # (reps, 3)

    def estimates(self, strategy: str, pair) -> np.ndarray:
        key = (strategy, (int(pair[0]), int(pair[1])))
        if key not in self.results:
            raise DataError(f"no results stored for strategy {strategy!r}, pair {key[1]}")
        return self.results[key]

    def metric_rows(self) -> list[dict]:
        rows = []
        for s in self.strategies:
            for pair in _PAIRS:
                m = metrics(self.results[(s, pair)], self.truths[pair])
                rows.append(
                    {
                        "scenario": self.scenario,
                        "strategy": s,
                        "pair": f"{pair[0]}v{pair[1]}",
                        "truth": self.truths[pair],
                        "reps": self.reps,
                        **m,
                    }
                )
        return rows


def run_replications(
    scenario: str,
    strategies: Sequence[str],
    reps: int,
    *,
    n: int = 1500,
    overlap: str = "strong",
    ratio: str = "1:1:1",
    m1: int = 10,
    m2: int = 10,
    trees: sumtrees.SumOfTreesConfig | None = None,
    h: float = 1.0,
    direction: str = "down",
    seed: int = 0,
    jobs: int = 1,
    gps_cache_dir: str | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> ReplicationStudy:
    """Replicated simulation study.

    Each replication draws a fresh cohort from (seed, replication index) and
    runs every requested strategy on it with one shared engine seed, so
    strategy comparisons are paired: same data, same GPS draws, and prior
    draws coupled wherever the specs name the same pairs.
    """
    strategies = tuple(dict.fromkeys(strategies))  # dedupe, keep order
    for s in strategies:
        if s not in STRATEGY_NAMES:
            raise DataError(f"unknown strategy {s!r}; choose from {STRATEGY_NAMES}")
    if not strategies:
        raise DataError("need at least one strategy")
    reps = int(reps)
    if reps < 1:
        raise DataError("need reps >= 1")
    truths = scenario_truths(scenario)
    illustrative = scenario.startswith("illustrative")
    tree_cfg = trees if trees is not None else sumtrees.SumOfTreesConfig.fast()

    def one_rep(r: int) -> dict[tuple[str, tuple[int, int]], tuple[float, float, float]]:
        truth = _gen_scenario(scenario, n, overlap, ratio, subseed(seed, SIM_STREAM, r, 0))
        eng_seed = subseed(seed, SIM_STREAM, r, 1)
        out = {}
        for s in strategies:
            rows = _run_strategy(
                truth, s, illustrative, m1, m2, tree_cfg, eng_seed, h, direction, gps_cache_dir
            )
            for pair, row in rows.items():
                out[(s, pair)] = row
        return out

    results = {(s, p): np.empty((reps, 3)) for s in strategies for p in _PAIRS}
    if jobs == 1:
        for r in range(reps):
            for key, row in one_rep(r).items():
                results[key][r] = row
            if progress is not None:
                progress(r + 1, reps)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(one_rep, r): r for r in range(reps)}
            done = 0
            for fut, r in futures.items():
                for key, row in fut.result().items():
                    results[key][r] = row
                done += 1
                if progress is not None:
                    progress(done, reps)
    for arr in results.values():
        arr.setflags(write=False)
    return ReplicationStudy(
        scenario=scenario,
        strategies=strategies,
        reps=reps,
        n=n,
        truths=truths,
        results=results,
    )


# ---------------------------------------------------------------------------
# contour sweep


@dataclass(frozen=True)
class ContourGrid:
    """Inclusive (lo, hi, step) axes for a pair's two confounding directions."""

    jk: tuple[float, float, float]
    kj: tuple[float, float, float]

    def __post_init__(self):
        for name, (lo, hi, step) in (("jk", self.jk), ("kj", self.kj)):
            if step <= 0:
                raise DataError(f"{name}: step must be positive")
            if lo > hi:
                raise DataError(f"{name}: lo must not exceed hi")
            if lo < -1.0 or hi > 1.0:
                raise DataError(f"{name}: grid must stay within [-1, 1]")

    def axis(self, which: int) -> np.ndarray:
        lo, hi, step = self.jk if which == 0 else self.kj
        vals = np.arange(lo, hi + 0.5 * step, step)
        return np.round(vals[vals <= hi + 1e-12], 12)


@dataclass(frozen=True)
class ContourResult:
    pair: tuple[int, int]
    c_jk: np.ndarray
    c_kj: np.ndarray
    estimates: np.ndarray  # (len(c_jk), len(c_kj)) posterior-mean effects

    def rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(cj), float(ck), float(self.estimates[i1, i2]))
            for i1, cj in enumerate(self.c_jk)
            for i2, ck in enumerate(self.c_kj)
        ]


def contour_grid(
    ds: ObservationalDataset,
    pair,
    grid: ContourGrid,
    other_pair_priors: ConfoundingSpec,
    cfg: EngineConfig,
    progress: Callable[[int, int], None] | None = None,
) -> ContourResult:
    """Engine sweep over point-mass values for one pair's two confounding
    directions, all other pairs' priors held as supplied.

    Every cell runs with the same engine seed, so GPS draws are shared across
    the grid and the sweep isolates the effect of the swept c values.
    """
    j, k = int(pair[0]), int(pair[1])
    if j == k:
        raise DataError("pair must name two distinct arms")
    v1, v2 = grid.axis(0), grid.axis(1)
    cells = len(v1) * len(v2)
    if cells > MAX_CONTOUR_CELLS:
        raise DataError(
            f"grid has {cells} cells (cap {MAX_CONTOUR_CELLS}); each cell runs "
            f"m1*m2={cfg.m1 * cfg.m2} tree fits, {cells * cfg.m1 * cfg.m2} fits "
            f"in total — coarsen the steps"
        )
    base = dict(other_pair_priors.priors)
    if (j, k) in base or (k, j) in base:
        raise DataError(f"other_pair_priors must not name the swept pair ({j}, {k})")
    est = np.empty((len(v1), len(v2)), dtype=np.float64)
    done = 0
    for i1, c1 in enumerate(v1):
        for i2, c2 in enumerate(v2):
            spec = ConfoundingSpec(
                {**base, (j, k): PointMass(float(c1)), (k, j): PointMass(float(c2))}
            )
            res = run_sensitivity(ds, spec, cfg)
            est[i1, i2] = float(res.effect(j, k).mean)
            done += 1
            if progress is not None:
                progress(done, cells)
    est.setflags(write=False)
    return ContourResult(pair=(j, k), c_jk=v1, c_kj=v2, estimates=est)
