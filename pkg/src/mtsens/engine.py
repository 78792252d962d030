"""Nested Monte Carlo orchestration.

For each of M1 propensity-score draws and M2 confounding-function draws, the
observed outcomes are bias-corrected, a sum-of-trees model is fit to
(covariates, treatment) -> corrected outcome, and counterfactual predictions
at every arm yield per-draw effect samples. The M1 x M2 x K samples are
pooled; intervals are equal-tailed empirical quantiles of the pooled sample,
not a combining rule over per-fit variances.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from ._rng import FIT_STREAM, GPS_STREAM, SENS_STREAM, subseed, substream
from .confounding import ConfoundingSpec, SensitivityDrawSet, adjust_outcomes, sample_c
from .dataset import ObservationalDataset
from .errors import DataError
from . import gps as gpsmod
from . import sumtrees

ESTIMANDS = ("CATE", "CATT")


@dataclass(frozen=True)
class GpsModelConfig:
    """Which propensity model to fit and its knobs."""

    model: str = "multilogit"  # "multilogit" | "stratified"
    strat_columns: tuple[int, ...] = ()
    prior_weight: float = 1.0
    ridge: float = 1e-4

    def __post_init__(self):
        if self.model not in ("multilogit", "stratified"):
            raise DataError(f"unknown gps model {self.model!r}")
        if self.model == "stratified" and not self.strat_columns:
            raise DataError("stratified gps model needs strat_columns")

    def describe(self) -> str:
        if self.model == "stratified":
            return f"stratified:cols={tuple(self.strat_columns)},pw={self.prior_weight}"
        return f"multilogit:ridge={self.ridge}"


@dataclass(frozen=True)
class EngineConfig:
    m1: int = 10
    m2: int = 10
    estimand: str = "CATE"
    reference_arm: int | None = None  # CATT only
    gps: GpsModelConfig = field(default_factory=GpsModelConfig)
    trees: sumtrees.SumOfTreesConfig = field(default_factory=sumtrees.SumOfTreesConfig.fast)
    seed: int = 0
    jobs: int = 1
    gps_cache_dir: str | None = None

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise DataError("need m1 >= 1 and m2 >= 1")
        if self.estimand not in ESTIMANDS:
            raise DataError(f"estimand must be one of {ESTIMANDS}, got {self.estimand!r}")
        if self.estimand == "CATT" and self.reference_arm is None:
            raise DataError("CATT needs a reference_arm")
        if self.jobs < 1:
            raise DataError("jobs must be >= 1")


@dataclass(frozen=True, eq=False)
class PairPosterior:
    """Pooled effect posterior for one ordered arm pair."""

    pair: tuple[int, int]
    samples: np.ndarray  # (m1*m2*keep,) in (m1, m2, draw) order
    mean: float
    lower95: float
    upper95: float
    fit_means: np.ndarray  # (m1, m2) per-fit posterior means, for diagnostics

    def negated(self) -> "PairPosterior":
        return PairPosterior(
            pair=(self.pair[1], self.pair[0]),
            samples=-self.samples,
            mean=-self.mean,
            lower95=-self.upper95,
            upper95=-self.lower95,
            fit_means=-self.fit_means,
        )


@dataclass(frozen=True, eq=False)
class PairwiseEffectPosterior:
    """All pairwise effects from one run; entries stored for j < k."""

    entries: Mapping[tuple[int, int], PairPosterior]
    estimand: str
    reference_arm: int | None
    m1: int
    m2: int
    keep: int

    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.entries))

    def effect(self, j: int, k: int) -> PairPosterior:
        if (j, k) in self.entries:
            return self.entries[(j, k)]
        if (k, j) in self.entries:
            return self.entries[(k, j)].negated()
        raise DataError(f"no effect stored for pair ({j},{k})")


def pool(
    per_fit_samples: Sequence[np.ndarray],
    pair: tuple[int, int] = (1, 2),
    shape: tuple[int, int] | None = None,
) -> PairPosterior:
    """Concatenate per-fit posterior samples and summarize.

    Mean is the pooled sample mean; the 95% interval is the empirical
    2.5% / 97.5% quantiles with linear interpolation between order statistics.

    Raises:
        DataError: ragged inputs, or shape inconsistent with the fit count.
    """
    if not per_fit_samples:
        raise DataError("pool needs at least one sample sequence")
    arrays = [np.asarray(s, dtype=np.float64).ravel() for s in per_fit_samples]
    k = arrays[0].shape[0]
    if k == 0:
        raise DataError("pool got an empty sample sequence")
    for a in arrays:
        if a.shape[0] != k:
            raise DataError(f"ragged inputs: lengths {k} and {a.shape[0]}")
    if shape is None:
        shape = (len(arrays), 1)
    if shape[0] * shape[1] != len(arrays):
        raise DataError(f"shape {shape} inconsistent with {len(arrays)} fits")
    pooled = np.concatenate(arrays)
    lo, hi = np.quantile(pooled, (0.025, 0.975), method="linear")
    fit_means = np.array([a.mean() for a in arrays]).reshape(shape)
    return PairPosterior(
        pair=(int(pair[0]), int(pair[1])),
        samples=pooled,
        mean=float(pooled.mean()),
        lower95=float(lo),
        upper95=float(hi),
        fit_means=fit_means,
    )


def _estimand_weights(ds: ObservationalDataset, estimand: str, reference_arm: int | None) -> np.ndarray:
    if estimand == "CATE":
        return np.full(ds.n, 1.0 / ds.n)
    mask = ds.treatment == reference_arm
    if not mask.any():
        raise DataError(f"no units in reference arm {reference_arm}")
    return mask.astype(np.float64) / mask.sum()


def _arm_mean_draws(
    model: sumtrees.SumOfTreesModel, x_aug: np.ndarray, arms: Sequence[int], weights: np.ndarray
) -> np.ndarray:
    """(J, keep) weighted-mean counterfactual predictions, arm column overwritten per arm."""
    out = np.empty((len(arms), model.keep))
    x_cf = x_aug.copy()
    for idx, a in enumerate(arms):
        x_cf[:, -1] = float(a)
        out[idx] = sumtrees.mean_prediction_draws(model, x_cf, weights)
    return out


def estimate_pair_effect(
    model: sumtrees.SumOfTreesModel,
    ds: ObservationalDataset,
    pair: tuple[int, int],
    estimand: str = "CATE",
    reference_arm: int | None = None,
) -> np.ndarray:
    """Length-keep samples of the (j, k) contrast from one fitted model."""
    j, k = int(pair[0]), int(pair[1])
    J = ds.treatment_count
    if j == k or not (1 <= j <= J and 1 <= k <= J):
        raise DataError(f"invalid treatment pair ({j},{k}) for {J} arms")
    if estimand not in ESTIMANDS:
        raise DataError(f"estimand must be one of {ESTIMANDS}")
    w = _estimand_weights(ds, estimand, reference_arm)
    x_aug = np.column_stack([ds.covariates, ds.treatment.astype(np.float64)])
    means = _arm_mean_draws(model, x_aug, (j, k), w)
    return means[0] - means[1]


def fit_gps(ds: ObservationalDataset, cfg: EngineConfig) -> gpsmod.GpsDraws:
    """GPS draws for a run, honoring the engine's cache directory."""
    gps_seed = subseed(cfg.seed, GPS_STREAM)
    cache_file = None
    if cfg.gps_cache_dir is not None:
        cache_file = gpsmod.cache_path(
            cfg.gps_cache_dir, ds, f"{cfg.gps.describe()},m1={cfg.m1}", gps_seed
        )
        cached = gpsmod.load_gps(cache_file)
        if cached is not None and cached.m1 == cfg.m1 and cached.n == ds.n:
            return cached
    if cfg.gps.model == "stratified":
        draws = gpsmod.fit_gps_stratified(
            ds, cfg.gps.strat_columns, cfg.m1, cfg.gps.prior_weight, rng=gps_seed
        )
    else:
        draws = gpsmod.fit_gps_multilogit(ds, cfg.m1, ridge=cfg.gps.ridge, rng=gps_seed)
    if cache_file is not None:
        gpsmod.save_gps(cache_file, draws)
    return draws


def run_sensitivity(
    ds: ObservationalDataset,
    spec: ConfoundingSpec,
    cfg: EngineConfig,
    progress: Callable[[int, int], None] | None = None,
) -> PairwiseEffectPosterior:
    """Full nested Monte Carlo run; deterministic given cfg.seed at any jobs count."""
    spec.validate_for(ds)
    J = ds.treatment_count
    if cfg.estimand == "CATT" and not 1 <= int(cfg.reference_arm) <= J:
        raise DataError(f"reference arm {cfg.reference_arm} outside 1..{J}")

    gps_draws = fit_gps(ds, cfg)
    sens = sample_c(spec, cfg.m2, substream(cfg.seed, SENS_STREAM)) if spec.priors else None

    y = ds.outcome.astype(np.float64)
    x_aug = np.column_stack([ds.covariates, ds.treatment.astype(np.float64)])
    w = _estimand_weights(ds, cfg.estimand, cfg.reference_arm)
    arms = tuple(range(1, J + 1))
    total = cfg.m1 * cfg.m2

    def one_cell(m1_i: int, m2_i: int) -> np.ndarray:
        try:
            p = gps_draws.draws[m1_i]
            if sens is None:
                y_cf = y
            else:
                c_vals = {
                    pr: sens.draws[m2_i][pr].per_unit(ds.covariates) for pr in sens.draws[m2_i]
                }
                y_cf = adjust_outcomes(y, ds.treatment, p, c_vals)
            tree_cfg = cfg.trees.with_seed(subseed(cfg.seed, FIT_STREAM, m1_i, m2_i))
            model = sumtrees.fit(x_aug, y_cf, tree_cfg)
            return _arm_mean_draws(model, x_aug, arms, w)
        except Exception as e:
            raise type(e)(f"fit (m1={m1_i}, m2={m2_i}): {e}") from e

    cells: list[np.ndarray | None] = [None] * total
    if cfg.jobs == 1:
        for idx in range(total):
            cells[idx] = one_cell(idx // cfg.m2, idx % cfg.m2)
            if progress is not None:
                progress(idx + 1, total)
    else:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as ex:
            futures = {
                ex.submit(one_cell, idx // cfg.m2, idx % cfg.m2): idx for idx in range(total)
            }
            done = 0
            for fut, idx in futures.items():
                cells[idx] = fut.result()
                done += 1
                if progress is not None:
                    progress(done, total)

    entries = {}
    for j in range(1, J + 1):
        for k in range(j + 1, J + 1):
            per_fit = [cells[idx][j - 1] - cells[idx][k - 1] for idx in range(total)]
            entries[(j, k)] = pool(per_fit, pair=(j, k), shape=(cfg.m1, cfg.m2))
    keep = cells[0].shape[1]
    return PairwiseEffectPosterior(
        entries=entries,
        estimand=cfg.estimand,
        reference_arm=cfg.reference_arm,
        m1=cfg.m1,
        m2=cfg.m2,
        keep=keep,
    )
