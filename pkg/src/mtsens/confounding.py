"""Confounding functions: priors, draws, the bias formula, and the outcome correction.

For an ordered treatment pair (j, l), the confounding function c(j, l, x) is
the difference in the mean potential outcome under arm j between units
observed in arm j and units observed in arm l, at covariate level x. With a
binary outcome it is bounded in [-1, 1]. Treating the c values as sensitivity
parameters, the naive arm contrast at x differs from the causal contrast by

    bias(j, k) = -p_j c(k, j, x) + p_k c(j, k, x)
                 - sum_{l not in {j,k}} p_l [c(k, l, x) - c(j, l, x)]

where p is the generalized propensity score at x, and subtracting the
GPS-weighted c values from the observed outcome removes that bias:

    y_adj = y - sum_{l != arm} p_l c(arm, l, x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
from scipy.linalg import qr
from scipy.special import ndtr, ndtri

from .dataset import ObservationalDataset, TreatmentPairLike
from .errors import DataError

SIMPLEX_ATOL = 1e-8


# ---------------------------------------------------------------------------
# prior specifications


@dataclass(frozen=True)
class PointMass:
    value: float


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class TruncNormal:
    center: float
    spread: float
    lo: float
    hi: float


@dataclass(frozen=True)
class Stratified:
    """Per-stratum scalar priors keyed on one covariate column's values."""

    column: int
    table: tuple[tuple[float, "ScalarPrior"], ...]

    def lookup(self) -> dict[float, "ScalarPrior"]:
        return dict(self.table)


ScalarPrior = Union[PointMass, Uniform, TruncNormal]
PriorSpec = Union[PointMass, Uniform, TruncNormal, Stratified]


def stratified(column: int, table: Mapping[float, ScalarPrior]) -> Stratified:
    """Stratified prior from a {covariate value: prior} mapping."""
    items = tuple(sorted(((float(k), v) for k, v in table.items()), key=lambda kv: kv[0]))
    return Stratified(column=column, table=items)


def validate_prior(prior: PriorSpec) -> None:
    """Raise DataError unless the prior respects the natural [-1, 1] bounds."""
    if isinstance(prior, PointMass):
        if not -1.0 <= prior.value <= 1.0:
            raise DataError(f"point mass {prior.value} outside the natural bounds [-1, 1]")
    elif isinstance(prior, Uniform):
        if prior.lo > prior.hi:
            raise DataError(f"uniform bounds reversed: lo={prior.lo} > hi={prior.hi}")
        if prior.lo < -1.0 or prior.hi > 1.0:
            raise DataError(
                f"uniform bounds ({prior.lo}, {prior.hi}) outside the natural bounds [-1, 1]"
            )
    elif isinstance(prior, TruncNormal):
        if prior.spread <= 0.0:
            raise DataError("truncated normal spread must be > 0")
        if prior.lo > prior.hi:
            raise DataError(f"truncated normal bounds reversed: lo={prior.lo} > hi={prior.hi}")
        if prior.lo < -1.0 or prior.hi > 1.0:
            raise DataError(
                f"truncated normal bounds ({prior.lo}, {prior.hi}) outside the natural bounds [-1, 1]"
            )
    elif isinstance(prior, Stratified):
        if not prior.table:
            raise DataError("stratified prior has an empty table")
        for _, sub in prior.table:
            if isinstance(sub, Stratified):
                raise DataError("stratified priors cannot nest")
            validate_prior(sub)
    else:
        raise DataError(f"unknown prior specification {prior!r}")


def _sample_scalar(prior: ScalarPrior, rng: np.random.Generator) -> float:
    if isinstance(prior, PointMass):
        return float(prior.value)
    if isinstance(prior, Uniform):
        u = rng.random()
        return float(prior.lo + u * (prior.hi - prior.lo))
    if isinstance(prior, TruncNormal):
        a = ndtr((prior.lo - prior.center) / prior.spread)
        b = ndtr((prior.hi - prior.center) / prior.spread)
        u = rng.random()
        value = prior.center + prior.spread * ndtri(a + u * (b - a))
        return float(min(max(value, prior.lo), prior.hi))
    raise DataError(f"cannot sample prior {prior!r}")


# ---------------------------------------------------------------------------
# the full family of priors and its realized draws


@dataclass(frozen=True)
class ConfoundingSpec:
    """Priors for every ordered pair (j, l); missing pairs mean PointMass(0)."""

    priors: Mapping[tuple[int, int], PriorSpec] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "priors", dict(self.priors))
        for (j, l), prior in self.priors.items():
            if j == l:
                raise DataError(f"confounding pair ({j},{l}) must have distinct arms")
            validate_prior(prior)

    def prior_for(self, j: int, l: int) -> PriorSpec:
        return self.priors.get((j, l), PointMass(0.0))

    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.priors))

    def validate_for(self, ds: ObservationalDataset) -> None:
        """Check pair labels against ds and stratified coverage of observed values."""
        J = ds.treatment_count
        for (j, l), prior in self.priors.items():
            if not (1 <= j <= J and 1 <= l <= J):
                raise DataError(f"confounding pair ({j},{l}) references an arm outside 1..{J}")
            if isinstance(prior, Stratified):
                if not 0 <= prior.column < ds.p:
                    raise DataError(
                        f"stratified prior for ({j},{l}) names covariate column "
                        f"{prior.column}, dataset has {ds.p}"
                    )
                covered = {k for k, _ in prior.table}
                observed = set(np.unique(ds.covariates[:, prior.column]).tolist())
                missing = sorted(observed - covered)
                if missing:
                    raise DataError(
                        f"stratified prior for ({j},{l}) does not cover observed "
                        f"value(s) {missing} of column {ds.covariate_names[prior.column]!r}"
                    )


@dataclass(frozen=True)
class SampledC:
    """One realized confounding-function value: a constant, or a constant per stratum."""

    value: float | None = None
    column: int | None = None
    table: tuple[tuple[float, float], ...] | None = None

    def at(self, x_row: np.ndarray) -> float:
        if self.column is None:
            return self.value  # type: ignore[return-value]
        key = float(x_row[self.column])
        for k, v in self.table:  # type: ignore[union-attr]
            if k == key:
                return v
        raise DataError(f"no confounding value for stratum {key} of column {self.column}")

    def per_unit(self, covariates: np.ndarray):
        """Scalar, or a length-n vector when the draw is stratified."""
        if self.column is None:
            return self.value
        col = covariates[:, self.column]
        out = np.full(col.shape[0], np.nan)
        for k, v in self.table:  # type: ignore[union-attr]
            out[col == k] = v
        if np.isnan(out).any():
            bad = float(col[np.isnan(out)][0])
            raise DataError(f"no confounding value for stratum {bad} of column {self.column}")
        return out


ZERO_C = SampledC(value=0.0)


@dataclass(frozen=True)
class SensitivityDrawSet:
    """M2 joint draws of all confounding functions named by the spec."""

    draws: tuple[Mapping[tuple[int, int], SampledC], ...]

    @property
    def m2(self) -> int:
        return len(self.draws)

    def value(self, m2_index: int, j: int, l: int) -> SampledC:
        return self.draws[m2_index].get((j, l), ZERO_C)


def sample_c(spec: ConfoundingSpec, m2_count: int, rng: np.random.Generator) -> SensitivityDrawSet:
    """Draw m2_count joint realizations of the confounding functions.

    Pairs are visited in sorted order and sampled independently within each
    joint draw, so a fixed seed yields the same draw for a given pair across
    specs that name the same pairs.
    """
    if m2_count < 1:
        raise DataError("m2_count must be >= 1")
    out = []
    for _ in range(m2_count):
        one: dict[tuple[int, int], SampledC] = {}
        for pair in spec.pairs():
            prior = spec.priors[pair]
            if isinstance(prior, Stratified):
                table = tuple((k, _sample_scalar(sub, rng)) for k, sub in prior.table)
                one[pair] = SampledC(column=prior.column, table=table)
            else:
                one[pair] = SampledC(value=_sample_scalar(prior, rng))
        out.append(one)
    return SensitivityDrawSet(draws=tuple(out))


# ---------------------------------------------------------------------------
# bias and correction


def _check_simplex(gps_row) -> np.ndarray:
    p = np.asarray(gps_row, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise DataError("gps_row must be a length-J probability vector")
    if abs(p.sum() - 1.0) > SIMPLEX_ATOL or (p < 0).any():
        raise DataError(f"gps_row is not a probability simplex (sum={p.sum()!r})")
    return p


def _c_get(c_at_x: Mapping, j: int, l: int) -> float:
    try:
        return c_at_x[(j, l)]
    except KeyError:
        raise DataError(f"confounding value for pair ({j},{l}) not provided") from None


def bias(pair: TreatmentPairLike, gps_row, c_at_x: Mapping[tuple[int, int], float]) -> float:
    """Bias of the naive contrast for arm pair (j, k) at one covariate level.

    Args:
        pair: (j, k) arm labels.
        gps_row: length-J treatment probabilities at x.
        c_at_x: realized confounding-function values (j, l) -> value at x.

    Returns:
        The amount by which the naive contrast E[Y|A=j,x] - E[Y|A=k,x]
        overstates the causal contrast E[Y(j)-Y(k)|x].
    """
    j, k = int(pair[0]), int(pair[1])
    p = _check_simplex(gps_row)
    J = p.shape[0]
    if j == k or not (1 <= j <= J and 1 <= k <= J):
        raise DataError(f"invalid treatment pair ({j},{k}) for {J} arms")
    total = -p[j - 1] * _c_get(c_at_x, k, j) + p[k - 1] * _c_get(c_at_x, j, k)
    for l in range(1, J + 1):
        if l in (j, k):
            continue
        total -= p[l - 1] * (_c_get(c_at_x, k, l) - _c_get(c_at_x, j, l))
    return float(total)


def adjust_outcome(y: float, arm: int, gps_row, c_at_x: Mapping[tuple[int, int], float]) -> float:
    """Corrected outcome for one unit observed in ``arm``: y minus the GPS-weighted c values."""
    p = _check_simplex(gps_row)
    J = p.shape[0]
    arm = int(arm)
    if not 1 <= arm <= J:
        raise DataError(f"arm {arm} outside 1..{J}")
    correction = 0.0
    for l in range(1, J + 1):
        if l != arm:
            correction += p[l - 1] * _c_get(c_at_x, arm, l)
    return float(y - correction)


def adjust_outcomes(
    y: np.ndarray,
    arms: np.ndarray,
    gps: np.ndarray,
    c_values: Mapping[tuple[int, int], float | np.ndarray],
) -> np.ndarray:
    """Vectorized correction across all units.

    Args:
        y: (n,) outcomes.
        arms: (n,) treatment labels 1..J.
        gps: (n, J) propensity rows.
        c_values: (j, l) -> scalar or length-n vector of realized c values.

    Returns:
        (n,) adjusted outcomes.
    """
    y = np.asarray(y, dtype=np.float64)
    gps = np.asarray(gps, dtype=np.float64)
    n, J = gps.shape
    bad = np.flatnonzero(np.abs(gps.sum(axis=1) - 1.0) > SIMPLEX_ATOL)
    if bad.size:
        raise DataError(f"gps row {bad[0]} is not a probability simplex")
    out = y.copy()
    for j in range(1, J + 1):
        mask = arms == j
        if not mask.any():
            continue
        correction = np.zeros(int(mask.sum()))
        for l in range(1, J + 1):
            if l == j:
                continue
            c = c_values.get((j, l), 0.0) if hasattr(c_values, "get") else c_values[(j, l)]
            c_masked = c[mask] if isinstance(c, np.ndarray) else c
            correction += gps[mask, l - 1] * c_masked
        out[mask] -= correction
    return out


def residual_sd(ds: ObservationalDataset) -> float:
    """Outcome SD left over after a least-squares fit on covariates and arm indicators.

    The binary outcome is treated as continuous. Used to express prior spread
    for the confounding functions in interpretable units.

    Raises:
        DataError: n too small for the design, or collinear columns (named).
    """
    n, p, J = ds.n, ds.p, ds.treatment_count
    if n <= p + J + 1:
        raise DataError(f"need n > p + J + 1 = {p + J + 1}, got n = {n}")
    design = np.column_stack(
        [np.ones(n), ds.covariates]
        + [(ds.treatment == j).astype(np.float64) for j in range(2, J + 1)]
    )
    names = ["intercept", *ds.covariate_names, *[f"arm={j}" for j in range(2, J + 1)]]
    k = design.shape[1]
    _, r_diag, pivots = qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_diag))
    tol = diag.max() * max(design.shape) * np.finfo(np.float64).eps
    rank = int((diag > tol).sum())
    if rank < k:
        collinear = sorted(names[i] for i in pivots[rank:])
        raise DataError(f"design is rank deficient; collinear column(s): {', '.join(collinear)}")
    beta, _, _, _ = np.linalg.lstsq(design, ds.outcome.astype(np.float64), rcond=None)
    resid = ds.outcome - design @ beta
    return float(math.sqrt(resid @ resid / (n - k)))


def build_strategy(
    strategy: str,
    c0: float,
    h: float = 1.0,
    sigma_hat: float | None = None,
    direction: str | None = None,
) -> PriorSpec:
    """Standard prior families around a reference value c0.

    I: point mass at c0. II: uniform band c0 +- h*sigma_hat, clipped to
    [-1, 1]. III: one-sided band of width 2h*sigma_hat on the given side of
    c0 ("down" reaches below c0, "up" above). IV: uniform over [-1, 1].
    """
    strategy = strategy.upper()
    if not -1.0 <= c0 <= 1.0:
        raise DataError(f"c0 = {c0} outside the natural bounds [-1, 1]")
    if strategy == "I":
        return PointMass(c0)
    if strategy == "IV":
        return Uniform(-1.0, 1.0)
    if sigma_hat is None or sigma_hat < 0:
        raise DataError(f"strategy {strategy} needs sigma_hat >= 0")
    if h <= 0:
        raise DataError(f"strategy {strategy} needs h > 0")
    if strategy == "II":
        return Uniform(max(-1.0, c0 - h * sigma_hat), min(1.0, c0 + h * sigma_hat))
    if strategy == "III":
        if direction == "down":
            return Uniform(max(-1.0, c0 - 2.0 * h * sigma_hat), c0)
        if direction == "up":
            return Uniform(c0, min(1.0, c0 + 2.0 * h * sigma_hat))
        raise DataError("strategy III needs an explicit direction, 'up' or 'down'")
    raise DataError(f"unknown strategy {strategy!r}; expected I, II, III or IV")
