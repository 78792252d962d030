"""Data model and CSV ingestion for observational multi-treatment studies.

A study is n units, each with a numeric covariate vector, one treatment out
of J >= 2 arms, and a binary outcome. Treatment labels are re-coded to
1..J (sorted order of the original integer labels) at load time; the
original labels are kept so files round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}

# covariate kinds: numeric parsed as float; ordinal as integer codes;
# indicator as 0/1; nominal expands to per-level indicator columns
_KINDS = ("numeric", "ordinal", "indicator", "nominal")

# an ordered arm pair (j, k), 1-based labels
TreatmentPairLike = Sequence[int]


@dataclass(frozen=True)
class DataSchema:
    """Column-role map for a study CSV.

    Args:
        outcome: name of the binary outcome column.
        treatment: name of the integer treatment column.
        covariates: covariate column names, in the order they should appear.
        kinds: optional per-column kind (default "numeric").
        treatment_levels: optional declaration of expected treatment labels;
            a declared label with zero rows is an error ("empty arm").
    """

    outcome: str
    treatment: str
    covariates: tuple[str, ...]
    kinds: Mapping[str, str] | None = None
    treatment_levels: tuple[int, ...] | None = None

    def kind_of(self, column: str) -> str:
        kind = "numeric" if self.kinds is None else self.kinds.get(column, "numeric")
        if kind not in _KINDS:
            raise DataError(f"unknown covariate kind {kind!r} for column {column!r}")
        return kind


@dataclass(frozen=True, eq=False)
class ObservationalDataset:
    covariates: np.ndarray  # (n, p) float64
    treatment: np.ndarray  # (n,) int64, values 1..J
    outcome: np.ndarray  # (n,) int8, values {0, 1}
    covariate_names: tuple[str, ...]
    covariate_kinds: tuple[str, ...]
    treatment_levels: tuple[int, ...]  # original labels, sorted; arm j <-> levels[j-1]
    outcome_name: str = "y"
    treatment_name: str = "a"

    @property
    def n(self) -> int:
        return self.treatment.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def treatment_count(self) -> int:
        return len(self.treatment_levels)

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.treatment, minlength=self.treatment_count + 1)[1:]

    def original_labels(self) -> np.ndarray:
        """Treatment column with the original (pre-re-coding) labels."""
        return np.asarray(self.treatment_levels, dtype=np.int64)[self.treatment - 1]

    def equals(self, other: "ObservationalDataset") -> bool:
        return (
            isinstance(other, ObservationalDataset)
            and self.covariate_names == other.covariate_names
            and self.covariate_kinds == other.covariate_kinds
            and self.treatment_levels == other.treatment_levels
            and self.outcome_name == other.outcome_name
            and self.treatment_name == other.treatment_name
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.outcome, other.outcome)
        )


def make_dataset(
    covariates: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    covariate_names: Sequence[str] | None = None,
    covariate_kinds: Sequence[str] | None = None,
    treatment_levels: Sequence[int] | None = None,
    outcome_name: str = "y",
    treatment_name: str = "a",
) -> ObservationalDataset:
    """Build a validated dataset from in-memory arrays.

    ``treatment`` carries original labels; they are re-coded to 1..J here.
    """
    covariates = np.ascontiguousarray(np.asarray(covariates, dtype=np.float64))
    treatment = np.asarray(treatment, dtype=np.int64)
    outcome_arr = np.asarray(outcome)
    if covariates.ndim != 2:
        raise DataError("covariates must be a 2-D array")
    n = covariates.shape[0]
    if treatment.shape != (n,) or outcome_arr.shape != (n,):
        raise DataError("covariates, treatment and outcome lengths differ")
    if not np.isfinite(covariates).all():
        bad = np.argwhere(~np.isfinite(covariates))[0]
        raise DataError(f"missing value in row {bad[0] + 1}, covariate column {bad[1]}")
    if not np.isin(outcome_arr, (0, 1)).all():
        row = int(np.flatnonzero(~np.isin(outcome_arr, (0, 1)))[0])
        raise DataError(f"outcome must be 0 or 1, got {outcome_arr[row]} in row {row + 1}")
    outcome_arr = outcome_arr.astype(np.int8)

    observed = np.unique(treatment)
    if treatment_levels is None:
        levels = tuple(int(v) for v in observed)
    else:
        levels = tuple(sorted(int(v) for v in treatment_levels))
        unexpected = np.setdiff1d(observed, levels)
        if unexpected.size:
            raise DataError(f"unexpected treatment label {unexpected[0]}")
        for lv in levels:
            if lv not in observed:
                raise DataError(f"empty treatment arm {lv}")
    if len(levels) < 2:
        raise DataError("at least two treatment arms are required")
    recoded = np.searchsorted(np.asarray(levels), treatment) + 1

    p = covariates.shape[1]
    names = tuple(covariate_names) if covariate_names is not None else tuple(f"x{i+1}" for i in range(p))
    kinds = tuple(covariate_kinds) if covariate_kinds is not None else ("numeric",) * p
    if len(names) != p or len(kinds) != p:
        raise DataError("covariate names/kinds length does not match matrix width")

    for arr in (covariates, recoded, outcome_arr):
        arr.flags.writeable = False
    return ObservationalDataset(
        covariates=covariates,
        treatment=recoded,
        outcome=outcome_arr,
        covariate_names=names,
        covariate_kinds=kinds,
        treatment_levels=levels,
        outcome_name=outcome_name,
        treatment_name=treatment_name,
    )


def _parse_column(raw: pd.Series, column: str, as_int: bool) -> np.ndarray:
    values = np.empty(len(raw), dtype=np.float64)
    for i, tok in enumerate(raw.to_numpy()):
        tok = tok.strip()
        if tok.lower() in _MISSING_TOKENS:
            raise DataError(f"missing value in row {i + 1}, column {column!r}")
        try:
            v = float(tok)
        except ValueError:
            raise DataError(f"could not parse {tok!r} in row {i + 1}, column {column!r}") from None
        if as_int and v != int(v):
            raise DataError(f"expected an integer, got {tok!r} in row {i + 1}, column {column!r}")
        values[i] = v
    return values


def load_csv(path, schema: DataSchema) -> ObservationalDataset:
    """Read a study CSV into an ObservationalDataset.

    Args:
        path: CSV file with a header row, UTF-8.
        schema: column roles; see DataSchema.

    Returns:
        Dataset with treatment labels re-coded to 1..J.

    Raises:
        DataError: missing column, missing cell, non-binary outcome,
            non-integer treatment, or an empty declared arm; each message
            names the offending row or column (rows are 1-based data rows).
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    needed = [schema.outcome, schema.treatment, *schema.covariates]
    for column in needed:
        if column not in frame.columns:
            raise DataError(f"missing column {column!r}")

    y = _parse_column(frame[schema.outcome], schema.outcome, as_int=True)
    bad = np.flatnonzero(~np.isin(y, (0.0, 1.0)))
    if bad.size:
        row = int(bad[0])
        raise DataError(
            f"outcome must be 0 or 1, got {y[row]:g} in row {row + 1}, column {schema.outcome!r}"
        )
    a = _parse_column(frame[schema.treatment], schema.treatment, as_int=True).astype(np.int64)

    columns: list[np.ndarray] = []
    names: list[str] = []
    kinds: list[str] = []
    for column in schema.covariates:
        kind = schema.kind_of(column)
        if kind == "nominal":
            raw = frame[column].to_numpy()
            for i, tok in enumerate(raw):
                if tok.strip().lower() in _MISSING_TOKENS:
                    raise DataError(f"missing value in row {i + 1}, column {column!r}")
            levels = sorted(set(t.strip() for t in raw))
            # drop-first indicator coding, so downstream least squares stays full rank
            for level in levels[1:]:
                columns.append((np.char.strip(raw.astype(str)) == level).astype(np.float64))
                names.append(f"{column}={level}")
                kinds.append("indicator")
        else:
            columns.append(_parse_column(frame[column], column, as_int=(kind == "ordinal")))
            names.append(column)
            kinds.append(kind)

    covariates = np.column_stack(columns) if columns else np.empty((len(frame), 0))
    return make_dataset(
        covariates,
        a,
        y,
        covariate_names=names,
        covariate_kinds=kinds,
        treatment_levels=schema.treatment_levels,
        outcome_name=schema.outcome,
        treatment_name=schema.treatment,
    )


def save_csv(ds: ObservationalDataset, path) -> None:
    """Write a dataset back to CSV with its original treatment labels."""
    frame = pd.DataFrame({ds.outcome_name: ds.outcome.astype(np.int64)})
    frame[ds.treatment_name] = ds.original_labels()
    for idx, name in enumerate(ds.covariate_names):
        col = ds.covariates[:, idx]
        if ds.covariate_kinds[idx] in ("ordinal", "indicator"):
            frame[name] = col.astype(np.int64)
        else:
            frame[name] = [repr(float(v)) for v in col]
    frame.to_csv(path, index=False)


def schema_of(ds: ObservationalDataset) -> DataSchema:
    """Schema under which save_csv output re-loads to an equal dataset."""
    return DataSchema(
        outcome=ds.outcome_name,
        treatment=ds.treatment_name,
        covariates=ds.covariate_names,
        kinds={n: k for n, k in zip(ds.covariate_names, ds.covariate_kinds)},
        treatment_levels=ds.treatment_levels,
    )


@dataclass(frozen=True)
class OverlapReport:
    """Units whose posterior-mean GPS sits outside [eps, 1-eps] for any arm."""

    eps: float
    flagged: tuple[tuple[int, int, float], ...]  # (unit index, arm, mean probability)
    n_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.flagged


def validate_overlap(ds: ObservationalDataset, gps, eps: float) -> OverlapReport:
    """Advisory positivity check; no units are dropped.

    Raises:
        DataError: eps outside (0, 1/J), or gps shaped for a different dataset.
    """
    J = ds.treatment_count
    if not 0.0 < eps < 1.0 / J:
        raise DataError(f"eps must be < 1/J = {1.0 / J:.4g} and > 0, got {eps}")
    draws = np.asarray(getattr(gps, "draws", gps), dtype=np.float64)
    if draws.ndim != 3 or draws.shape[1] != ds.n or draws.shape[2] != J:
        raise DataError(
            f"dimension mismatch: gps draws are {draws.shape[1]}x{draws.shape[2]}, "
            f"dataset is {ds.n} units x {J} arms"
        )
    means = draws.mean(axis=0)
    rows, arms = np.where((means < eps) | (means > 1.0 - eps))
    flagged = tuple((int(i), int(a) + 1, float(means[i, a])) for i, a in zip(rows, arms))
    return OverlapReport(eps=eps, flagged=flagged, n_checked=ds.n)
