import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtsens.dataset import (
    DataSchema,
    OverlapReport,
    load_csv,
    make_dataset,
    save_csv,
    schema_of,
    validate_overlap,
)
from mtsens.errors import DataError

from conftest import small_dataset


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


BASIC = DataSchema(outcome="y", treatment="a", covariates=("x1",))


class TestLoadCsv:
    def test_six_row_three_arm_file(self, tmp_path):
        p = write(
            tmp_path,
            "y,a,x1\n0,1,0.5\n1,2,1.0\n0,3,0.25\n1,1,0.0\n0,2,2.5\n1,3,1.25\n",
        )
        ds = load_csv(p, BASIC)
        assert ds.n == 6
        assert ds.treatment_count == 3
        assert ds.treatment_levels == (1, 2, 3)
        assert list(ds.arm_counts()) == [2, 2, 2]
        assert ds.covariates[:, 0].tolist() == [0.5, 1.0, 0.25, 0.0, 2.5, 1.25]

    def test_declared_arm_with_no_rows(self, tmp_path):
        p = write(tmp_path, "y,a,x1\n0,1,0.5\n1,2,1.0\n0,1,0.25\n1,2,0.0\n")
        schema = DataSchema(
            outcome="y", treatment="a", covariates=("x1",), treatment_levels=(1, 2, 3)
        )
        with pytest.raises(DataError, match="empty treatment arm 3"):
            load_csv(p, schema)

    def test_outcome_two_names_row(self, tmp_path):
        p = write(tmp_path, "y,a,x1\n0,1,0.5\n1,2,1.0\n0,3,0.25\n2,1,0.0\n1,2,2.5\n0,3,1.25\n")
        with pytest.raises(DataError, match="row 4"):
            load_csv(p, BASIC)

    def test_missing_column(self, tmp_path):
        p = write(tmp_path, "y,a\n0,1\n1,2\n")
        with pytest.raises(DataError, match="missing column 'x1'"):
            load_csv(p, BASIC)

    def test_missing_cell_names_row_and_column(self, tmp_path):
        p = write(tmp_path, "y,a,x1\n0,1,0.5\n1,2,\n0,3,0.25\n1,1,0.2\n")
        with pytest.raises(DataError, match=r"row 2.*'x1'"):
            load_csv(p, BASIC)

    def test_non_integer_treatment(self, tmp_path):
        p = write(tmp_path, "y,a,x1\n0,1.5,0.5\n1,2,1.0\n")
        with pytest.raises(DataError, match="expected an integer"):
            load_csv(p, BASIC)

    def test_nominal_expands_to_drop_first_indicators(self, tmp_path):
        p = write(
            tmp_path,
            "y,a,city\n0,1,b\n1,2,a\n0,1,c\n1,2,b\n0,1,a\n1,2,c\n",
        )
        schema = DataSchema(
            outcome="y", treatment="a", covariates=("city",), kinds={"city": "nominal"}
        )
        ds = load_csv(p, schema)
        assert ds.covariate_names == ("city=b", "city=c")
        assert ds.covariate_kinds == ("indicator", "indicator")
        assert ds.covariates[:, 0].tolist() == [1, 0, 0, 1, 0, 0]
        assert ds.covariates[:, 1].tolist() == [0, 0, 1, 0, 0, 1]

    def test_label_recoding_is_a_bijection(self, tmp_path):
        p = write(tmp_path, "y,a,x1\n0,9,0.5\n1,2,1.0\n0,5,0.25\n1,2,0.0\n")
        ds = load_csv(p, BASIC)
        assert ds.treatment_levels == (2, 5, 9)
        assert ds.treatment.tolist() == [3, 1, 2, 1]
        assert ds.original_labels().tolist() == [9, 2, 5, 2]


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        ds = small_dataset(n=30, p=3, seed=4)
        out = tmp_path / "echo.csv"
        save_csv(ds, out)
        again = load_csv(out, schema_of(ds))
        assert again.equals(ds)

    def test_mixed_kinds_round_trip(self, tmp_path):
        p = write(
            tmp_path,
            "y,a,age,grade,flag,city\n"
            "0,1,61.25,3,1,b\n1,2,58.5,1,0,a\n0,3,70.125,2,1,c\n"
            "1,1,66.0,3,0,b\n0,2,59.75,1,1,a\n1,3,63.5,2,0,c\n",
        )
        schema = DataSchema(
            outcome="y",
            treatment="a",
            covariates=("age", "grade", "flag", "city"),
            kinds={"grade": "ordinal", "flag": "indicator", "city": "nominal"},
        )
        ds = load_csv(p, schema)
        out = tmp_path / "echo.csv"
        save_csv(ds, out)
        assert load_csv(out, schema_of(ds)).equals(ds)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(6, 40), p=st.integers(1, 4))
    def test_random_datasets_round_trip(self, tmp_path_factory, seed, n, p):
        ds = small_dataset(n=n, p=p, seed=seed)
        out = tmp_path_factory.mktemp("rt") / "d.csv"
        save_csv(ds, out)
        assert load_csv(out, schema_of(ds)).equals(ds)


class TestMakeDataset:
    def test_needs_two_arms(self):
        with pytest.raises(DataError, match="two treatment arms"):
            make_dataset(np.zeros((5, 1)), np.ones(5, dtype=int), np.zeros(5))

    def test_rejects_non_binary_outcome(self):
        with pytest.raises(DataError, match="outcome must be 0 or 1"):
            make_dataset(
                np.zeros((4, 1)), np.array([1, 2, 1, 2]), np.array([0, 1, 3, 0])
            )

    def test_rejects_non_finite_covariate(self):
        x = np.zeros((4, 1))
        x[2, 0] = np.nan
        with pytest.raises(DataError, match="row 3"):
            make_dataset(x, np.array([1, 2, 1, 2]), np.array([0, 1, 1, 0]))

    def test_rejects_unexpected_label(self):
        with pytest.raises(DataError, match="unexpected treatment label 7"):
            make_dataset(
                np.zeros((4, 1)),
                np.array([1, 2, 7, 2]),
                np.zeros(4),
                treatment_levels=(1, 2),
            )

    def test_arrays_frozen_after_construction(self):
        ds = small_dataset(n=12)
        with pytest.raises(ValueError):
            ds.covariates[0, 0] = 9.0
        with pytest.raises(ValueError):
            ds.treatment[0] = 2


class TestValidateOverlap:
    def _draws(self, rows):
        # one pseudo-draw wrapping the given mean rows
        return np.asarray(rows, dtype=np.float64)[None, :, :]

    def test_comfortable_gps_flags_nothing(self):
        ds = small_dataset(n=6, treatment_count=3)
        rows = np.full((6, 3), 1.0 / 3.0)
        rows[0] = (0.2, 0.2, 0.6)
        report = validate_overlap(ds, self._draws(rows), eps=0.05)
        assert isinstance(report, OverlapReport)
        assert report.ok
        assert report.flagged == ()
        assert report.n_checked == 6

    def test_extreme_unit_is_flagged(self):
        ds = small_dataset(n=6, treatment_count=3)
        rows = np.full((6, 3), 1.0 / 3.0)
        rows[4] = (0.49, 0.01, 0.5)
        report = validate_overlap(ds, self._draws(rows), eps=0.05)
        assert not report.ok
        assert (4, 2, 0.01) in report.flagged

    def test_degenerate_eps(self):
        ds = small_dataset(n=6, treatment_count=3)
        rows = np.full((6, 3), 1.0 / 3.0)
        with pytest.raises(DataError, match="eps must be < 1/J"):
            validate_overlap(ds, self._draws(rows), eps=0.5)

    def test_dimension_mismatch(self):
        ds = small_dataset(n=6, treatment_count=3)
        rows = np.full((5, 3), 1.0 / 3.0)
        with pytest.raises(DataError, match="dimension mismatch"):
            validate_overlap(ds, self._draws(rows), eps=0.05)
