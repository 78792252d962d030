import numpy as np
import pytest

from mtsens import simlab, sumtrees
from mtsens.confounding import ConfoundingSpec, PointMass, Uniform, adjust_outcomes
from mtsens.dataset import make_dataset
from mtsens.engine import (
    EngineConfig,
    GpsModelConfig,
    estimate_pair_effect,
    pool,
    run_sensitivity,
)
from mtsens.errors import DataError

from conftest import small_dataset
from test_sumtrees import stump_model

ALL_PAIRS = [(j, k) for j in (1, 2, 3) for k in (1, 2, 3) if j != k]
UPPER_PAIRS = ((1, 2), (1, 3), (2, 3))


def split_on_arm_model(arm_col, leaf_by_arm1, leaf_else, keep=4):
    """One tree per slot: split A < 1.5, scaled leaves per side, y scaled 0..1."""
    cfg = sumtrees.SumOfTreesConfig(tree_count=1, burn_in=0, keep=keep)
    node_var = np.tile(np.array([arm_col, -1, -1], np.int32), keep)
    node_cut = np.tile(np.array([1.5, 0.0, 0.0]), keep)
    node_val = np.tile(np.array([0.0, leaf_by_arm1, leaf_else]), keep)
    node_right = np.tile(np.array([2, -1, -1], np.int32), keep)
    return sumtrees.SumOfTreesModel(
        node_var=node_var,
        node_cut=node_cut,
        node_val=node_val,
        node_right=node_right,
        offsets=np.arange(0, 3 * keep + 1, 3, dtype=np.int64),
        changed=np.ones((keep, 1), np.uint8),
        sigma2_scaled=np.full(keep, 1e-4),
        y_min=0.0,
        y_max=1.0,
        n_columns=arm_col + 1,
        config=cfg,
    )


class TestPool:
    def test_single_sequence_is_identity(self):
        r = np.random.default_rng(1)
        s = r.normal(size=300)
        got = pool([s], pair=(1, 2))
        assert np.array_equal(got.samples, s)
        assert got.mean == pytest.approx(s.mean())
        lo, hi = np.quantile(s, (0.025, 0.975))
        assert (got.lower95, got.upper95) == (pytest.approx(lo), pytest.approx(hi))
        assert got.fit_means.shape == (1, 1)

    def test_two_constant_sequences(self):
        got = pool([np.zeros(1000), np.ones(1000)], pair=(1, 2), shape=(1, 2))
        assert got.mean == pytest.approx(0.5)
        assert got.lower95 == pytest.approx(0.0)
        assert got.upper95 == pytest.approx(1.0)
        np.testing.assert_allclose(got.fit_means, [[0.0, 1.0]])

    def test_normal_draws_hit_analytic_quantiles(self):
        s = np.random.default_rng(5).normal(size=100_000)
        got = pool([s])
        assert got.lower95 == pytest.approx(-1.96, abs=0.03)
        assert got.upper95 == pytest.approx(1.96, abs=0.03)

    def test_input_validation(self):
        with pytest.raises(DataError, match="ragged"):
            pool([np.zeros(5), np.zeros(6)])
        with pytest.raises(DataError, match="at least one"):
            pool([])
        with pytest.raises(DataError, match="empty"):
            pool([np.zeros(0)])
        with pytest.raises(DataError, match="inconsistent"):
            pool([np.zeros(5), np.zeros(5)], shape=(3, 1))


class TestEstimatePairEffect:
    def test_constant_contrast(self):
        ds = small_dataset(n=60, p=2, treatment_count=3)
        # unscale: s + 0.5, so leaves -0.2 / -0.4 predict 0.3 under arm 1
        # and 0.1 under arms 2 and 3
        model = split_on_arm_model(arm_col=2, leaf_by_arm1=-0.2, leaf_else=-0.4)
        samples = estimate_pair_effect(model, ds, (1, 2))
        assert samples.shape == (4,)
        np.testing.assert_allclose(samples, 0.2, atol=1e-12)
        np.testing.assert_allclose(estimate_pair_effect(model, ds, (2, 3)), 0.0, atol=1e-12)

    def test_catt_differs_under_heterogeneity(self):
        # arm-1 units all have x0=1, the rest x0=0; the arm-2 response splits
        # on x0, so averaging over arm-1 units vs everyone must disagree
        x = np.column_stack([np.repeat([1.0, 0.0], [20, 40]), np.zeros(60)])
        a = np.repeat([1, 2, 3], 20)
        ds = make_dataset(x, a, np.tile([0, 1], 30))
        keep = 3
        cfg = sumtrees.SumOfTreesConfig(tree_count=1, burn_in=0, keep=keep)
        # root: A < 1.5; left leaf 0.4; right subtree: x0 < 0.5 -> 0.2 | 0.6
        node_var = np.tile(np.array([2, -1, 0, -1, -1], np.int32), keep)
        node_cut = np.tile(np.array([1.5, 0.0, 0.5, 0.0, 0.0]), keep)
        node_val = np.tile(np.array([0.0, -0.1, 0.0, -0.3, 0.1]), keep)
        node_right = np.tile(np.array([2, -1, 4, -1, -1], np.int32), keep)
        model = sumtrees.SumOfTreesModel(
            node_var=node_var,
            node_cut=node_cut,
            node_val=node_val,
            node_right=node_right,
            offsets=np.arange(0, 5 * keep + 1, 5, dtype=np.int64),
            changed=np.ones((keep, 1), np.uint8),
            sigma2_scaled=np.full(keep, 1e-4),
            y_min=0.0,
            y_max=1.0,
            n_columns=3,
            config=cfg,
        )
        cate = estimate_pair_effect(model, ds, (1, 2), estimand="CATE")
        catt = estimate_pair_effect(model, ds, (1, 2), estimand="CATT", reference_arm=1)
        np.testing.assert_allclose(catt, -0.2, atol=1e-12)
        np.testing.assert_allclose(cate, (20 * -0.2 + 40 * 0.2) / 60, atol=1e-12)
        assert abs(cate[0] - catt[0]) > 0.05

    def test_argument_validation(self):
        ds = small_dataset(n=30, p=1, treatment_count=3)
        model = stump_model(0.0, 0.0, 1.0, n_columns=2)
        with pytest.raises(DataError, match="invalid treatment pair"):
            estimate_pair_effect(model, ds, (1, 1))
        with pytest.raises(DataError, match="invalid treatment pair"):
            estimate_pair_effect(model, ds, (0, 2))
        with pytest.raises(DataError, match="estimand"):
            estimate_pair_effect(model, ds, (1, 2), estimand="ATE")


class TestConfigValidation:
    def test_engine_config(self):
        with pytest.raises(DataError, match="m1 >= 1"):
            EngineConfig(m1=0)
        with pytest.raises(DataError, match="estimand"):
            EngineConfig(estimand="ATE")
        with pytest.raises(DataError, match="reference_arm"):
            EngineConfig(estimand="CATT")
        with pytest.raises(DataError, match="jobs"):
            EngineConfig(jobs=0)

    def test_gps_model_config(self):
        with pytest.raises(DataError, match="unknown gps model"):
            GpsModelConfig(model="logit")
        with pytest.raises(DataError, match="strat_columns"):
            GpsModelConfig(model="stratified")
        assert "ridge" in GpsModelConfig().describe()
        assert "cols" in GpsModelConfig(model="stratified", strat_columns=(0,)).describe()


@pytest.fixture(scope="module")
def sim_cohort():
    return simlab.gen_illustrative(400, seed=3)


@pytest.fixture(scope="module")
def small_cfg(sim_cohort):
    return EngineConfig(
        m1=2,
        m2=2,
        gps=GpsModelConfig(model="stratified", strat_columns=(0,)),
        trees=sumtrees.SumOfTreesConfig(tree_count=10, burn_in=30, keep=50),
        seed=17,
    )


class TestRunSensitivity:
    def test_point_mass_zero_equals_no_adjustment(self, sim_cohort, small_cfg):
        ds = sim_cohort.dataset
        zero = ConfoundingSpec({p: PointMass(0.0) for p in ALL_PAIRS})
        a = run_sensitivity(ds, zero, small_cfg)
        b = run_sensitivity(ds, ConfoundingSpec({}), small_cfg)
        for j, k in UPPER_PAIRS:
            assert abs(a.effect(j, k).mean - b.effect(j, k).mean) < 0.005

    def test_posterior_shape_and_ordering(self, sim_cohort, small_cfg):
        res = run_sensitivity(sim_cohort.dataset, ConfoundingSpec({}), small_cfg)
        assert res.pairs() == ((1, 2), (1, 3), (2, 3))
        assert (res.m1, res.m2, res.keep) == (2, 2, 50)
        for j, k in UPPER_PAIRS:
            e = res.effect(j, k)
            assert e.samples.shape == (2 * 2 * 50,)
            assert e.lower95 <= e.mean <= e.upper95
            assert e.fit_means.shape == (2, 2)
            # risk differences from an unadjusted binary outcome
            assert np.all(e.samples >= -1.0) and np.all(e.samples <= 1.0)

    def test_pair_antisymmetry_draw_by_draw(self, sim_cohort, small_cfg):
        res = run_sensitivity(sim_cohort.dataset, ConfoundingSpec({}), small_cfg)
        fwd = res.effect(1, 3)
        rev = res.effect(3, 1)
        assert np.array_equal(rev.samples, -fwd.samples)
        assert rev.lower95 == -fwd.upper95
        assert rev.upper95 == -fwd.lower95
        with pytest.raises(DataError, match="no effect stored"):
            res.effect(1, 4)

    def test_natural_bounds_prior_keeps_samples_in_band(self, sim_cohort, small_cfg):
        spec = ConfoundingSpec({p: Uniform(-1.0, 1.0) for p in ALL_PAIRS})
        res = run_sensitivity(sim_cohort.dataset, spec, small_cfg)
        for j, k in UPPER_PAIRS:
            s = res.effect(j, k).samples
            assert np.all(s >= -3.0) and np.all(s <= 3.0)

    def test_jobs_do_not_change_results(self, sim_cohort, small_cfg):
        import dataclasses

        spec = ConfoundingSpec({p: Uniform(-0.3, 0.3) for p in ALL_PAIRS})
        seq = run_sensitivity(sim_cohort.dataset, spec, small_cfg)
        par = run_sensitivity(
            sim_cohort.dataset, spec, dataclasses.replace(small_cfg, jobs=3)
        )
        for j, k in UPPER_PAIRS:
            assert np.array_equal(seq.effect(j, k).samples, par.effect(j, k).samples)

    def test_deterministic_in_seed(self, sim_cohort, small_cfg):
        import dataclasses

        spec = ConfoundingSpec({(1, 2): Uniform(-0.4, 0.2)})
        a = run_sensitivity(sim_cohort.dataset, spec, small_cfg)
        b = run_sensitivity(sim_cohort.dataset, spec, small_cfg)
        c = run_sensitivity(
            sim_cohort.dataset, spec, dataclasses.replace(small_cfg, seed=18)
        )
        assert np.array_equal(a.effect(1, 2).samples, b.effect(1, 2).samples)
        assert not np.array_equal(a.effect(1, 2).samples, c.effect(1, 2).samples)

    def test_monotone_uncertainty_in_prior_width(self, sim_cohort, small_cfg):
        import dataclasses

        cfg = dataclasses.replace(small_cfg, m2=3)
        widths = []
        for half in (0.1, 0.5, 1.0):
            spec = ConfoundingSpec({p: Uniform(-half, half) for p in ALL_PAIRS})
            res = run_sensitivity(sim_cohort.dataset, spec, cfg)
            widths.append(
                {p: res.effect(*p).upper95 - res.effect(*p).lower95 for p in UPPER_PAIRS}
            )
        for p in UPPER_PAIRS:
            assert widths[0][p] <= widths[1][p] + 1e-9
            assert widths[1][p] <= widths[2][p] + 1e-9

    def test_third_arm_priors_shift_the_target_pair(self, sim_cohort, small_cfg):
        full = simlab.strategy_spec(sim_cohort, "I", stratified_column=0)
        restricted = simlab.strategy_spec(
            sim_cohort, "I", stratified_column=0, pairs=[(1, 2), (2, 1)]
        )
        a = run_sensitivity(sim_cohort.dataset, full, small_cfg)
        b = run_sensitivity(sim_cohort.dataset, restricted, small_cfg)
        assert abs(a.effect(1, 2).mean - b.effect(1, 2).mean) > 0.005

    def test_cell_errors_carry_fit_coordinates(self, sim_cohort, small_cfg, monkeypatch):
        calls = {"count": 0}
        real_fit = sumtrees.fit

        def boom(x, y, cfg):
            calls["count"] += 1
            if calls["count"] == 3:
                raise DataError("synthetic failure")
            return real_fit(x, y, cfg)

        monkeypatch.setattr("mtsens.engine.sumtrees.fit", boom)
        with pytest.raises(DataError, match=r"fit \(m1=1, m2=0\): synthetic failure"):
            run_sensitivity(sim_cohort.dataset, ConfoundingSpec({}), small_cfg)

    def test_contrasts_invariant_under_response_shift(self, sim_cohort):
        # the pipeline's outcome model sees continuous adjusted outcomes; a
        # constant shift must cancel in every pairwise contrast
        ds = sim_cohort.dataset
        c_vals = {p: 0.15 for p in ALL_PAIRS}
        gps_flat = np.full((ds.n, 3), 1 / 3)
        y_cf = adjust_outcomes(ds.outcome.astype(float), ds.treatment, gps_flat, c_vals)
        x_aug = np.column_stack([ds.covariates, ds.treatment.astype(np.float64)])
        cfg = sumtrees.SumOfTreesConfig.fast(seed=31)
        m_base = sumtrees.fit(x_aug, y_cf, cfg)
        m_shift = sumtrees.fit(x_aug, y_cf + 0.25, cfg)
        for pair in UPPER_PAIRS:
            base = estimate_pair_effect(m_base, ds, pair).mean()
            shifted = estimate_pair_effect(m_shift, ds, pair).mean()
            assert abs(base - shifted) < 0.01


@pytest.fixture(scope="module")
def study_truth():
    return simlab.gen_illustrative(1500, seed=21)


@pytest.fixture(scope="module")
def study_cfg():
    return EngineConfig(
        m1=10,
        m2=10,
        gps=GpsModelConfig(model="stratified", strat_columns=(0,)),
        trees=sumtrees.SumOfTreesConfig.fast(),
        seed=2,
    )


@pytest.fixture(scope="module")
def strategy_i_run(study_truth, study_cfg):
    spec = simlab.strategy_spec(study_truth, "I", stratified_column=0)
    return run_sensitivity(study_truth.dataset, spec, study_cfg)


@pytest.fixture(scope="module")
def u_visible_run(study_truth, study_cfg):
    import dataclasses

    cfg = dataclasses.replace(
        study_cfg, gps=GpsModelConfig(model="stratified", strat_columns=(0, 1))
    )
    return run_sensitivity(study_truth.oracle_dataset, ConfoundingSpec({}), cfg)


class TestStudyCohortRuns:
    """One anchored-prior run and one hidden-covariate-revealed run, each
    judged against the generator's exact long-run effects."""

    EXACT = {(1, 2): -0.1606, (1, 3): -0.3153, (2, 3): -0.1547}
    ROUNDED = {(1, 2): -0.16, (1, 3): -0.29, (2, 3): -0.13}

    def test_anchored_priors_recover_generator_truth(self, strategy_i_run):
        for pair, want in self.EXACT.items():
            assert strategy_i_run.effect(*pair).mean == pytest.approx(want, abs=0.02)

    def test_revealing_hidden_covariate_matches_saturated_fit(
        self, study_truth, u_visible_run
    ):
        # with both binary covariates visible the best the model can do is the
        # per-(x1, u, arm) observed cell means; the run should track that
        # saturated estimate closely, and the generator truth only loosely
        # (each cell holds ~125 units, so cell noise alone is ~0.03 sd)
        ds = study_truth.oracle_dataset
        x1, u, a, y = ds.covariates[:, 0], ds.covariates[:, 1], ds.treatment, ds.outcome
        cell = {
            (xv, uv, arm): y[(x1 == xv) & (u == uv) & (a == arm)].mean()
            for xv in (0.0, 1.0)
            for uv in (0.0, 1.0)
            for arm in (1, 2, 3)
        }
        for (j, k), want in self.EXACT.items():
            saturated = np.mean(
                [cell[(xv, uv, j)] - cell[(xv, uv, k)] for xv, uv in zip(x1, u)]
            )
            got = u_visible_run.effect(j, k).mean
            assert got == pytest.approx(saturated, abs=0.02)
            assert got == pytest.approx(want, abs=0.06)

    @pytest.mark.xfail(
        strict=True,
        reason="the anchored run lands on the generator's exact effects "
        "(-0.1606, -0.3153, -0.1547); the rounded targets (-0.16, -0.29, "
        "-0.13) sit ~0.025 away on (1,3) and (2,3), outside the margin",
    )
    def test_anchored_priors_near_rounded_targets(self, strategy_i_run):
        for pair, want in self.ROUNDED.items():
            assert strategy_i_run.effect(*pair).mean == pytest.approx(want, abs=0.02)

    @pytest.mark.xfail(
        strict=True,
        reason="with this cohort's cell noise the unconfounded run realizes "
        "(1,2) ~ -0.129, 0.031 from the rounded -0.16 target",
    )
    def test_u_visible_near_rounded_targets(self, u_visible_run):
        for pair, want in self.ROUNDED.items():
            assert u_visible_run.effect(*pair).mean == pytest.approx(want, abs=0.02)
