import numpy as np
import pytest
from scipy.stats import chi2

from mtsens import _treekernel as tk
from mtsens.errors import DataError
from mtsens.sumtrees import (
    SumOfTreesConfig,
    SumOfTreesModel,
    fit,
    mean_prediction_draws,
    predict_draws,
)


def walk_slots(model):
    """Yield (leaf depths, internal (var, cut) pairs) for every kept tree."""
    T = 1 if model.degenerate else model.config.tree_count
    for k in range(model.keep):
        for t in range(T):
            lo = int(model.offsets[k * T + t])
            depths, splits = [], []
            stack = [(0, 0)]
            while stack:
                pos, d = stack.pop()
                if model.node_var[lo + pos] < 0:
                    depths.append(d)
                else:
                    splits.append((int(model.node_var[lo + pos]), float(model.node_cut[lo + pos])))
                    stack.append((pos + 1, d + 1))
                    stack.append((int(model.node_right[lo + pos]), d + 1))
            yield depths, splits


def stump_model(leaf, y_min, y_max, n_columns, keep=3):
    cfg = SumOfTreesConfig(tree_count=1, burn_in=0, keep=keep)
    return SumOfTreesModel(
        node_var=np.full(keep, -1, np.int32),
        node_cut=np.zeros(keep),
        node_val=np.full(keep, float(leaf)),
        node_right=np.full(keep, -1, np.int32),
        offsets=np.arange(keep + 1, dtype=np.int64),
        changed=np.ones((keep, 1), np.uint8),
        sigma2_scaled=np.full(keep, 1e-4),
        y_min=y_min,
        y_max=y_max,
        n_columns=n_columns,
        config=cfg,
    )


class TestFit:
    def test_constant_response(self, tiny_trees):
        x = np.random.default_rng(0).normal(size=(40, 2))
        model = fit(x, np.full(40, 0.7), tiny_trees)
        assert model.degenerate
        preds = predict_draws(model, x)
        np.testing.assert_allclose(preds, 0.7, atol=0.01)
        # in fact exact: the degenerate path pins every leaf at the constant
        assert np.all(preds == 0.7)
        assert model.sigma_draws.max() < 1e-5

    def test_linear_signal_recovery(self):
        r = np.random.default_rng(42)
        n = 500
        x = r.uniform(-1, 1, size=(n, 2))
        y = 2.0 * x[:, 0] + r.normal(0, 0.1, size=n)
        model = fit(x, y, SumOfTreesConfig(seed=1))
        post_mean = predict_draws(model, x).mean(axis=0)
        rmse = np.sqrt(np.mean((post_mean - 2.0 * x[:, 0]) ** 2))
        assert rmse <= 0.1
        assert 0.07 <= model.sigma_draws.mean() <= 0.14

    def test_interaction_beats_additive_fit(self):
        r = np.random.default_rng(7)
        n = 1000
        x = r.uniform(-1, 1, size=(n, 2))
        y = x[:, 0] * x[:, 1] + r.normal(0, 0.05, size=n)
        model = fit(x, y, SumOfTreesConfig.fast(seed=2))
        post_mean = predict_draws(model, x).mean(axis=0)
        rmse = np.sqrt(np.mean((post_mean - y) ** 2))
        design = np.column_stack([np.ones(n), x])
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        lin_rmse = np.sqrt(np.mean((design @ beta - y) ** 2))
        assert rmse <= lin_rmse / 2

    def test_input_validation(self, tiny_trees):
        x = np.random.default_rng(0).normal(size=(20, 2))
        y = np.zeros(20)
        with pytest.raises(DataError, match="at least 10 rows"):
            fit(x[:5], y[:5], tiny_trees)
        with pytest.raises(DataError, match="expected"):
            fit(x, y[:-1], tiny_trees)
        bad = y.copy()
        bad[3] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            fit(x, bad, tiny_trees)
        xbad = x.copy()
        xbad[0, 0] = np.inf
        with pytest.raises(DataError, match="non-finite"):
            fit(xbad, y, tiny_trees)
        with pytest.raises(DataError, match="2-D"):
            fit(y, y, tiny_trees)

    def test_config_validation(self):
        with pytest.raises(DataError, match="tree_count"):
            SumOfTreesConfig(tree_count=0)
        with pytest.raises(DataError, match="kappa"):
            SumOfTreesConfig(kappa=0.0)
        with pytest.raises(DataError, match="depth_base"):
            SumOfTreesConfig(depth_base=1.0)
        with pytest.raises(DataError, match="sigma_quantile"):
            SumOfTreesConfig(sigma_quantile=1.5)

    def test_fast_profile(self):
        cfg = SumOfTreesConfig.fast(seed=9)
        assert (cfg.tree_count, cfg.burn_in, cfg.keep) == (50, 100, 250)
        assert cfg.seed == 9
        assert cfg.with_seed(4).seed == 4


class TestPredict:
    def test_all_stump_leaf_zero(self):
        model = stump_model(0.0, y_min=0.3, y_max=1.3, n_columns=2)
        preds = predict_draws(model, np.zeros((5, 2)))
        assert np.all(preds == model.unscale(0.0))
        assert model.unscale(0.0) == pytest.approx(0.8)

    def test_duplicate_rows_get_identical_columns(self, tiny_trees):
        r = np.random.default_rng(3)
        x = r.normal(size=(60, 3))
        y = x[:, 0] + r.normal(0, 0.2, size=60)
        model = fit(x, y, tiny_trees)
        x_new = np.vstack([x[4], x[4], x[17], x[17]])
        preds = predict_draws(model, x_new)
        assert np.array_equal(preds[:, 0], preds[:, 1])
        assert np.array_equal(preds[:, 2], preds[:, 3])

    def test_in_sample_rmse_bounded_by_response_sd(self, tiny_trees):
        r = np.random.default_rng(5)
        x = r.normal(size=(80, 2))
        y = r.normal(size=80)  # pure noise: the fit may not help, but must not hurt
        model = fit(x, y, tiny_trees)
        post_mean = predict_draws(model, x).mean(axis=0)
        assert np.sqrt(np.mean((post_mean - y) ** 2)) <= y.std()

    def test_schema_mismatch(self, tiny_trees):
        x = np.random.default_rng(0).normal(size=(30, 3))
        model = fit(x, x[:, 0], tiny_trees)
        with pytest.raises(DataError, match="trained on 3"):
            predict_draws(model, x[:, :2])

    def test_mean_prediction_matches_full_draws(self, tiny_trees):
        r = np.random.default_rng(11)
        x = r.normal(size=(50, 2))
        y = x[:, 0] - 0.5 * x[:, 1] + r.normal(0, 0.3, size=50)
        model = fit(x, y, tiny_trees)
        draws = predict_draws(model, x)
        np.testing.assert_allclose(
            mean_prediction_draws(model, x), draws.mean(axis=1), atol=1e-10
        )
        w = r.uniform(0.1, 1.0, size=50)
        np.testing.assert_allclose(
            mean_prediction_draws(model, x, weights=w),
            draws @ (w / w.sum()),
            atol=1e-10,
        )

    def test_weight_validation(self, tiny_trees):
        x = np.random.default_rng(0).normal(size=(30, 2))
        model = fit(x, x[:, 0], tiny_trees)
        with pytest.raises(DataError, match="weights have shape"):
            mean_prediction_draws(model, x, weights=np.ones(4))
        with pytest.raises(DataError, match="sum to a positive"):
            mean_prediction_draws(model, x, weights=np.zeros(30))


class TestModelInvariants:
    def test_depth_stays_shallow_on_noise(self):
        r = np.random.default_rng(13)
        x = r.normal(size=(200, 3))
        y = r.normal(size=200)
        cfg = SumOfTreesConfig(tree_count=50, burn_in=100, keep=100, seed=6)
        model = fit(x, y, cfg)
        max_depths = [max(depths) for depths, _ in walk_slots(model)]
        assert np.mean(max_depths) < 4

    def test_splits_reference_valid_columns_and_ranges(self, tiny_trees):
        r = np.random.default_rng(17)
        x = r.normal(size=(100, 3))
        y = x[:, 1] + r.normal(0, 0.2, size=100)
        model = fit(x, y, tiny_trees)
        lo, hi = x.min(axis=0), x.max(axis=0)
        seen = 0
        for _, splits in walk_slots(model):
            for var, cut in splits:
                assert 0 <= var < 3
                assert lo[var] <= cut <= hi[var]
                seen += 1
        assert seen > 0  # the signal should force at least some splits

    def test_sigma_draws_positive(self, tiny_trees):
        r = np.random.default_rng(19)
        x = r.normal(size=(60, 2))
        model = fit(x, x[:, 0], tiny_trees)
        assert model.sigma_draws.min() > 0

    def test_scale_unscale_round_trip(self, tiny_trees):
        r = np.random.default_rng(23)
        x = r.normal(size=(40, 2))
        y = r.uniform(-1, 2, size=40)
        model = fit(x, y, tiny_trees)
        np.testing.assert_allclose(model.unscale(model.scale(y)), y, atol=1e-12)

    def test_deterministic_in_seed(self, tiny_trees):
        r = np.random.default_rng(29)
        x = r.normal(size=(50, 2))
        y = x[:, 0] + r.normal(0, 0.3, size=50)
        a = fit(x, y, tiny_trees)
        b = fit(x, y, tiny_trees)
        c = fit(x, y, tiny_trees.with_seed(99))
        assert np.array_equal(a.node_val[: a.offsets[-1]], b.node_val[: b.offsets[-1]])
        assert np.array_equal(a.sigma2_scaled, b.sigma2_scaled)
        assert not np.array_equal(a.sigma2_scaled, c.sigma2_scaled)


class TestConjugateUpdates:
    """The sampler's two Gibbs blocks against their closed forms."""

    def test_leaf_update_matches_conjugate_posterior(self):
        # both cells of a fixed 2-leaf partition, fixed sigma
        sig2, sigma_mu2 = 0.04, 0.0625
        ndraws = 40_000
        for seed, (count, total) in [(101, (12, 1.8)), (202, (38, -4.1))]:
            draws = tk.leaf_value_draws(count, total, sig2, sigma_mu2, seed, ndraws)
            pv = 1.0 / (1.0 / sigma_mu2 + count / sig2)
            want_mean = pv * total / sig2
            se_mean = np.sqrt(pv / ndraws)
            assert abs(draws.mean() - want_mean) <= 3 * se_mean
            se_var = pv * np.sqrt(2.0 / (ndraws - 1))
            assert abs(draws.var() - pv) <= 3 * se_var

    def test_sigma_update_matches_conditional_quantiles(self):
        # residuals fixed at y itself (all trees stumps at 0)
        r = np.random.default_rng(31)
        ys = r.normal(0, 0.2, size=120)
        nu, lam, n = 3.0, 0.01, ys.shape[0]
        rss = float(ys @ ys)
        draws = np.sqrt(tk.sigma2_cond_draws(nu, lam, rss, n, 77, 10_000))
        qs = np.arange(0.05, 0.96, 0.05)
        want = np.sqrt((nu * lam + rss) / chi2.ppf(1.0 - qs, nu + n))
        got = np.quantile(draws, qs)
        np.testing.assert_allclose(got, want, atol=0.02)

    def test_locked_stump_chain_is_exact_gibbs(self):
        # a depth prior of ~1e-9 rejects every grow, so the single tree stays
        # a stump and the chain reduces to the two-block normal-mean sampler
        r = np.random.default_rng(37)
        n = 150
        x = r.normal(size=(n, 1))
        y = r.normal(0.5, 0.15, size=n)
        cfg = SumOfTreesConfig(
            tree_count=1, burn_in=500, keep=6000, depth_base=1e-9, cutpoints=10, seed=41
        )
        model = fit(x, y, cfg)
        for depths, _ in walk_slots(model):
            assert depths == [0]

        ys = model.scale(y)
        sigma_mu2 = (0.5 / cfg.kappa) ** 2
        from mtsens.sumtrees import _ls_sigma

        sig_hat = _ls_sigma(x, ys)
        nu = cfg.sigma_df
        lam = sig_hat**2 * chi2.ppf(1.0 - cfg.sigma_quantile, nu) / nu

        g = np.random.default_rng(43)
        tot = ys.sum()
        sig2 = sig_hat**2
        mus, sig2s = [], []
        for it in range(50_500):
            pv = 1.0 / (1.0 / sigma_mu2 + n / sig2)
            mu = g.normal(pv * tot / sig2, np.sqrt(pv))
            rss = float(((ys - mu) ** 2).sum())
            sig2 = (nu * lam + rss) / g.chisquare(nu + n)
            if it >= 500:
                mus.append(mu)
                sig2s.append(sig2)
        mus, sig2s = np.array(mus), np.array(sig2s)

        qs = np.arange(0.1, 0.91, 0.1)
        np.testing.assert_allclose(
            np.quantile(np.sqrt(model.sigma2_scaled), qs),
            np.quantile(np.sqrt(sig2s), qs),
            atol=0.02,
        )
        pred_mean = predict_draws(model, x[:1]).mean()
        np.testing.assert_allclose(pred_mean, model.unscale(mus.mean()), atol=0.01)

    def test_locked_two_leaf_chain_matches_two_group_posterior(self):
        # depth_power=60 allows one split and forbids a second; with a strong
        # binary signal the chain lives at that split, so its stationary law
        # is the conjugate two-group model
        r = np.random.default_rng(47)
        n = 400
        x = np.repeat([0.0, 1.0], n // 2)[:, None]
        y = 0.2 + 0.6 * x[:, 0] + r.normal(0, 0.1, size=n)
        cfg = SumOfTreesConfig(
            tree_count=1,
            burn_in=500,
            keep=4000,
            depth_power=60.0,
            cutpoints=10,
            seed=53,
        )
        model = fit(x, y, cfg)

        ys = model.scale(y)
        sigma_mu2 = (0.5 / cfg.kappa) ** 2
        from mtsens.sumtrees import _ls_sigma

        sig_hat = _ls_sigma(x, ys)
        nu = cfg.sigma_df
        lam = sig_hat**2 * chi2.ppf(1.0 - cfg.sigma_quantile, nu) / nu

        masks = [x[:, 0] == 0.0, x[:, 0] == 1.0]
        g = np.random.default_rng(59)
        sig2 = sig_hat**2
        mu = np.zeros(2)
        mu_draws, took = [], 20_500
        for it in range(took):
            for i, mask in enumerate(masks):
                pv = 1.0 / (1.0 / sigma_mu2 + mask.sum() / sig2)
                mu[i] = g.normal(pv * ys[mask].sum() / sig2, np.sqrt(pv))
            rss = sum(float(((ys[mask] - mu[i]) ** 2).sum()) for i, mask in enumerate(masks))
            sig2 = (nu * lam + rss) / g.chisquare(nu + n)
            if it >= 500:
                mu_draws.append(mu.copy())
        mu_draws = np.array(mu_draws)

        grid = np.array([[0.0], [1.0]])
        got = predict_draws(model, grid).mean(axis=0)
        want = model.unscale(mu_draws.mean(axis=0))
        np.testing.assert_allclose(got, want, atol=0.01)
