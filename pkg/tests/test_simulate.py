import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from missreg.errors import NoCompleteCases, PDFailure, UnknownExperiment
from missreg.lowdim import fit_weighted_imputation, unit_weights
from missreg.patterns import group_by_pattern
from missreg.simulate import (
    GaussianDesign,
    MissingnessSpec,
    experiment_defaults,
    fit_cc_ols,
    fit_mean_imputation,
    fit_si,
    gen_ar_covariance,
    gen_block_crossed_covariance,
    resolve_params,
    run_experiment,
    sample_dataset,
)


class TestCovariances:
    def test_ar(self):
        S = gen_ar_covariance(3, 0.5)
        np.testing.assert_allclose(S, [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
        assert np.array_equal(gen_ar_covariance(4, 0.0), np.eye(4))

    def test_ar_range(self):
        with pytest.raises(ValueError):
            gen_ar_covariance(3, 1.0)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12), st.floats(0.0, 0.95))
    def test_block_crossed_spectrum(self, seed, p, scale):
        split = p // 2
        S = gen_block_crossed_covariance(p, split, scale, seed)
        ev = np.linalg.eigvalsh(S)
        assert ev[0] == pytest.approx(1 - scale, abs=1e-12)
        assert ev[-1] == pytest.approx(1 + scale, abs=1e-12)
        np.testing.assert_allclose(ev[1:-1], 1.0, atol=1e-12)
        assert np.linalg.norm(S[:split, split:], 2) == pytest.approx(scale, abs=1e-12)
        assert np.array_equal(np.diag(S), np.ones(p))

    def test_block_crossed_not_pd(self):
        with pytest.raises(PDFailure):
            gen_block_crossed_covariance(6, 3, 1.0, 0)

    def test_block_crossed_seeded(self):
        a = gen_block_crossed_covariance(10, 4, 0.3, [1, 7])
        b = gen_block_crossed_covariance(10, 4, 0.3, [1, 7])
        assert np.array_equal(a, b)


class TestSampling:
    def test_noiseless_response(self):
        d = GaussianDesign(gen_ar_covariance(4, 0.3), np.arange(1.0, 5.0), 0.0)
        ds = sample_dataset(d, MissingnessSpec.monotonic(1, 50, 0), 0)
        g = ds.groups[0]
        np.testing.assert_allclose(g.y, g.x @ np.arange(1.0, 5.0), atol=1e-12)

    def test_monotonic_without_incomplete_rows(self):
        d = GaussianDesign(np.eye(3), np.ones(3), 1.0)
        ds = sample_dataset(d, MissingnessSpec.monotonic(1, 100, 0), 0)
        assert ds.K == 1 and ds.groups[0].pattern.is_complete(3)

    def test_monotonic_layout(self):
        d = GaussianDesign(np.eye(5), np.ones(5), 1.0)
        ds = sample_dataset(d, MissingnessSpec.monotonic(2, 30, 70, 11), 0)
        sizes = {g.pattern.observed: g.n for g in ds.groups}
        assert sizes == {(0, 1, 2, 3, 4): 30, (0, 1, 2): 70} and ds.N == 11

    def test_mcar_rate(self):
        d = GaussianDesign(np.eye(6), np.ones(6), 1.0)
        ds = sample_dataset(d, MissingnessSpec.mcar(0.3, 4000), 1)
        _, M, _, _ = ds.stacked
        n_cells = 4000 * 6
        # empty rows are dropped, which conditions on at least one observed cell
        p_row = 1 - 0.7 ** 6
        expect = 0.3 / p_row
        se = np.sqrt(expect * (1 - expect) / n_cells)
        assert abs(M.mean() - expect) <= 4 * se

    def test_deterministic_and_common_random_numbers(self):
        d = GaussianDesign(gen_ar_covariance(4, 0.6), np.ones(4), 1.0)
        a = sample_dataset(d, MissingnessSpec.monotonic(1, 20, 100), 3)
        b = sample_dataset(d, MissingnessSpec.monotonic(1, 20, 100), 3)
        c = sample_dataset(d, MissingnessSpec.monotonic(1, 20, 500), 3)
        assert np.array_equal(a.groups[0].x, b.groups[0].x)
        # groups sort by pattern, so the incomplete block comes first;
        # enlarging it leaves the complete block and its own prefix untouched
        assert np.array_equal(a.groups[1].x, c.groups[1].x)
        assert np.array_equal(a.groups[0].x, c.groups[0].x[:100])

    def test_design_validation(self):
        with pytest.raises(ValueError):
            GaussianDesign(np.eye(2), np.ones(3), 1.0)
        with pytest.raises(ValueError):
            GaussianDesign(np.eye(2), np.ones(2), -1.0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MissingnessSpec.mcar(1.0, 10)
        with pytest.raises(ValueError):
            MissingnessSpec.monotonic(1, 0, 0)
        with pytest.raises(ValueError):
            MissingnessSpec("bogus")


class TestBaselines:
    def test_cc_matches_global_ols(self, rng):
        X = rng.standard_normal((40, 3))
        y = rng.standard_normal(40)
        np.testing.assert_allclose(fit_cc_ols(group_by_pattern(X, y)),
                                   np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-12)

    def test_cc_ignores_incomplete_rows(self, rng):
        X = rng.standard_normal((40, 3))
        y = rng.standard_normal(40)
        Xm = X.copy()
        Xm[25:, 2] = np.nan
        np.testing.assert_allclose(fit_cc_ols(group_by_pattern(Xm, y)),
                                   np.linalg.lstsq(X[:25], y[:25], rcond=None)[0], atol=1e-12)

    def test_cc_hand_example(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]])
        y = np.array([1.0, 2.0, 3.0, 0.0])
        # X^T X = [[3, 0], [0, 3]], X^T y = [4, 5]
        np.testing.assert_allclose(fit_cc_ols(group_by_pattern(X, y)), [4 / 3, 5 / 3])

    def test_no_complete_cases(self):
        X = np.array([[1.0, np.nan], [np.nan, 1.0], [2.0, np.nan]])
        with pytest.raises(NoCompleteCases):
            fit_cc_ols(group_by_pattern(X, np.ones(3), np.ones((2, 2))))

    def test_si_is_unit_weight_fit(self, rng):
        X = rng.standard_normal((60, 3))
        X[30:, 1] = np.nan
        ds = group_by_pattern(X, rng.standard_normal(60))
        S = gen_ar_covariance(3, 0.4)
        assert np.array_equal(fit_si(ds, S).beta,
                              fit_weighted_imputation(ds, S, unit_weights(ds)).beta)

    def test_mean_imputation_complete_data(self, rng):
        X = rng.standard_normal((30, 2))
        y = rng.standard_normal(30)
        np.testing.assert_allclose(fit_mean_imputation(group_by_pattern(X, y)),
                                   np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-12)

    @settings(max_examples=20)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_mcar_column_permutation(self, seed):
        # relabelling covariates permutes every estimator's output
        rng = np.random.default_rng(seed)
        d = GaussianDesign(gen_ar_covariance(4, 0.5), rng.standard_normal(4), 1.0)
        ds = sample_dataset(d, MissingnessSpec.mcar(0.7, 80), seed)
        X, M, y, _ = ds.stacked
        Xn = np.where(M, X, np.nan)
        perm = rng.permutation(4)
        a = fit_mean_imputation(group_by_pattern(Xn, y))
        b = fit_mean_imputation(group_by_pattern(Xn[:, perm], y))
        np.testing.assert_allclose(b, a[perm], atol=1e-10)


class TestRunner:
    def test_unknown_experiment(self):
        with pytest.raises(UnknownExperiment):
            run_experiment("fig99", reps=1)

    def test_unknown_parameter(self):
        with pytest.raises(ValueError):
            resolve_params("fig1", {"bogus": 1})

    def test_string_overrides(self):
        P = resolve_params("fig1", {"x": "100,300", "sigma": "2", "n1": "50"})
        assert P["x"] == (100, 300) and P["sigma"] == 2.0 and P["n1"] == 50

    def test_defaults_include_reps(self):
        assert experiment_defaults("table2")["reps"] == 200

    def test_deterministic_csv(self):
        kw = dict(reps=3, seed=5, overrides={"x": (100, 1000)}, n_jobs=1)
        assert run_experiment("fig1", **kw).to_csv() == run_experiment("fig1", **kw).to_csv()

    def test_worker_count_does_not_change_output(self):
        kw = dict(reps=4, seed=1, overrides={"x": (100,)})
        assert (run_experiment("fig2", n_jobs=1, **kw).to_csv()
                == run_experiment("fig2", n_jobs=2, **kw).to_csv())

    def test_summary_fields(self):
        res = run_experiment("fig1", reps=5, overrides={"x": (300,)}, n_jobs=1)
        cc = res.get("CC", 300)
        assert cc.rel_eff == pytest.approx(1.0) and cc.errors.shape == (5,)
        iss = res.get("ISS", 300)
        assert iss.mse == pytest.approx(iss.errors.mean())
        assert res.to_csv().splitlines()[0] == "experiment,method,x,mse,se,rel_eff,rel_eff_se"

    def test_iss_beats_si_with_many_incomplete_rows(self):
        res = run_experiment("fig1", reps=30, overrides={"x": (30000,)}, n_jobs=1)
        assert res.get("ISS", 30000).mse < res.get("SI", 30000).mse
        assert res.get("ISS", 30000).mse < res.get("CC", 30000).mse
