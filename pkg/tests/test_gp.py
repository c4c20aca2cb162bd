"""GP regression tests against a direct matrix-inversion oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pourplan import gp
from pourplan.pouring import GroundTruth, gen_dataset, subsample
from pourplan.seeding import substream


def oracle_kernel(params, a, b):
    """Literal composite-kernel formula, independent of the library path."""
    diff = np.asarray(a) - np.asarray(b)
    dot = params.dot_sigma0_sq + float(np.dot(a, b))
    rq = (1.0 + float(diff @ diff) / (2.0 * params.rq_alpha * params.rq_scale**2)) ** (
        -params.rq_alpha
    )
    return dot + rq


def oracle_predict(model, query):
    """Posterior via explicit matrix inversion, using the stored scalers."""
    data = model.dataset
    Z = (data.features - model.feature_scaler.mean) / model.feature_scaler.scale
    y = (data.targets - model.target_scaler.mean) / model.target_scaler.sd
    p = model.params
    H = len(data)
    K = np.array([[oracle_kernel(p, Z[i], Z[j]) for j in range(H)] for i in range(H)])
    K_noisy = K + (p.noise_var / model.target_scaler.sd**2) * np.eye(H)
    K_inv = np.linalg.inv(K_noisy)
    zq = (np.asarray(query) - model.feature_scaler.mean) / model.feature_scaler.scale
    kstar = np.array([oracle_kernel(p, Z[i], zq) for i in range(H)])
    mean_n = kstar @ K_inv @ y
    var_n = oracle_kernel(p, zq, zq) - kstar @ K_inv @ kstar
    return (
        model.target_scaler.mean + model.target_scaler.sd * mean_n,
        var_n * model.target_scaler.sd**2,
    )


def random_dataset(rng, n):
    feats = np.column_stack(
        [rng.uniform(0, 90, n), rng.uniform(0, 2.2, n), rng.uniform(0, 1.2, n)]
    )
    targets = np.clip(
        feats[:, 0] + 20 * feats[:, 1] * feats[:, 2] + rng.normal(0, 1.0, n), 0, 100
    )
    return gp.Dataset(feats, targets)


def random_queries(rng, m):
    return np.column_stack(
        [rng.uniform(0, 100, m), rng.uniform(0, 2.5, m), rng.uniform(0, 1.5, m)]
    )


class TestFeature:
    def test_valid(self):
        f = gp.Feature(50.0, 1.0, 0.5)
        np.testing.assert_array_equal(f.as_array(), [50.0, 1.0, 0.5])

    @pytest.mark.parametrize(
        "level,alpha,duration",
        [
            (-1.0, 1.0, 0.5),
            (101.0, 1.0, 0.5),
            (50.0, -0.1, 0.5),
            (50.0, 1.0, -0.5),
            (float("nan"), 1.0, 0.5),
            (50.0, float("inf"), 0.5),
        ],
    )
    def test_invalid(self, level, alpha, duration):
        with pytest.raises(ValueError):
            gp.Feature(level, alpha, duration)


class TestKernelParams:
    def test_defaults_valid(self):
        p = gp.KernelParams()
        assert p.rq_scale > 0 and p.noise_var >= 0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rq_scale": 0.0},
            {"rq_alpha": -1.0},
            {"noise_var": -0.1},
            {"dot_sigma0_sq": -1.0},
            {"rq_scale": float("nan")},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            gp.KernelParams(**kwargs)


class TestKernelEval:
    def test_zero_distance_rq_term_is_one(self):
        p = gp.KernelParams(dot_sigma0_sq=0.7, rq_scale=2.0, rq_alpha=3.0)
        z = np.array([12.0, 1.5, 0.4])
        k = gp.kernel_eval(p, z, z)
        assert k == pytest.approx(p.dot_sigma0_sq + z @ z + 1.0, abs=1e-14)

    def test_zero_vector_leaves_bias_only_dot_term(self):
        p = gp.KernelParams(dot_sigma0_sq=2.5, rq_scale=1.3, rq_alpha=0.7)
        z2 = np.array([40.0, 2.0, 1.0])
        k = gp.kernel_eval(p, np.zeros(3), z2)
        rq = (1.0 + float(z2 @ z2) / (2.0 * p.rq_alpha * p.rq_scale**2)) ** (-p.rq_alpha)
        assert k - rq == pytest.approx(p.dot_sigma0_sq, abs=1e-12)

    def test_unit_params_closed_form(self):
        # sigma0^2 = 1, unit scales, offset (1,0,0): 1 + 0 + (1 + 0.5)^-1 = 5/3
        p = gp.KernelParams(dot_sigma0_sq=1.0, rq_scale=1.0, rq_alpha=1.0)
        k = gp.kernel_eval(p, np.zeros(3), np.array([1.0, 0.0, 0.0]))
        assert k == pytest.approx(5.0 / 3.0, abs=1e-12)
        assert k == pytest.approx(1.6667, abs=1e-4)

    @given(
        a=st.tuples(*[st.floats(-50, 50) for _ in range(3)]),
        b=st.tuples(*[st.floats(-50, 50) for _ in range(3)]),
    )
    @settings(max_examples=200, deadline=None)
    def test_symmetry(self, a, b):
        p = gp.KernelParams(dot_sigma0_sq=0.5, rq_scale=1.7, rq_alpha=2.0)
        assert gp.kernel_eval(p, np.array(a), np.array(b)) == gp.kernel_eval(
            p, np.array(b), np.array(a)
        )

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        p = gp.KernelParams(dot_sigma0_sq=0.2, rq_scale=0.8, rq_alpha=1.4)
        for _ in range(30):
            a, b = rng.normal(size=3), rng.normal(size=3)
            assert gp.kernel_eval(p, a, b) == pytest.approx(
                oracle_kernel(p, a, b), abs=1e-12
            )

    def test_non_finite_rejected(self):
        p = gp.KernelParams()
        with pytest.raises(ValueError):
            gp.kernel_eval(p, np.array([np.nan, 0, 0]), np.zeros(3))

    def test_gram_positive_semidefinite(self):
        rng = np.random.default_rng(11)
        p = gp.KernelParams(dot_sigma0_sq=1.0, rq_scale=1.0, rq_alpha=1.0)
        Z = rng.normal(size=(10, 3))
        gram = gp.kernel_matrix(p, Z, Z)
        np.testing.assert_allclose(gram, gram.T, atol=1e-12)
        assert np.linalg.eigvalsh(gram).min() >= -1e-8


class TestGpFit:
    def test_single_point_interpolates(self):
        data = gp.Dataset([[10.0, 1.0, 0.5]], [37.0])
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.0))
        pred = gp.gp_predict(model, np.array([10.0, 1.0, 0.5]))
        assert pred.mean == pytest.approx(37.0, abs=1e-9)

    def test_matches_inversion_oracle(self):
        rng = np.random.default_rng(123)
        data = random_dataset(rng, 5)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.5))
        for q in random_queries(rng, 20):
            mu, var = oracle_predict(model, q)
            pred = gp.gp_predict(model, q)
            assert pred.raw_mean == pytest.approx(mu, abs=1e-8)
            assert pred.variance == pytest.approx(var, abs=1e-8)

    def test_refit_bitwise_identical(self):
        rng = np.random.default_rng(7)
        data = random_dataset(rng, 12)
        m1 = gp.gp_fit(data, gp.KernelParams(noise_var=2.0))
        m2 = gp.gp_fit(data, gp.KernelParams(noise_var=2.0))
        np.testing.assert_array_equal(m1.chol, m2.chol)
        np.testing.assert_array_equal(m1.alpha_vec, m2.alpha_vec)
        assert m1.params == m2.params
        assert m1.jitter == m2.jitter

    def test_chol_reconstructs_gram(self):
        rng = np.random.default_rng(3)
        data = random_dataset(rng, 15)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=1.0))
        Z = model.feature_scaler.transform(data.features)
        target = gp.kernel_matrix(model.params, Z, Z) + (
            model.noise_var_normalized + model.jitter
        ) * np.eye(len(data))
        recon = model.chol @ model.chol.T
        assert np.max(np.abs(recon - target)) <= 1e-8 * np.max(np.abs(target))

    def test_conflicting_duplicates_with_zero_noise_rejected(self):
        data = gp.Dataset([[10.0, 1.0, 0.5], [10.0, 1.0, 0.5]], [20.0, 30.0])
        with pytest.raises(gp.GpFitError):
            gp.gp_fit(data, gp.KernelParams(noise_var=0.0))


class TestGpPredict:
    def test_variance_near_zero_at_training_point(self):
        rng = np.random.default_rng(21)
        data = random_dataset(rng, 6)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.0))
        for row in data.features:
            assert gp.gp_predict(model, row).variance <= 1e-8

    def test_variance_grows_far_from_data(self):
        rng = np.random.default_rng(22)
        feats = np.column_stack(
            [rng.uniform(10, 30, 8), rng.uniform(0.5, 1.0, 8), rng.uniform(0.2, 0.5, 8)]
        )
        data = gp.Dataset(feats, rng.uniform(20, 40, 8))
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.1))
        far = gp.gp_predict(model, np.array([100.0, 2.5, 1.5])).variance
        at_train = max(gp.gp_predict(model, row).variance for row in data.features)
        assert far > at_train

    def test_mean_clamped_raw_preserved(self):
        # strong upward linear trend pushes the raw extrapolation past 100
        feats = np.column_stack(
            [np.linspace(50, 80, 8), np.full(8, 1.0), np.full(8, 0.5)]
        )
        data = gp.Dataset(feats, np.linspace(60, 90, 8))
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.01))
        pred = gp.gp_predict(model, np.array([100.0, 1.0, 0.5]))
        assert pred.raw_mean > 100.0
        assert pred.mean == 100.0

    def test_variance_below_prior(self):
        rng = np.random.default_rng(31)
        data = random_dataset(rng, 10)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.7))
        sd2 = model.target_scaler.sd**2
        for q in random_queries(rng, 25):
            zq = model.feature_scaler.transform(q)
            prior = (
                oracle_kernel(model.params, zq, zq) + model.noise_var_normalized
            ) * sd2
            assert gp.gp_predict(model, q).variance <= prior + 1e-9

    def test_more_data_never_increases_variance(self):
        # fixed scalers isolate the conditioning effect from renormalization
        rng = np.random.default_rng(41)
        for _ in range(5):
            big = random_dataset(rng, 9)
            small = gp.Dataset(big.features[:8], big.targets[:8])
            fs = gp.FeatureScaler.fit(big.features)
            ts = gp.TargetScaler.fit(big.targets)
            params = gp.KernelParams(noise_var=0.5)
            m_small = gp.gp_fit(small, params, feature_scaler=fs, target_scaler=ts)
            m_big = gp.gp_fit(big, params, feature_scaler=fs, target_scaler=ts)
            for q in random_queries(rng, 10):
                assert (
                    gp.gp_predict(m_big, q).variance
                    <= gp.gp_predict(m_small, q).variance + 1e-9
                )

    def test_batch_equals_scalar_path(self):
        rng = np.random.default_rng(51)
        data = random_dataset(rng, 20)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=1.5))
        queries = random_queries(rng, 40)
        batch = gp.gp_predict_batch(model, queries)
        for i, q in enumerate(queries):
            one = gp.gp_predict(model, q)
            assert one.raw_mean == pytest.approx(batch.raw_mean[i], abs=1e-10)
            assert one.variance == pytest.approx(batch.variance[i], abs=1e-10)


class TestMde:
    def test_zero_at_training_point_with_zero_noise(self):
        data = gp.Dataset([[10.0, 1.0, 0.5], [50.0, 1.5, 0.8]], [20.0, 70.0])
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.0))
        assert gp.mde(model, 10.0, (1.0, 0.5)) <= 1e-8

    def test_variance_is_square_of_std(self):
        rng = np.random.default_rng(61)
        data = random_dataset(rng, 8)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.3))
        for q in random_queries(rng, 10):
            var = gp.mde(model, q[0], (q[1], q[2]), kind="variance")
            std = gp.mde(model, q[0], (q[1], q[2]), kind="std")
            assert var == pytest.approx(std**2, rel=1e-12)

    def test_ordering_matches_oracle(self):
        rng = np.random.default_rng(71)
        data = random_dataset(rng, 6)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=0.2))
        queries = random_queries(rng, 15)
        ours = [gp.mde(model, q[0], (q[1], q[2])) for q in queries]
        theirs = [oracle_predict(model, q)[1] for q in queries]
        assert np.array_equal(np.argsort(ours), np.argsort(theirs))

    def test_unknown_kind_rejected(self):
        data = gp.Dataset([[10.0, 1.0, 0.5]], [20.0])
        model = gp.gp_fit(data)
        with pytest.raises(ValueError):
            gp.mde(model, 10.0, (1.0, 0.5), kind="stdev")


def oracle_lml(data, params):
    """Independent log-marginal-likelihood evaluator (explicit inverse)."""
    fs = gp.FeatureScaler.fit(data.features)
    ts = gp.TargetScaler.fit(data.targets)
    Z = fs.transform(data.features)
    y = ts.transform(data.targets)
    H = len(data)
    K = np.array([[oracle_kernel(params, Z[i], Z[j]) for j in range(H)] for i in range(H)])
    K_noisy = K + (params.noise_var / ts.sd**2) * np.eye(H)
    sign, logdet = np.linalg.slogdet(K_noisy)
    assert sign > 0
    return float(
        -0.5 * y @ np.linalg.inv(K_noisy) @ y - 0.5 * logdet - 0.5 * H * math.log(2 * math.pi)
    )


class TestHyperFit:
    def test_lml_matches_oracle(self):
        rng = np.random.default_rng(81)
        data = random_dataset(rng, 8)
        for params in (
            gp.KernelParams(),
            gp.KernelParams(dot_sigma0_sq=0.1, rq_scale=0.5, rq_alpha=2.0, noise_var=4.0),
        ):
            assert gp.log_marginal_likelihood(data, params) == pytest.approx(
                oracle_lml(data, params), abs=1e-8
            )

    def test_single_candidate_space_returns_it(self):
        rng = np.random.default_rng(91)
        data = random_dataset(rng, 6)
        space = gp.HyperSearchSpace(
            dot_sigma0_sq=(0.5, 0.5, 1),
            rq_scale=(2.0, 2.0, 1),
            rq_alpha=(1.5, 1.5, 1),
            noise_var=(0.25, 0.25, 1),
        )
        params = gp.fit_hyperparams(data, space)
        assert params == gp.KernelParams(0.5, 2.0, 1.5, 0.25)

    def test_noise_free_linear_data_drives_noise_to_lower_bound(self):
        # targets are an exact linear function of the features: the most
        # likely explanation needs (almost) no observation noise
        rng = np.random.default_rng(101)
        feats = np.column_stack(
            [rng.uniform(0, 80, 12), rng.uniform(0, 2, 12), rng.uniform(0, 1, 12)]
        )
        targets = 0.5 * feats[:, 0] + 10 * feats[:, 1] + 5 * feats[:, 2] + 10
        data = gp.Dataset(feats, targets)
        space = gp.HyperSearchSpace(noise_var=(1e-6, 10.0, 4))
        params = gp.fit_hyperparams(data, space)
        assert params.noise_var == pytest.approx(1e-6)
        # grid-level cross-check with the independent evaluator
        base = gp.KernelParams(
            dot_sigma0_sq=params.dot_sigma0_sq,
            rq_scale=params.rq_scale,
            rq_alpha=params.rq_alpha,
        )
        import dataclasses

        for nv in (1e-3, 1e-1, 10.0):
            worse = dataclasses.replace(base, noise_var=nv)
            assert oracle_lml(data, worse) < oracle_lml(
                data, dataclasses.replace(base, noise_var=1e-6)
            )

    def test_duplicated_dataset_selects_same_params(self):
        rng = np.random.default_rng(111)
        data = random_dataset(rng, 8)
        doubled = gp.Dataset(
            np.vstack([data.features, data.features]),
            np.concatenate([data.targets, data.targets]),
        )
        space = gp.HyperSearchSpace(noise_var=(0.5, 10.0, 4))
        assert gp.fit_hyperparams(data, space) == gp.fit_hyperparams(doubled, space)

    def test_requires_two_points(self):
        data = gp.Dataset([[10.0, 1.0, 0.5]], [20.0])
        with pytest.raises(ValueError):
            gp.fit_hyperparams(data)

    def test_fallback_on_total_numerical_failure(self, monkeypatch):
        rng = np.random.default_rng(121)
        data = random_dataset(rng, 5)

        def boom(*args, **kwargs):
            raise gp.GpFitError("forced")

        monkeypatch.setattr(gp, "log_marginal_likelihood", boom)
        with pytest.warns(UserWarning, match="falling back"):
            params = gp.fit_hyperparams(data)
        assert params == gp.FALLBACK_PARAMS

    def test_mse_trend_small_vs_large_datasets(self):
        # a 5-point model should almost always generalize worse than the
        # 40-point model it was subsampled from
        gt = GroundTruth()
        noiseless = GroundTruth(obs_noise_sd=0.0)
        test = gen_dataset(noiseless, 150, substream(1234, 9))
        wins = 0
        for draw in range(50):
            data40 = gen_dataset(gt, 40, substream(1234, 0, draw))
            data5 = subsample(data40, 5, substream(1234, 1, draw))
            m40 = gp.gp_fit(data40)
            m5 = gp.gp_fit(data5)
            mse40 = np.mean((gp.gp_predict_batch(m40, test.features).mean - test.targets) ** 2)
            mse5 = np.mean((gp.gp_predict_batch(m5, test.features).mean - test.targets) ** 2)
            wins += mse5 > mse40
        assert wins >= 45  # >= 90% of 50 draws


class TestDatasetCsv:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(131)
        data = random_dataset(rng, 9)
        path = tmp_path / "data.csv"
        gp.save_dataset_csv(data, path)
        loaded = gp.load_dataset_csv(path)
        np.testing.assert_array_equal(loaded.features, data.features)
        np.testing.assert_array_equal(loaded.targets, data.targets)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c,d\n1,2,3,4\n", encoding="utf-8")
        with pytest.raises(gp.DatasetFormatError, match="expected header"):
            gp.load_dataset_csv(path)

    def test_bad_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(
            "level,alpha,duration,next_level\n1.0,2.0,0.5,3.0\n1.0,oops,0.5,3.0\n",
            encoding="utf-8",
        )
        with pytest.raises(gp.DatasetFormatError, match="row 3, column 'alpha'"):
            gp.load_dataset_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(gp.DatasetFormatError):
            gp.load_dataset_csv(path)

    def test_no_data_rows(self, tmp_path):
        path = tmp_path / "only_header.csv"
        path.write_text("level,alpha,duration,next_level\n", encoding="utf-8")
        with pytest.raises(gp.DatasetFormatError, match="no data rows"):
            gp.load_dataset_csv(path)


class TestModelJson:
    def test_round_trip_reproduces_model(self, tmp_path):
        rng = np.random.default_rng(141)
        data = random_dataset(rng, 10)
        model = gp.gp_fit(data, gp.KernelParams(noise_var=2.0))
        path = tmp_path / "model.json"
        gp.save_model_json(model, path)
        loaded = gp.load_model_json(path)
        assert loaded.params == model.params
        np.testing.assert_array_equal(loaded.chol, model.chol)
        np.testing.assert_array_equal(loaded.alpha_vec, model.alpha_vec)
        for q in random_queries(rng, 10):
            assert gp.gp_predict(loaded, q) == gp.gp_predict(model, q)
