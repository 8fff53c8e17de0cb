import io

import numpy as np
import pytest

from pihedge.bdnn import (
    DEFAULT_ARCHITECTURE,
    DivergenceError,
    LaplacePosterior,
    MlpModel,
    NonPsdError,
    TrainConfig,
    jacobian_features,
    laplace_posterior,
    load_model,
    loss,
    param_count,
    predictive,
    predictive_batch,
    save_model,
    train_map,
)
from pihedge.market_data import DecisionSample

from oracles import ridge_regression_1d


def linear_model(theta: float) -> MlpModel:
    """Bias-free 1-parameter network f(d) = theta * d."""
    return MlpModel((1, 1), np.array([theta]), activation="identity", use_bias=False)


def linear_config(**overrides) -> TrainConfig:
    defaults = dict(lam=1.0, sigma=1.0, learning_rate=0.05, epochs=3000,
                    rng_seed=0, standardize=False)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def samples(*pairs):
    return tuple(DecisionSample(d=d, g=g) for d, g in pairs)


class TestLoss:
    def test_zero_weights_bias_free(self):
        model = linear_model(0.0)
        assert loss(model, samples((1.0, 0.0)), lam=5.0) == 0.0

    def test_hand_evaluated(self):
        model = linear_model(0.5)
        # 0.5*(1-0.5)^2 + 0.5*0.25 = 0.25
        assert loss(model, samples((1.0, 1.0)), lam=1.0) == pytest.approx(0.25)

    def test_duplication_doubles_data_term_only(self):
        model = linear_model(0.3)
        data = samples((1.0, 1.0), (2.0, 0.5))
        lam = 0.7
        single = loss(model, data, lam)
        double = loss(model, data + data, lam)
        reg = 0.5 * lam * 0.3**2
        assert double - reg == pytest.approx(2 * (single - reg))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            loss(linear_model(0.0), (), lam=1.0)


class TestTrainMap:
    def test_linear_ridge_minimizer(self):
        # analytic minimizer of 0.5*(1-theta)^2 + 0.5*theta^2 is 0.5
        model = train_map(
            samples((1.0, 1.0)), linear_config(),
            architecture=(1, 1), activation="identity", use_bias=False,
        )
        assert abs(model.theta[0] - 0.5) < 1e-3

    def test_zero_targets_keep_zero_weights(self):
        data = samples((1.0, 0.0), (2.0, 0.0))
        model = train_map(
            data, linear_config(),
            architecture=(1, 4, 1), activation="tanh", use_bias=False,
            initial_theta=np.zeros(param_count((1, 4, 1), use_bias=False)),
        )
        assert np.all(model.theta == 0.0)

    def test_same_seed_is_bit_identical(self):
        data = samples((1.0, 0.01), (2.0, -0.02), (3.0, 0.015))
        config = TrainConfig(lam=0.7, sigma=1.0, epochs=50, rng_seed=7)
        a = train_map(data, config)
        b = train_map(data, config)
        assert np.array_equal(a.theta, b.theta)

    def test_training_reduces_loss(self):
        rng = np.random.default_rng(3)
        d = rng.normal(0, 2, 60)
        g = 0.05 * np.tanh(d) + rng.normal(0, 0.01, 60)
        data = samples(*zip(d, g))
        config = TrainConfig(lam=0.1, sigma=0.05, learning_rate=1e-3,
                             epochs=500, rng_seed=1)
        model = train_map(data, config)
        init = train_map(data, TrainConfig(lam=0.1, sigma=0.05, learning_rate=1e-3,
                                           epochs=1, rng_seed=1))
        assert loss(model, data, 0.1) <= loss(init, data, 0.1)

    def test_divergence_raises(self):
        data = samples((1.0, 1.0), (2.0, -0.9))
        config = TrainConfig(lam=1.0, sigma=1.0, learning_rate=1e6, epochs=200,
                             rng_seed=0, standardize=False)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError):
            train_map(data, config, architecture=(1, 8, 1))

    def test_minibatch_deterministic(self):
        rng = np.random.default_rng(0)
        data = samples(*zip(rng.normal(size=20), rng.normal(size=20) * 0.01))
        config = TrainConfig(lam=0.5, sigma=1.0, epochs=20, batch_size=5, rng_seed=11)
        assert np.array_equal(train_map(data, config).theta, train_map(data, config).theta)


class TestJacobian:
    def test_linear_case(self):
        model = linear_model(0.7)
        assert jacobian_features(model, 3.0) == pytest.approx([3.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.normal(0, 0.5, param_count(DEFAULT_ARCHITECTURE))
        model = MlpModel(DEFAULT_ARCHITECTURE, theta)
        d_star = rng.normal(0, 2)
        phi = jacobian_features(model, d_star)
        step = 1e-5
        for m in rng.choice(len(theta), size=25, replace=False):
            bump = np.zeros_like(theta)
            bump[m] = step
            fd = (model.forward(d_star, theta + bump) - model.forward(d_star, theta - bump)) / (
                2 * step
            )
            assert phi[m] == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_zero_input_zeroes_first_layer_weights(self):
        rng = np.random.default_rng(1)
        arch = (1, 8, 1)
        theta = rng.normal(0, 0.5, param_count(arch, use_bias=False))
        model = MlpModel(arch, theta, use_bias=False)
        phi = jacobian_features(model, 0.0)
        assert np.all(phi[:8] == 0.0)


class TestLaplacePosterior:
    def test_linear_bayesian_regression(self):
        model = linear_model(0.5)
        post = laplace_posterior(model, samples((1.0, 1.0)), lam=1.0)
        assert np.allclose(post.precision, [[2.0]])
        assert np.allclose(post.covariance(), [[0.5]])

    def test_zero_features_leave_prior(self):
        model = MlpModel((1, 4, 1), np.zeros(param_count((1, 4, 1), use_bias=False)),
                         use_bias=False)
        post = laplace_posterior(model, samples((0.0, 0.0)), lam=2.5)
        assert np.allclose(post.precision, 2.5 * np.eye(model.param_count))

    def test_duplication_doubles_curvature(self):
        rng = np.random.default_rng(2)
        theta = rng.normal(0, 0.5, param_count(DEFAULT_ARCHITECTURE))
        model = MlpModel(DEFAULT_ARCHITECTURE, theta)
        data = samples((1.0, 0.01), (2.0, 0.02))
        lam = 0.7
        single = laplace_posterior(model, data, lam)
        double = laplace_posterior(model, data + data, lam)
        eye = lam * np.eye(model.param_count)
        assert np.allclose(double.precision - eye, 2 * (single.precision - eye))

    def test_symmetry_enforced(self):
        with pytest.raises(NonPsdError):
            LaplacePosterior(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_non_pd_rejected(self):
        with pytest.raises(NonPsdError):
            LaplacePosterior(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_large_covariance_refused(self):
        model = MlpModel(DEFAULT_ARCHITECTURE,
                         np.zeros(param_count(DEFAULT_ARCHITECTURE)))
        post = laplace_posterior(model, samples((1.0, 0.0)), lam=1.0)
        with pytest.raises(ValueError):
            post.covariance()


class TestPredictive:
    def test_linear_closed_form(self):
        model = linear_model(0.5)
        post = laplace_posterior(model, samples((1.0, 1.0)), lam=1.0)
        dist = predictive(post, model, sigma=1.0, d_star=1.0)
        assert dist.mean == pytest.approx(0.5)
        assert dist.variance == pytest.approx(1.5)

    def test_noise_floor(self):
        model = MlpModel((1, 4, 1), np.zeros(param_count((1, 4, 1), use_bias=False)),
                         use_bias=False)
        post = laplace_posterior(model, samples((1.0, 0.0)), lam=1.0)
        dist = predictive(post, model, sigma=0.3, d_star=0.0)
        assert dist.variance == pytest.approx(0.09)

    def test_variance_never_below_noise(self):
        rng = np.random.default_rng(4)
        theta = rng.normal(0, 0.5, param_count(DEFAULT_ARCHITECTURE))
        model = MlpModel(DEFAULT_ARCHITECTURE, theta)
        data = samples(*zip(rng.normal(0, 1, 30), rng.normal(0, 0.02, 30)))
        post = laplace_posterior(model, data, lam=0.7)
        _, variances = predictive_batch(post, model, 0.5, rng.normal(0, 3, 50))
        assert np.all(variances >= 0.25 - 1e-12)

    def test_batch_matches_scalar_calls(self):
        rng = np.random.default_rng(5)
        theta = rng.normal(0, 0.5, param_count((1, 6, 1)))
        model = MlpModel((1, 6, 1), theta)
        data = samples((0.5, 0.01), (-1.0, -0.02), (2.0, 0.03))
        post = laplace_posterior(model, data, lam=0.3)
        grid = np.array([-2.0, 0.0, 0.5, 2.0])
        means, variances = predictive_batch(post, model, 0.2, grid)
        for i, d_star in enumerate(grid):
            dist = predictive(post, model, 0.2, d_star)
            assert means[i] == pytest.approx(dist.mean)
            assert variances[i] == pytest.approx(dist.variance)

    def test_grid_outputs_finite(self, fixture_episodes):
        from pihedge.market_data import build_dataset

        data = build_dataset(fixture_episodes[0])
        config = TrainConfig(lam=0.7, sigma=2.5, epochs=200, rng_seed=0)
        model = train_map(data, config)
        post = laplace_posterior(model, data, 0.7)
        ds = [s.d for s in data]
        grid = np.linspace(min(ds), max(ds), 100)
        means, variances = predictive_batch(post, model, 2.5, grid)
        assert np.all(np.isfinite(means)) and np.all(np.isfinite(variances))


class TestLinearPipelineAgainstRidge:
    """train + posterior + predictive jointly match closed-form ridge regression."""

    def test_multi_sample_ridge(self):
        rng = np.random.default_rng(8)
        d = rng.normal(0, 1.5, 25)
        g = 0.3 * d + rng.normal(0, 0.1, 25)
        lam, sigma = 2.0, 0.4
        model = train_map(
            samples(*zip(d, g)),
            linear_config(lam=lam, sigma=sigma, learning_rate=0.005, epochs=8000),
            architecture=(1, 1), activation="identity", use_bias=False,
        )
        theta_hat, precision_hat = ridge_regression_1d(d, g, lam)
        assert model.theta[0] == pytest.approx(theta_hat, rel=1e-6)

        post = laplace_posterior(model, samples(*zip(d, g)), lam)
        assert post.precision[0, 0] == pytest.approx(precision_hat, rel=1e-6)

        d_star = 1.7
        dist = predictive(post, model, sigma, d_star)
        assert dist.mean == pytest.approx(theta_hat * d_star, rel=1e-6)
        assert dist.variance == pytest.approx(d_star**2 / precision_hat + sigma**2, rel=1e-6)


class TestSerialization:
    def test_round_trip_is_lossless(self):
        rng = np.random.default_rng(9)
        data = samples(*zip(rng.normal(0, 1e6, 20), rng.normal(0, 0.01, 20)))
        config = TrainConfig(lam=0.7, sigma=2.5, epochs=50, rng_seed=3)
        model = train_map(data, config, architecture=(1, 6, 1))
        post = laplace_posterior(model, data, 0.7)

        buf = io.StringIO()
        save_model(buf, model, post, 0.7, 2.5)
        buf.seek(0)
        loaded_model, loaded_post, lam, sigma = load_model(buf)

        assert lam == 0.7 and sigma == 2.5
        assert loaded_model.architecture == model.architecture
        assert np.array_equal(loaded_model.theta, model.theta)
        assert loaded_model.input_shift == model.input_shift
        assert loaded_model.input_scale == model.input_scale
        assert np.array_equal(loaded_post.precision, post.precision)

        d_star = float(data[0].d)
        assert predictive(loaded_post, loaded_model, sigma, d_star) == predictive(
            post, model, sigma, d_star
        )
