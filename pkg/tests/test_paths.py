import numpy as np
import pytest

from pihedge.bdnn import MlpModel, TrainConfig, laplace_posterior, train_map
from pihedge.market_data import DecisionSample
from pihedge.paths import (
    PathExplosionError,
    add_drift,
    decision_matrix_to_prices,
    decisions_to_prices,
    gbm_paths,
    read_path_matrix,
    remove_drift,
    simulate_decisions,
    write_path_matrix,
)
from pihedge.vhmn import Quantizer, VhmnParams


def constant_model(value: float) -> MlpModel:
    """Network predicting the same price change everywhere (zero weight, bias)."""
    return MlpModel((1, 1), np.array([0.0, value]), activation="identity", use_bias=True)


def one_hot_params() -> VhmnParams:
    return VhmnParams(
        A=np.array([[1.0]]),
        B=np.array([[1.0, 0.0]]),
        C=np.array([[0.0, 1.0], [1.0, 0.0]]),
        Z=np.array([1.0]),
    )


class TestSimulateDecisions:
    def test_zero_paths(self):
        out = simulate_decisions(one_hot_params(), Quantizer(0.0, 2.0, 2), 0, 5)
        assert out.shape == (0, 5)

    def test_deterministic_network_identical_paths(self):
        quantizer = Quantizer(0.0, 2.0, 2)
        out = simulate_decisions(one_hot_params(), quantizer, 4, 6, rng_seed=3)
        # hidden 0 -> visible 0 -> observation 1 always; midpoint of bin 1 is 1.5
        assert np.all(out == 1.5)

    def test_independent_paths_differ(self):
        rng = np.random.default_rng(0)
        params = VhmnParams(
            A=rng.dirichlet(np.ones(2), size=2),
            B=rng.dirichlet(np.ones(3), size=2),
            C=rng.dirichlet(np.ones(4), size=3),
            Z=rng.dirichlet(np.ones(2)),
        )
        out = simulate_decisions(params, Quantizer(-1.0, 1.0, 4), 100, 20, rng_seed=1)
        assert not np.all(out == out[0])

    def test_quantizer_mismatch_rejected(self):
        with pytest.raises(ValueError):
            simulate_decisions(one_hot_params(), Quantizer(0.0, 1.0, 3), 1, 1)

    def test_same_seed_reproduces(self):
        rng = np.random.default_rng(5)
        params = VhmnParams(
            A=rng.dirichlet(np.ones(2), size=2),
            B=rng.dirichlet(np.ones(2), size=2),
            C=rng.dirichlet(np.ones(2), size=2),
            Z=rng.dirichlet(np.ones(2)),
        )
        quantizer = Quantizer(-1.0, 1.0, 2)
        a = simulate_decisions(params, quantizer, 8, 10, rng_seed=9)
        b = simulate_decisions(params, quantizer, 8, 10, rng_seed=9)
        assert np.array_equal(a, b)


class TestDecisionsToPrices:
    def test_zero_change_keeps_price(self):
        prices = decisions_to_prices(constant_model(0.0), np.zeros(5), s0=100.0)
        assert np.all(prices == 100.0)
        assert prices.shape == (6,)

    def test_single_step_five_percent(self):
        prices = decisions_to_prices(constant_model(0.05), np.zeros(1), s0=100.0)
        assert prices[1] == pytest.approx(105.0)

    def test_explosion_names_step(self):
        with pytest.raises(PathExplosionError) as err:
            decisions_to_prices(constant_model(-1.5), np.zeros(3), s0=10.0)
        assert err.value.step == 0

    def test_nonpositive_start_rejected(self):
        with pytest.raises(ValueError):
            decisions_to_prices(constant_model(0.0), np.zeros(1), s0=0.0)

    def test_matrix_version_matches_single(self):
        rng = np.random.default_rng(2)
        data = tuple(
            DecisionSample(d=d, g=g)
            for d, g in zip(rng.normal(0, 1e5, 40), rng.normal(0, 0.01, 40))
        )
        model = train_map(data, TrainConfig(lam=0.7, sigma=1.0, epochs=100, rng_seed=0))
        decisions = rng.normal(0, 1e5, (6, 12))
        matrix = decision_matrix_to_prices(model, decisions, s0=95.0)
        for u in range(6):
            single = decisions_to_prices(model, decisions[u], s0=95.0)
            assert np.allclose(matrix[u], single, rtol=1e-12)

    def test_reevaluation_from_serialized_model_is_identical(self, tmp_path):
        from pihedge.bdnn import load_model, save_model

        rng = np.random.default_rng(7)
        data = tuple(
            DecisionSample(d=d, g=g)
            for d, g in zip(rng.normal(0, 2e6, 30), rng.normal(0, 0.02, 30))
        )
        model = train_map(data, TrainConfig(lam=0.7, sigma=2.5, epochs=150, rng_seed=1))
        posterior = laplace_posterior(model, data, 0.7)
        save_model(tmp_path / "m.json", model, posterior, 0.7, 2.5)
        loaded, _, _, _ = load_model(tmp_path / "m.json")

        decisions = rng.normal(0, 2e6, 25)
        original = decisions_to_prices(model, decisions, s0=88.0)
        replayed = decisions_to_prices(loaded, decisions, s0=88.0)
        assert np.array_equal(original, replayed)

    def test_sampling_mode_needs_posterior(self):
        with pytest.raises(ValueError):
            decisions_to_prices(constant_model(0.0), np.zeros(2), 100.0, sample_changes=True)


class TestDrift:
    def test_zero_net_drift_leaves_log_prices(self):
        prices = np.array([100.0, 101.0, 99.5])
        states = remove_drift(prices, mu=0.02, sigma_s=0.2)  # mu = sigma^2/2
        assert np.allclose(states, np.log(prices))

    def test_constant_path_slope(self):
        mu, sigma_s = 0.05, 0.2926
        prices = np.full(10, 100.0)
        states = remove_drift(prices, mu, sigma_s)
        slopes = np.diff(states)
        assert np.allclose(slopes, -(mu - sigma_s**2 / 2))

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        prices = 100.0 * np.exp(rng.normal(0, 0.05, (4, 20)).cumsum(axis=1))
        states = remove_drift(prices, 0.01, 0.3)
        back = add_drift(states, 0.01, 0.3)
        assert np.allclose(back, prices, rtol=1e-12)

    def test_exact_state_definition(self):
        prices = np.array([100.0, 102.0, 98.0])
        mu, sigma_s = 0.03, 0.1
        states = remove_drift(prices, mu, sigma_s)
        for t, price in enumerate(prices):
            assert states[t] == np.log(price) - (mu - sigma_s**2 / 2) * t


class TestGbm:
    def test_zero_volatility_is_exponential(self):
        prices = gbm_paths(s0=50.0, mu=0.01, sigma_s=0.0, n_steps=10, n_paths=3, rng_seed=0)
        t = np.arange(11)
        assert np.allclose(prices, 50.0 * np.exp(0.01 * t)[None, :], rtol=1e-12)

    def test_terminal_mean_matches_lognormal(self):
        s0, mu, steps = 100.0, 0.002, 20
        prices = gbm_paths(s0, mu, 0.03, steps, 100_000, rng_seed=1)
        expected = s0 * np.exp(mu * steps)
        assert abs(prices[:, -1].mean() / expected - 1) < 0.01

    def test_terminal_log_variance(self):
        sigma_s, steps = 0.05, 16
        prices = gbm_paths(100.0, 0.001, sigma_s, steps, 100_000, rng_seed=2)
        log_var = np.log(prices[:, -1]).var(ddof=1)
        assert abs(log_var / (sigma_s**2 * steps) - 1) < 0.02

    def test_deterministic_per_seed(self):
        a = gbm_paths(100.0, 0.0, 0.1, 5, 4, rng_seed=3)
        b = gbm_paths(100.0, 0.0, 0.1, 5, 4, rng_seed=3)
        assert np.array_equal(a, b)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            gbm_paths(-1.0, 0.0, 0.1, 5, 4)
        with pytest.raises(ValueError):
            gbm_paths(100.0, 0.0, 0.1, 5, 4, dt=0.0)


class TestPathMatrixIo:
    def test_round_trip_with_sidecar(self, tmp_path):
        matrix = np.array([[100.0, 101.5], [100.0, 98.25]])
        out = tmp_path / "paths.csv"
        write_path_matrix(out, matrix, {"seed": 7, "s0": 100.0})
        assert np.array_equal(read_path_matrix(out), matrix)
        sidecar = out.with_suffix(".json")
        assert sidecar.exists()
        assert '"seed": 7' in sidecar.read_text()
