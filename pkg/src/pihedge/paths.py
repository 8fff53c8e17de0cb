"""Monte Carlo structure: decision paths from a fitted network, price paths
via the regression's predictive mean, drift-removed state paths, and a
geometric-Brownian-motion generator used as a pricing oracle."""

from __future__ import annotations

import csv
import json
from pathlib import Path
import numpy as np

from .bdnn import LaplacePosterior, MlpModel, predictive_batch
from .vhmn import Quantizer, VhmnParams, sample_path


class PathExplosionError(RuntimeError):
    """A simulated price change of -100% or worse would kill the path."""

    def __init__(self, step: int, change: float) -> None:
        super().__init__(f"price change {change} at step {step} drives the price to <= 0")
        self.step = step


def simulate_decisions(
    params: VhmnParams,
    observation_quantizer: Quantizer,
    n_paths: int,
    horizon: int,
    rng_seed: int = 0,
) -> np.ndarray:
    """n_paths independent decision sequences, decoded to bin midpoints.

    Each path draws from its own RNG stream spawned from rng_seed, so results
    do not depend on evaluation order.
    """
    if observation_quantizer.q != params.dims[2]:
        raise ValueError(
            f"observation quantizer has {observation_quantizer.q} bins, "
            f"network emits {params.dims[2]}"
        )
    if n_paths == 0:
        return np.empty((0, horizon))
    streams = np.random.SeedSequence(rng_seed).spawn(n_paths)
    out = np.empty((n_paths, horizon))
    for u, stream in enumerate(streams):
        _, _, obs = sample_path(params, horizon, np.random.default_rng(stream))
        out[u] = observation_quantizer.decode(obs)
    return out


def decisions_to_prices(
    model: MlpModel,
    decisions: np.ndarray,
    s0: float,
    posterior: LaplacePosterior | None = None,
    sigma: float | None = None,
    sample_changes: bool = False,
    rng_seed: int = 0,
) -> np.ndarray:
    """Compound a price path from per-slot predicted changes: S_{t+1} = S_t (1 + g_t).

    By default g_t is the predictive mean at each decision; with
    sample_changes the changes are drawn from the predictive Gaussian instead
    (posterior and sigma required).
    """
    if s0 <= 0:
        raise ValueError(f"initial price must be positive, got {s0}")
    decisions = np.asarray(decisions, dtype=float)
    if sample_changes:
        if posterior is None or sigma is None:
            raise ValueError("sampling price changes needs the posterior and sigma")
        means, variances = predictive_batch(posterior, model, sigma, decisions)
        rng = np.random.default_rng(rng_seed)
        changes = rng.normal(means, np.sqrt(variances))
    else:
        changes = np.atleast_1d(model.forward(decisions))
    prices = np.empty(decisions.size + 1)
    prices[0] = s0
    for t, g in enumerate(changes):
        if g <= -1.0:
            raise PathExplosionError(t, float(g))
        prices[t + 1] = prices[t] * (1.0 + g)
    return prices


def decision_matrix_to_prices(model: MlpModel, decision_matrix: np.ndarray, s0: float) -> np.ndarray:
    """Vectorized predictive-mean chaining for a (U, T) decision matrix."""
    decision_matrix = np.asarray(decision_matrix, dtype=float)
    n_paths, horizon = decision_matrix.shape
    changes = np.atleast_1d(model.forward(decision_matrix.ravel())).reshape(n_paths, horizon)
    bad = np.argwhere(changes <= -1.0)
    if bad.size:
        u, t = bad[0]
        raise PathExplosionError(int(t), float(changes[u, t]))
    prices = np.empty((n_paths, horizon + 1))
    prices[:, 0] = s0
    np.cumprod(1.0 + changes, axis=1, out=changes)
    prices[:, 1:] = s0 * changes
    return prices


def remove_drift(prices: np.ndarray, mu: float, sigma_s: float) -> np.ndarray:
    """Drift-removed log prices: ln S_t - (mu - sigma_s^2 / 2) t, t in slots."""
    prices = np.asarray(prices, dtype=float)
    if np.any(prices <= 0):
        raise ValueError("prices must be positive")
    if sigma_s < 0:
        raise ValueError(f"sigma_s must be nonnegative, got {sigma_s}")
    t = np.arange(prices.shape[-1])
    return np.log(prices) - (mu - 0.5 * sigma_s**2) * t


def add_drift(states: np.ndarray, mu: float, sigma_s: float) -> np.ndarray:
    """Inverse of remove_drift."""
    states = np.asarray(states, dtype=float)
    t = np.arange(states.shape[-1])
    return np.exp(states + (mu - 0.5 * sigma_s**2) * t)


def gbm_paths(
    s0: float,
    mu: float,
    sigma_s: float,
    n_steps: int,
    n_paths: int,
    dt: float = 1.0,
    rng_seed: int = 0,
) -> np.ndarray:
    """Exact lognormal stepping of geometric Brownian motion, (U, T+1) prices."""
    if s0 <= 0:
        raise ValueError(f"initial price must be positive, got {s0}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    rng = np.random.default_rng(rng_seed)
    shocks = rng.standard_normal((n_paths, n_steps))
    increments = (mu - 0.5 * sigma_s**2) * dt + sigma_s * np.sqrt(dt) * shocks
    log_prices = np.empty((n_paths, n_steps + 1))
    log_prices[:, 0] = np.log(s0)
    np.cumsum(increments, axis=1, out=increments)
    log_prices[:, 1:] = np.log(s0) + increments
    return np.exp(log_prices)


def write_path_matrix(
    csv_path: str | Path,
    matrix: np.ndarray,
    sidecar: dict,
) -> None:
    """Path matrix as CSV (U rows, T+1 columns) plus a JSON metadata sidecar."""
    matrix = np.asarray(matrix, dtype=float)
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"t{t}" for t in range(matrix.shape[1])])
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
    with open(csv_path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_path_matrix(csv_path: str | Path) -> np.ndarray:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        rows = [[float(v) for v in row] for row in reader]
    return np.array(rows, dtype=float)
