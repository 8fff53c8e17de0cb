"""Bayesian MLP regression of price change on investor decision.

A small fully-connected network is trained to the MAP point of a ridge-
regularized square loss; a Gaussian posterior over its weights is built from
the generalized Gauss-Newton curvature, and predictions come out as Gaussian
distributions whose variance combines weight uncertainty with residual noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .market_data import DecisionSample


DEFAULT_ARCHITECTURE = (1, 16, 16, 1)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class NonPsdError(RuntimeError):
    """Precision matrix factorization failed (should not happen with GGN + ridge)."""


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.7
    sigma: float = 2.5
    learning_rate: float = 1e-3
    epochs: int = 2000
    batch_size: int | None = None  # None = full batch
    rng_seed: int = 0
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


class MlpModel:
    """Feed-forward network with a flat weight vector and scalar input/output.

    Hidden layers use tanh (or identity for a purely linear network); the
    output layer is always linear. Inputs are shifted/scaled by constants
    stored on the model, so callers always work in raw decision units.
    """

    def __init__(
        self,
        architecture: Sequence[int],
        theta: np.ndarray,
        activation: str = "tanh",
        use_bias: bool = True,
        input_shift: float = 0.0,
        input_scale: float = 1.0,
    ) -> None:
        architecture = tuple(int(w) for w in architecture)
        if len(architecture) < 2 or architecture[0] != 1 or architecture[-1] != 1:
            raise ValueError(f"architecture needs scalar input/output, got {architecture}")
        if activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        if input_scale <= 0:
            raise ValueError(f"input_scale must be positive, got {input_scale}")
        self.architecture = architecture
        self.activation = activation
        self.use_bias = use_bias
        self.input_shift = float(input_shift)
        self.input_scale = float(input_scale)
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.param_count:
            raise ValueError(f"theta has {theta.size} entries, expected {self.param_count}")
        self.theta = theta.copy()
        self.theta.flags.writeable = False

    @property
    def param_count(self) -> int:
        return param_count(self.architecture, self.use_bias)

    def _unflatten(self, theta: np.ndarray):
        layers = []
        offset = 0
        for n_in, n_out in zip(self.architecture, self.architecture[1:]):
            w = theta[offset : offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            if self.use_bias:
                b = theta[offset : offset + n_out]
                offset += n_out
            else:
                b = np.zeros(n_out)
            layers.append((w, b))
        return layers

    def _forward_pass(self, x: np.ndarray, theta: np.ndarray):
        """Return per-layer activations for standardized inputs x of shape (n,)."""
        acts = [x.reshape(-1, 1)]
        layers = self._unflatten(theta)
        last = len(layers) - 1
        for idx, (w, b) in enumerate(layers):
            z = acts[-1] @ w.T + b
            if idx < last and self.activation == "tanh":
                z = np.tanh(z)
            acts.append(z)
        return acts

    def _standardize(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        return (d - self.input_shift) / self.input_scale

    def forward(self, d, theta: np.ndarray | None = None) -> np.ndarray:
        """Predicted price change for raw decision input(s) d."""
        theta = self.theta if theta is None else theta
        scalar = np.isscalar(d) or np.ndim(d) == 0
        x = np.atleast_1d(self._standardize(d))
        out = self._forward_pass(x, theta)[-1].ravel()
        return float(out[0]) if scalar else out

    def _backward(self, acts, theta: np.ndarray, seed: np.ndarray, per_sample: bool):
        """Backpropagate seed (n,) through the output; summed or per-sample grads.

        acts holds post-activation values, so tanh' = 1 - a^2 needs no stored
        pre-activations.
        """
        layers = self._unflatten(theta)
        n = acts[0].shape[0]
        grads: list[np.ndarray | None] = [None] * len(layers)
        delta = seed.reshape(-1, 1)
        for idx in range(len(layers) - 1, -1, -1):
            w, _ = layers[idx]
            a_prev = acts[idx]
            if per_sample:
                dw = np.einsum("nj,ni->nji", delta, a_prev).reshape(n, -1)
                pieces = [dw, delta] if self.use_bias else [dw]
            else:
                dw = delta.T @ a_prev
                pieces = [dw.ravel(), delta.sum(axis=0)] if self.use_bias else [dw.ravel()]
            grads[idx] = np.concatenate(pieces, axis=-1)
            if idx > 0:
                delta = delta @ w
                if self.activation == "tanh":
                    delta = delta * (1.0 - acts[idx] ** 2)
        return np.concatenate(grads, axis=-1)

    def jacobian(self, d) -> np.ndarray:
        """Per-input gradient of the output w.r.t. theta; shape (n, M) or (M,)."""
        scalar = np.isscalar(d) or np.ndim(d) == 0
        x = np.atleast_1d(self._standardize(d))
        acts = self._forward_pass(x, self.theta)
        jac = self._backward(acts, self.theta, np.ones(x.shape[0]), per_sample=True)
        return jac[0] if scalar else jac

    def with_theta(self, theta: np.ndarray) -> "MlpModel":
        return MlpModel(
            self.architecture,
            theta,
            activation=self.activation,
            use_bias=self.use_bias,
            input_shift=self.input_shift,
            input_scale=self.input_scale,
        )


def param_count(architecture: Sequence[int], use_bias: bool = True) -> int:
    total = 0
    for n_in, n_out in zip(architecture, architecture[1:]):
        total += n_in * n_out + (n_out if use_bias else 0)
    return total


def _dataset_arrays(dataset: Sequence[DecisionSample]):
    if len(dataset) == 0:
        raise ValueError("dataset must not be empty")
    d = np.array([s.d for s in dataset], dtype=float)
    g = np.array([s.g for s in dataset], dtype=float)
    return d, g


def loss(model: MlpModel, dataset: Sequence[DecisionSample], lam: float) -> float:
    """Sum of squared-error halves plus the L2 penalty (lam/2) * theta'theta."""
    d, g = _dataset_arrays(dataset)
    residual = g - model.forward(d)
    return 0.5 * float(residual @ residual) + 0.5 * lam * float(model.theta @ model.theta)


def _init_theta(architecture, use_bias: bool, rng: np.random.Generator) -> np.ndarray:
    pieces = []
    for n_in, n_out in zip(architecture, architecture[1:]):
        pieces.append(rng.normal(0.0, 1.0 / math.sqrt(n_in), size=n_in * n_out))
        if use_bias:
            pieces.append(np.zeros(n_out))
    return np.concatenate(pieces)


def train_map(
    dataset: Sequence[DecisionSample],
    config: TrainConfig,
    architecture: Sequence[int] = DEFAULT_ARCHITECTURE,
    activation: str = "tanh",
    use_bias: bool = True,
    initial_theta: np.ndarray | None = None,
) -> MlpModel:
    """Gradient-descend the regularized loss; returns the best iterate seen.

    Deterministic given config.rng_seed (initialization and batch shuffling
    both derive from it).
    """
    d_raw, g = _dataset_arrays(dataset)
    if config.standardize:
        shift = float(d_raw.mean())
        spread = float(d_raw.std())
        scale = spread if spread > 0 else 1.0
    else:
        shift, scale = 0.0, 1.0

    rng = np.random.default_rng(config.rng_seed)
    if initial_theta is None:
        theta = _init_theta(tuple(architecture), use_bias, rng)
    else:
        theta = np.asarray(initial_theta, dtype=float).copy()

    model = MlpModel(
        architecture, theta, activation=activation, use_bias=use_bias,
        input_shift=shift, input_scale=scale,
    )
    x_all = model._standardize(d_raw)
    n = x_all.shape[0]
    batch = n if config.batch_size is None else min(config.batch_size, n)

    def full_loss(th: np.ndarray) -> float:
        out = model._forward_pass(x_all, th)[-1].ravel()
        res = g - out
        return 0.5 * float(res @ res) + 0.5 * config.lam * float(th @ th)

    best_theta = theta.copy()
    best_loss = full_loss(theta)
    for _ in range(config.epochs):
        order = np.arange(n) if batch == n else rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            acts = model._forward_pass(x_all[idx], theta)
            residual = acts[-1].ravel() - g[idx]
            grad = model._backward(acts, theta, residual, per_sample=False)
            grad += config.lam * theta
            theta = theta - config.learning_rate * grad
        current = full_loss(theta)
        if not math.isfinite(current):
            raise DivergenceError(
                "loss became non-finite during training; try a smaller learning rate"
            )
        if current < best_loss:
            best_loss = current
            best_theta = theta.copy()
    return model.with_theta(best_theta)


def jacobian_features(model: MlpModel, d_star) -> np.ndarray:
    """Gradient feature map phi(d*) = grad_theta f_theta(d*) at the trained weights."""
    return model.jacobian(d_star)


class LaplacePosterior:
    """Gaussian over network weights: mean theta*, precision GGN + lam*I."""

    def __init__(self, theta_star: np.ndarray, precision: np.ndarray) -> None:
        precision = np.asarray(precision, dtype=float)
        m = precision.shape[0]
        if precision.shape != (m, m):
            raise ValueError(f"precision must be square, got {precision.shape}")
        asym = np.abs(precision - precision.T).max()
        scale = max(np.abs(precision).max(), 1.0)
        if asym > 1e-10 * scale:
            raise NonPsdError(f"precision is not symmetric (max asymmetry {asym:.3e})")
        self.theta_star = np.asarray(theta_star, dtype=float).copy()
        self.precision = 0.5 * (precision + precision.T)
        try:
            self._cho = cho_factor(self.precision, lower=True)
        except np.linalg.LinAlgError as exc:
            raise NonPsdError(f"precision factorization failed: {exc}") from exc
        if np.any(np.diag(self._cho[0]) <= 0):
            raise NonPsdError("precision has non-positive factorization pivots")

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve precision @ x = rhs without materializing the covariance."""
        return cho_solve(self._cho, rhs)

    def covariance(self) -> np.ndarray:
        """Dense inverse of the precision; kept for small models only."""
        if self.dim > 64:
            raise ValueError(f"refusing to materialize a {self.dim}x{self.dim} covariance")
        return self.solve(np.eye(self.dim))


def laplace_posterior(
    model: MlpModel, dataset: Sequence[DecisionSample], lam: float
) -> LaplacePosterior:
    """Posterior precision from the Gauss-Newton data curvature plus the L2 prior."""
    d, _ = _dataset_arrays(dataset)
    phi = model.jacobian(d)
    precision = phi.T @ phi + lam * np.eye(model.param_count)
    return LaplacePosterior(model.theta, precision)


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    variance: float


def predictive(
    posterior: LaplacePosterior, model: MlpModel, sigma: float, d_star
) -> PredictiveDistribution:
    """Gaussian over price change at d*: mean f(d*), variance phi'inv(P)phi + sigma^2."""
    phi = model.jacobian(d_star)
    k = float(phi @ posterior.solve(phi))
    return PredictiveDistribution(mean=model.forward(d_star), variance=k + sigma**2)


def predictive_batch(
    posterior: LaplacePosterior, model: MlpModel, sigma: float, d_stars
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise predictive means and variances for a vector of inputs."""
    d_stars = np.asarray(d_stars, dtype=float)
    means = np.atleast_1d(model.forward(d_stars))
    phi = np.atleast_2d(model.jacobian(d_stars))
    solved = posterior.solve(phi.T)
    variances = np.einsum("nm,mn->n", phi, solved) + sigma**2
    return means, variances


def save_model(
    sink: str | Path | IO[str],
    model: MlpModel,
    posterior: LaplacePosterior,
    lam: float,
    sigma: float,
) -> None:
    """JSON dump of model + posterior; float repr keeps round-trips lossless."""
    blob = {
        "architecture": list(model.architecture),
        "activation": model.activation,
        "use_bias": model.use_bias,
        "input_shift": model.input_shift,
        "input_scale": model.input_scale,
        "theta_star": model.theta.tolist(),
        "precision": posterior.precision.tolist(),
        "lambda": lam,
        "sigma": sigma,
    }
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, indent=1, sort_keys=True)
            fh.write("\n")
    else:
        json.dump(blob, sink, indent=1, sort_keys=True)
        sink.write("\n")


def load_model(source: str | Path | IO[str]) -> tuple[MlpModel, LaplacePosterior, float, float]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            blob = json.load(fh)
    else:
        blob = json.load(source)
    model = MlpModel(
        blob["architecture"],
        np.array(blob["theta_star"], dtype=float),
        activation=blob["activation"],
        use_bias=blob["use_bias"],
        input_shift=blob["input_shift"],
        input_scale=blob["input_scale"],
    )
    posterior = LaplacePosterior(model.theta, np.array(blob["precision"], dtype=float))
    return model, posterior, float(blob["lambda"]), float(blob["sigma"])
