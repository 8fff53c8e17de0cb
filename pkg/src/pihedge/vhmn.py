"""Visible-hidden Markov network: a hidden chain emits visible states which
in turn emit observations (hidden -> visible -> observation per time slot).

Provides quantization between continuous values and state indices, scaled
forward-backward likelihoods, EM re-estimation, Dirichlet-randomized fitting
with restarts, and generative sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np


ROW_SUM_TOL = 1e-12


class ImpossibleSequenceError(RuntimeError):
    """The sequence has zero probability under the parameters."""

    def __init__(self, step: int) -> None:
        super().__init__(f"sequence has zero probability at step {step}")
        self.step = step


@dataclass(frozen=True)
class Quantizer:
    """Uniform binning of [s_min, s_max] into q bins, clamped at the edges."""

    s_min: float
    s_max: float
    q: int

    def __post_init__(self) -> None:
        if not self.s_min < self.s_max:
            raise ValueError(f"need s_min < s_max, got [{self.s_min}, {self.s_max}]")
        if self.q < 2:
            raise ValueError(f"need at least 2 bins, got {self.q}")

    def encode(self, s):
        """Bin index floor((s - s_min) / width), clamped into {0..q-1}."""
        width = (self.s_max - self.s_min) / self.q
        idx = np.floor((np.asarray(s, dtype=float) - self.s_min) / width).astype(int)
        idx = np.clip(idx, 0, self.q - 1)
        return int(idx) if np.ndim(s) == 0 else idx

    def decode(self, index):
        """Midpoint of the bin."""
        index = np.asarray(index)
        if np.any(index < 0) or np.any(index >= self.q):
            raise ValueError(f"bin index out of range [0, {self.q}): {index}")
        width = (self.s_max - self.s_min) / self.q
        mid = self.s_min + (index + 0.5) * width
        return float(mid) if index.ndim == 0 else mid


def _check_rows(name: str, mat: np.ndarray) -> None:
    if np.any(mat < 0):
        raise ValueError(f"{name} has negative entries")
    sums = mat.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise ValueError(f"{name} rows must sum to 1 (max deviation {np.abs(sums - 1).max():.3e})")


@dataclass(frozen=True)
class VhmnParams:
    """Network parameters: hidden transitions A (JxJ), visible emissions
    B (JxK), observation emissions C (KxL), initial hidden distribution Z."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Z: np.ndarray

    def __post_init__(self) -> None:
        for name in ("A", "B", "C", "Z"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        j = self.A.shape[0]
        if self.A.shape != (j, j):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != j or self.Z.shape != (j,):
            raise ValueError("B rows and Z length must match the hidden-state count")
        if self.C.shape[0] != self.B.shape[1]:
            raise ValueError("C rows must match the visible-state count")
        _check_rows("A", self.A)
        _check_rows("B", self.B)
        _check_rows("C", self.C)
        _check_rows("Z", self.Z)
        for name in ("A", "B", "C", "Z"):
            getattr(self, name).flags.writeable = False

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[0], self.B.shape[1], self.C.shape[1]


@dataclass(frozen=True)
class SequencePair:
    """Aligned visible-state and observation index sequences."""

    S: np.ndarray
    O: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.S, dtype=int)
        o = np.asarray(self.O, dtype=int)
        if s.shape != o.shape or s.ndim != 1 or s.size == 0:
            raise ValueError("S and O must be equal-length nonempty 1-d sequences")
        if np.any(s < 0) or np.any(o < 0):
            raise ValueError("state indices must be nonnegative")
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "O", o)
        self.S.flags.writeable = False
        self.O.flags.writeable = False

    def __len__(self) -> int:
        return self.S.size


@dataclass
class Trellis:
    alpha: np.ndarray          # (T, J) per-step normalized forward values
    scale: np.ndarray          # (T,) multipliers; log P = -sum(log(scale))
    log_likelihood: float
    beta: np.ndarray | None = None  # (T, J) backward values under the same scaling


def _check_bounds(params: VhmnParams, seq: SequencePair) -> None:
    _, k, l = params.dims
    if seq.S.max() >= k:
        raise ValueError(f"visible index {seq.S.max()} out of range for K={k}")
    if seq.O.max() >= l:
        raise ValueError(f"observation index {seq.O.max()} out of range for L={l}")


def _emissions(params: VhmnParams, seq: SequencePair) -> np.ndarray:
    """(T, J) matrix of P(visible=s_t, obs=o_t | hidden=i)."""
    return (params.B[:, seq.S] * params.C[seq.S, seq.O]).T


def forward(params: VhmnParams, seq: SequencePair) -> Trellis:
    """Scaled forward recursion; log-likelihood accumulates the scale factors."""
    _check_bounds(params, seq)
    t_len = len(seq)
    emissions = _emissions(params, seq)
    alpha = np.empty((t_len, params.dims[0]))
    scale = np.empty(t_len)
    transitions = params.A
    raw = params.Z * emissions[0]
    log_lik = 0.0
    for t in range(t_len):
        if t > 0:
            raw = (alpha[t - 1] @ transitions) * emissions[t]
        total = raw.sum()
        if total <= 0.0 or not math.isfinite(total):
            raise ImpossibleSequenceError(t)
        scale[t] = 1.0 / total
        alpha[t] = raw * scale[t]
        log_lik += math.log(total)
    return Trellis(alpha=alpha, scale=scale, log_likelihood=log_lik)


def backward(params: VhmnParams, seq: SequencePair, trellis: Trellis) -> Trellis:
    """Fill in the backward values, scaled so sum_i alpha_t(i) beta_t(i) = 1."""
    _check_bounds(params, seq)
    t_len = len(seq)
    emissions = _emissions(params, seq)
    beta = np.empty((t_len, params.dims[0]))
    beta[t_len - 1] = 1.0
    transitions = params.A
    scale = trellis.scale
    for t in range(t_len - 2, -1, -1):
        beta[t] = scale[t + 1] * (transitions @ (emissions[t + 1] * beta[t + 1]))
    trellis.beta = beta
    return trellis


def compute_trellis(params: VhmnParams, seq: SequencePair) -> Trellis:
    return backward(params, seq, forward(params, seq))


def posteriors(trellis: Trellis, params: VhmnParams, seq: SequencePair):
    """Pairwise hidden-state posteriors (T-1, J, J) and marginals (T, J).

    The final-step marginal is the normalized forward row at T-1.
    """
    if trellis.beta is None:
        raise ValueError("trellis is missing the backward pass")
    t_len = len(seq)
    emissions = _emissions(params, seq)
    weighted_next = emissions[1:] * trellis.beta[1:]  # (T-1, J)
    blocks = trellis.alpha[:-1, :, None] * params.A[None, :, :] * weighted_next[:, None, :]
    digamma = blocks / blocks.sum(axis=(1, 2), keepdims=True)
    gamma1 = np.empty((t_len, params.dims[0]))
    gamma1[:-1] = digamma.sum(axis=2)
    gamma1[t_len - 1] = trellis.alpha[t_len - 1] / trellis.alpha[t_len - 1].sum()
    return digamma, gamma1


def _rows_or_uniform(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """Row-wise numerator/denominator; rows with no mass become uniform."""
    width = numerator.shape[1]
    out = np.empty_like(numerator, dtype=float)
    for i in range(numerator.shape[0]):
        if denominator[i] <= 0:
            out[i] = 1.0 / width
        else:
            row = numerator[i] / denominator[i]
            out[i] = row / row.sum()
    return out


def reestimate(
    digamma: np.ndarray, gamma1: np.ndarray, seq: SequencePair, k: int, l: int
) -> VhmnParams:
    """One M-step: transitions and visible emissions from the posteriors,
    observation emissions from conditional frequencies of (visible, obs)."""
    t_len = len(seq)
    j = gamma1.shape[1]

    z = gamma1[0] / gamma1[0].sum()

    a_num = digamma.sum(axis=0) if t_len > 1 else np.zeros((j, j))
    a_den = gamma1[: t_len - 1].sum(axis=0) if t_len > 1 else np.zeros(j)
    a = _rows_or_uniform(a_num, a_den)

    b_num = np.zeros((k, j))
    np.add.at(b_num, seq.S, gamma1)
    b = _rows_or_uniform(b_num.T, gamma1.sum(axis=0))

    c_num = np.zeros((k, l))
    np.add.at(c_num, (seq.S, seq.O), 1.0)
    c = _rows_or_uniform(c_num, c_num.sum(axis=1))

    return VhmnParams(A=a, B=b, C=c, Z=z)


def _dirichlet_params(
    dims: tuple[int, int, int], alpha_dir: float, rng: np.random.Generator
) -> VhmnParams:
    j, k, l = dims
    return VhmnParams(
        A=rng.dirichlet(np.full(j, alpha_dir), size=j),
        B=rng.dirichlet(np.full(k, alpha_dir), size=j),
        C=rng.dirichlet(np.full(l, alpha_dir), size=k),
        Z=rng.dirichlet(np.full(j, alpha_dir)),
    )


@dataclass
class FitResult:
    params: VhmnParams
    trace: list[float]
    restart_log_likelihoods: list[float]


def fit(
    seq: SequencePair,
    dims: tuple[int, int, int],
    alpha_dir: float = 1000.0,
    rng_seed: int = 0,
    max_iters: int = 500,
    tol: float = 1e-6,
    restarts: int = 5,
    init_retries: int = 5,
    iteration_hook: Callable[[VhmnParams, float], None] | None = None,
) -> FitResult:
    """EM fit with Dirichlet-randomized restarts, keeping the best likelihood.

    Each restart iterates expectation + re-estimation until the log-likelihood
    gain drops below tol or max_iters is hit; the returned trace belongs to the
    winning restart and is non-decreasing up to float noise.
    """
    if dims[0] < 1:
        raise ValueError("need at least one hidden state")
    if restarts < 1:
        raise ValueError("need at least one restart")
    seeds = np.random.SeedSequence(rng_seed).spawn(restarts * (init_retries + 1))
    seed_iter = iter(seeds)

    best: tuple[float, VhmnParams, list[float]] | None = None
    finals: list[float] = []
    for _ in range(restarts):
        params = None
        for attempt in range(init_retries + 1):
            candidate = _dirichlet_params(dims, alpha_dir, np.random.default_rng(next(seed_iter)))
            try:
                forward(candidate, seq)
            except ImpossibleSequenceError:
                if attempt == init_retries:
                    raise
                continue
            params = candidate
            break
        assert params is not None

        trace: list[float] = []
        current = params
        while len(trace) < max_iters:
            trellis = compute_trellis(current, seq)
            trace.append(trellis.log_likelihood)
            if iteration_hook is not None:
                iteration_hook(current, trellis.log_likelihood)
            params = current
            if len(trace) >= 2 and trace[-1] - trace[-2] < tol:
                break
            digamma, gamma1 = posteriors(trellis, current, seq)
            current = reestimate(digamma, gamma1, seq, dims[1], dims[2])

        finals.append(trace[-1])
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], params, trace)

    assert best is not None
    return FitResult(params=best[1], trace=best[2], restart_log_likelihoods=finals)


def sample_path(
    params: VhmnParams, t_len: int, rng_seed: int | np.random.Generator = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (hidden, visible, observation) index sequences of length t_len.

    Sampling follows the chain: h0 from Z, then per slot s_t from B[h_t],
    o_t from C[s_t], and h_{t+1} from A[h_t].
    """
    if t_len < 1:
        raise ValueError("t_len must be >= 1")
    rng = np.random.default_rng(rng_seed)
    j, k, l = params.dims

    # inverse-CDF sampling from pre-drawn uniforms; the hidden chain is the
    # only sequential part, the two emission layers vectorize over t
    u_hidden = rng.random(t_len)
    u_visible = rng.random(t_len)
    u_obs = rng.random(t_len)

    cum_z = np.cumsum(params.Z)
    cum_a = np.cumsum(params.A, axis=1)
    hidden = np.empty(t_len, dtype=int)
    h = min(int(np.searchsorted(cum_z, u_hidden[0], side="right")), j - 1)
    hidden[0] = h
    for t in range(1, t_len):
        h = min(int(np.searchsorted(cum_a[h], u_hidden[t], side="right")), j - 1)
        hidden[t] = h

    cum_b = np.cumsum(params.B, axis=1)
    visible = np.minimum((cum_b[hidden] <= u_visible[:, None]).sum(axis=1), k - 1)
    cum_c = np.cumsum(params.C, axis=1)
    obs = np.minimum((cum_c[visible] <= u_obs[:, None]).sum(axis=1), l - 1)
    return hidden, visible, obs


def quantize_sequences(
    visible_values: Sequence[float],
    observation_values: Sequence[float],
    k: int,
    l: int,
) -> tuple[SequencePair, Quantizer, Quantizer]:
    """Build index sequences from continuous values, with per-sequence bounds.

    Constant sequences get their range widened by half a unit on each side so
    the quantizer stays well defined.
    """
    vis = np.asarray(visible_values, dtype=float)
    obs = np.asarray(observation_values, dtype=float)

    def bounds(values: np.ndarray) -> tuple[float, float]:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    vis_q = Quantizer(*bounds(vis), q=k)
    obs_q = Quantizer(*bounds(obs), q=l)
    seq = SequencePair(S=vis_q.encode(vis), O=obs_q.encode(obs))
    return seq, vis_q, obs_q


def save_vhmn(
    sink: str | Path | IO[str],
    params: VhmnParams,
    visible_quantizer: Quantizer,
    observation_quantizer: Quantizer,
) -> None:
    blob = {
        "dims": list(params.dims),
        "A": params.A.tolist(),
        "B": params.B.tolist(),
        "C": params.C.tolist(),
        "Z": params.Z.tolist(),
        "visible_quantizer": {
            "s_min": visible_quantizer.s_min,
            "s_max": visible_quantizer.s_max,
            "q": visible_quantizer.q,
        },
        "observation_quantizer": {
            "s_min": observation_quantizer.s_min,
            "s_max": observation_quantizer.s_max,
            "q": observation_quantizer.q,
        },
    }
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, indent=1, sort_keys=True)
            fh.write("\n")
    else:
        json.dump(blob, sink, indent=1, sort_keys=True)
        sink.write("\n")


def load_vhmn(source: str | Path | IO[str]) -> tuple[VhmnParams, Quantizer, Quantizer]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            blob = json.load(fh)
    else:
        blob = json.load(source)
    params = VhmnParams(
        A=np.array(blob["A"], dtype=float),
        B=np.array(blob["B"], dtype=float),
        C=np.array(blob["C"], dtype=float),
        Z=np.array(blob["Z"], dtype=float),
    )
    vq = blob["visible_quantizer"]
    oq = blob["observation_quantizer"]
    return (
        params,
        Quantizer(s_min=vq["s_min"], s_max=vq["s_max"], q=vq["q"]),
        Quantizer(s_min=oq["s_min"], s_max=oq["s_max"], q=oq["q"]),
    )
