"""Backward-recursive learning of hedge positions and option price over a
simulated cross-section of price paths.

Per time step, the optimal hedge is a B-spline expansion of the drift-removed
log price whose coefficients solve a closed-form linear system; the
self-financing portfolio is rolled back, per-path risk-adjusted rewards are
formed, and the Q-function is least-squares fitted on the same basis. The
negated cross-sectional mean of the initial Q-values is the option price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from .bdnn import MlpModel
from .paths import remove_drift


class SingularSystemError(RuntimeError):
    """A normal-equations matrix could not be factorized."""


class InsufficientPathsError(ValueError):
    """Cross-sectional statistics need at least two paths."""


class DegenerateRangeError(ValueError):
    """All states coincide; no basis can be built."""


@dataclass(frozen=True)
class OptionSpec:
    """Contract and engine parameters; all rates are per slot.

    eta is the risk-aversion weight used in rewards and the terminal risk
    charge. pure_risk_hedge switches the action solve to the variance-only
    limit (the 1/eta -> 0 hedge) while eta keeps pricing finite.
    """

    kind: Literal["call", "put"]
    strike: float
    maturity_slots: int
    shares: float = 100.0
    rate_per_slot: float = 0.0
    eta: float = 1.0
    pure_risk_hedge: bool = False
    kappa: float = 0.0
    drift_mu: float = 0.0
    vol_sigma: float = 0.0
    ridge: float = 0.001

    def __post_init__(self) -> None:
        if self.kind not in ("call", "put"):
            raise ValueError(f"kind must be 'call' or 'put', got {self.kind!r}")
        if self.strike <= 0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if self.maturity_slots < 1:
            raise ValueError(f"maturity_slots must be >= 1, got {self.maturity_slots}")
        if not (self.eta > 0) or not math.isfinite(self.eta):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")
        if self.kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be nonnegative, got {self.ridge}")
        if self.vol_sigma < 0:
            raise ValueError(f"vol_sigma must be nonnegative, got {self.vol_sigma}")

    @property
    def discount(self) -> float:
        return math.exp(-self.rate_per_slot)


class BasisSet:
    """Cubic B-spline basis on a clamped uniform knot vector."""

    def __init__(self, low: float, high: float, count: int, degree: int = 3) -> None:
        if count < degree + 1:
            raise ValueError(f"need at least {degree + 1} basis functions, got {count}")
        if not low < high:
            raise DegenerateRangeError(f"empty span [{low}, {high}]")
        self.low = float(low)
        self.high = float(high)
        self.count = int(count)
        self.degree = int(degree)
        breakpoints = np.linspace(low, high, count - degree + 1)
        self.knots = np.concatenate(
            [np.full(degree, low), breakpoints, np.full(degree, high)]
        )

    def evaluate(self, x: float) -> np.ndarray:
        return self.evaluate_many(np.array([x]))[0]

    def evaluate_many(self, xs: np.ndarray) -> np.ndarray:
        """(n, count) design matrix; inputs are clamped onto the knot span."""
        xs = np.clip(np.asarray(xs, dtype=float), self.low, self.high)
        return BSpline.design_matrix(xs, self.knots, self.degree).toarray()


def build_basis(states: np.ndarray, count: int = 12) -> BasisSet:
    """Basis spanning the observed state range, inflated by a 1% margin."""
    states = np.asarray(states, dtype=float)
    if not np.all(np.isfinite(states)):
        raise ValueError("states must be finite")
    lo, hi = float(states.min()), float(states.max())
    if lo == hi:
        raise DegenerateRangeError(f"all states equal {lo}; cannot span a basis")
    margin = 0.01 * (hi - lo)
    return BasisSet(lo - margin, hi + margin, count)


@dataclass
class CrossSection:
    """Simulated prices with their derived per-step centered quantities.

    delta_s[:, t] = S_{t+1} - e^r S_t; the *_dot arrays have cross-sectional
    means removed column by column.
    """

    prices: np.ndarray       # (U, T+1)
    states: np.ndarray       # (U, T+1)
    delta_s: np.ndarray      # (U, T)
    delta_s_dot: np.ndarray  # (U, T)
    s_dot: np.ndarray        # (U, T)

    @classmethod
    def from_prices(cls, prices: np.ndarray, spec: OptionSpec) -> "CrossSection":
        prices = np.asarray(prices, dtype=float)
        if prices.ndim != 2 or prices.shape[1] < 2:
            raise ValueError(f"prices must be (U, T+1) with T >= 1, got {prices.shape}")
        if np.any(prices <= 0) or not np.all(np.isfinite(prices)):
            raise ValueError("prices must be positive and finite")
        states = remove_drift(prices, spec.drift_mu, spec.vol_sigma)
        growth = math.exp(spec.rate_per_slot)
        delta_s = prices[:, 1:] - growth * prices[:, :-1]
        return cls(
            prices=prices,
            states=states,
            delta_s=delta_s,
            delta_s_dot=delta_s - delta_s.mean(axis=0),
            s_dot=prices[:, :-1] - prices[:, :-1].mean(axis=0),
        )

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.prices.shape[1] - 1


def terminal_payoff(spec: OptionSpec, s_terminal: float) -> float:
    """European payoff at expiry."""
    if spec.kind == "call":
        return max(s_terminal - spec.strike, 0.0)
    return max(spec.strike - s_terminal, 0.0)


def terminal_init(spec: OptionSpec, cross_section: CrossSection):
    """Terminal portfolio values (the payoffs) and terminal Q-values.

    Q at expiry is the negated payoff minus the risk charge eta times the
    unbiased cross-sectional payoff variance (a single shared scalar).
    """
    if cross_section.n_paths < 2:
        raise InsufficientPathsError(
            f"need at least 2 paths for cross-sectional statistics, got {cross_section.n_paths}"
        )
    s_terminal = cross_section.prices[:, -1]
    if spec.kind == "call":
        payoff = np.maximum(s_terminal - spec.strike, 0.0)
    else:
        payoff = np.maximum(spec.strike - s_terminal, 0.0)
    q_terminal = -payoff - spec.eta * payoff.var(ddof=1)
    return payoff, q_terminal


def _solve_ridge(matrix: np.ndarray, rhs: np.ndarray, ridge: float, what: str) -> np.ndarray:
    system = 0.5 * (matrix + matrix.T) + ridge * np.eye(matrix.shape[0])
    try:
        factor = cho_factor(system, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"{what} system is singular; increase the ridge parameter"
        ) from exc
    return cho_solve(factor, rhs)


def _xi(t: int, cross_section: CrossSection, spec: OptionSpec, impact: np.ndarray | None):
    """Hedgeable per-path movement: centered price change plus the scaled
    impact compensation on the centered price."""
    xi = cross_section.delta_s_dot[:, t].copy()
    if impact is not None and spec.kappa != 0.0:
        xi += spec.kappa * impact * cross_section.s_dot[:, t]
    return xi


def optimal_action_coeffs(
    t: int,
    cross_section: CrossSection,
    pi_next: np.ndarray,
    spec: OptionSpec,
    basis: BasisSet,
    psi: np.ndarray | None = None,
    impact: np.ndarray | None = None,
) -> np.ndarray:
    """Closed-form basis coefficients of the optimal hedge at time t.

    Solves (E + ridge I) w = D with E = sum_u psi psi' Xi^2 and D built from
    next-step centered portfolio values; in the pure-risk limit the return
    terms scaled by 1/(2 eta gamma) are dropped.
    """
    if psi is None:
        psi = basis.evaluate_many(cross_section.states[:, t])
    xi = _xi(t, cross_section, spec, impact)
    e_mat = (psi * (xi**2)[:, None]).T @ psi

    pi_dot = pi_next - pi_next.mean()
    d_vec = psi.T @ (pi_dot * xi)
    if not spec.pure_risk_hedge:
        scale = 1.0 / (2.0 * spec.eta * spec.discount)
        returns = cross_section.delta_s[:, t].copy()
        if impact is not None and spec.kappa != 0.0:
            returns += spec.kappa * impact * cross_section.prices[:, t]
        d_vec += psi.T @ (returns * scale)
    return _solve_ridge(e_mat, d_vec, spec.ridge, "hedge-coefficient")


def optimal_action(
    w: np.ndarray, basis: BasisSet, states_t: np.ndarray, psi: np.ndarray | None = None
) -> np.ndarray:
    """Per-path hedge positions: basis expansion evaluated at the states."""
    if psi is None:
        psi = basis.evaluate_many(states_t)
    return psi @ w


def portfolio_rollback(
    t: int,
    pi_next: np.ndarray,
    a_t: np.ndarray,
    cross_section: CrossSection,
    spec: OptionSpec,
    impact: np.ndarray | None = None,
) -> np.ndarray:
    """Self-financing step backwards: Pi_t = gamma (Pi_{t+1} - hedge P&L)."""
    pnl = a_t * cross_section.delta_s[:, t]
    if impact is not None and spec.kappa != 0.0:
        pnl = pnl + spec.kappa * impact * a_t * cross_section.prices[:, t]
    return spec.discount * (pi_next - pnl)


def reward(
    t: int,
    a_t: np.ndarray,
    cross_section: CrossSection,
    pi_next: np.ndarray,
    spec: OptionSpec,
    impact: np.ndarray | None = None,
) -> np.ndarray:
    """Per-path risk-adjusted return: discounted hedge P&L minus eta times the
    squared unhedged residual of the next-step portfolio value."""
    gamma = spec.discount
    pnl = a_t * cross_section.delta_s[:, t]
    hedged = a_t * cross_section.delta_s_dot[:, t]
    if impact is not None and spec.kappa != 0.0:
        pnl = pnl + spec.kappa * impact * a_t * cross_section.prices[:, t]
        hedged = hedged + spec.kappa * impact * a_t * cross_section.s_dot[:, t]
    pi_dot = pi_next - pi_next.mean()
    return gamma * pnl - spec.eta * gamma**2 * (pi_dot - hedged) ** 2


def qfit(
    t: int,
    rewards_t: np.ndarray,
    q_next: np.ndarray,
    basis: BasisSet,
    states_t: np.ndarray,
    spec: OptionSpec,
    psi: np.ndarray | None = None,
):
    """Least-squares fit of Q-values on the basis: (G + ridge I) phi = H."""
    if psi is None:
        psi = basis.evaluate_many(states_t)
    targets = rewards_t + spec.discount * q_next
    g_mat = psi.T @ psi
    h_vec = psi.T @ targets
    phi = _solve_ridge(g_mat, h_vec, spec.ridge, "Q-fit")
    return phi, psi @ phi


@dataclass
class HedgeSolution:
    """All per-step arrays of the backward recursion plus the learned price.

    Positions and values are per unit of the option (one share); multiply
    positions by spec.shares for the full holding. rewards and the
    coefficient arrays cover t = 0..T-1; a, pi and q include the terminal
    column.
    """

    price: float             # -mean(Q_0), USD per share
    w: np.ndarray            # (T, B) hedge coefficients
    a: np.ndarray            # (U, T+1) hedge positions, a[:, T] = 0
    pi: np.ndarray           # (U, T+1) portfolio values
    rewards: np.ndarray      # (U, T)
    phi: np.ndarray          # (T, B) Q-fit coefficients
    q: np.ndarray            # (U, T+1) Q-values
    basis: BasisSet
    spec: OptionSpec

    @property
    def price_total(self) -> float:
        return self.price * self.spec.shares


def price_and_hedge(
    cross_section: CrossSection,
    spec: OptionSpec,
    basis: BasisSet | None = None,
    basis_count: int = 12,
    impact_model: MlpModel | None = None,
) -> HedgeSolution:
    """Run the full backward recursion and learn price and hedge positions.

    With kappa > 0 an impact model is required: the hedge-induced price
    change is predicted from the rebalancing flow, using a preliminary
    pure-risk estimate of the current position for the flow itself.
    """
    n_steps = cross_section.n_steps
    n_paths = cross_section.n_paths
    if spec.maturity_slots != n_steps:
        raise ValueError(
            f"spec covers {spec.maturity_slots} slots but the cross-section has {n_steps}"
        )
    if spec.kappa != 0.0 and impact_model is None:
        raise ValueError("kappa > 0 requires an impact model")
    if basis is None:
        basis = build_basis(cross_section.states, basis_count)

    psi = [basis.evaluate_many(cross_section.states[:, t]) for t in range(n_steps + 1)]

    a = np.zeros((n_paths, n_steps + 1))
    pi = np.empty((n_paths, n_steps + 1))
    q = np.empty((n_paths, n_steps + 1))
    rewards_all = np.empty((n_paths, n_steps))
    w_all = np.empty((n_steps, basis.count))
    phi_all = np.empty((n_steps, basis.count))

    pi[:, -1], q[:, -1] = terminal_init(spec, cross_section)

    for t in range(n_steps - 1, -1, -1):
        impact = None
        if spec.kappa != 0.0:
            prelim = replace(spec, kappa=0.0, pure_risk_hedge=True)
            w_pre = optimal_action_coeffs(t, cross_section, pi[:, t + 1], prelim, basis, psi[t])
            a_pre = psi[t] @ w_pre
            flow = (a[:, t + 1] - a_pre) * spec.shares * cross_section.prices[:, t]
            impact = np.atleast_1d(impact_model.forward(flow))
        w_all[t] = optimal_action_coeffs(
            t, cross_section, pi[:, t + 1], spec, basis, psi[t], impact
        )
        a[:, t] = psi[t] @ w_all[t]
        pi[:, t] = portfolio_rollback(t, pi[:, t + 1], a[:, t], cross_section, spec, impact)
        rewards_all[:, t] = reward(t, a[:, t], cross_section, pi[:, t + 1], spec, impact)
        phi_all[t], q[:, t] = qfit(
            t, rewards_all[:, t], q[:, t + 1], basis, cross_section.states[:, t], spec, psi[t]
        )

    return HedgeSolution(
        price=-float(q[:, 0].mean()),
        w=w_all,
        a=a,
        pi=pi,
        rewards=rewards_all,
        phi=phi_all,
        q=q,
        basis=basis,
        spec=spec,
    )
