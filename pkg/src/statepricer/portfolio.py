"""Wealth accounting for self-financing portfolios with income.

All accumulation is left-endpoint: over step k the holder earns

    gamma_k pi_k' (sigma_k dW_k + (b_k + delta_k - r_k 1) dt_k)

in discounted units, plus income, where pi_k is the money amount held in
each stock at t_k. Lump income with index j is credited at node j itself
(close of its step) with the discount at that node.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .deflator import DeflatorSet
from .errors import ConfigError
from .simulate import ScenarioSet


@dataclass(frozen=True)
class PortfolioProcess:
    """Stock positions (money amounts) at left endpoints: (n_paths, n_steps,
    n_assets). The bond position is implied by self-financing: cash = X - pi'1."""
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions",
                           np.asarray(self.positions, dtype=float))
        if self.positions.ndim != 3:
            raise ConfigError("positions must be (n_paths, n_steps, n_assets)")


def constant_positions(amounts, n_paths: int, n_steps: int) -> PortfolioProcess:
    amounts = np.atleast_1d(np.asarray(amounts, dtype=float))
    return PortfolioProcess(np.broadcast_to(
        amounts, (n_paths, n_steps, amounts.size)).copy())


def buy_and_hold_shares(shares, scenarios: ScenarioSet) -> PortfolioProcess:
    """Hold a fixed share count of each stock; money positions are shares
    times the running prices."""
    shares = np.atleast_1d(np.asarray(shares, dtype=float))
    return PortfolioProcess(shares * scenarios.prices[:, :-1, :])


@dataclass(frozen=True)
class IncomeStream:
    """Cumulative income: a running rate plus lump amounts at grid nodes.

    rate: payment rate per unit time, scalar or broadcastable to
          (n_paths, n_steps); paid left-endpoint.
    lumps: tuple of (node_index, amount) events, each an array over paths;
           a lump with index j is credited at node j.
    """
    rate: float | np.ndarray = 0.0
    lumps: tuple = ()

    @classmethod
    def none(cls) -> "IncomeStream":
        return cls()


@dataclass(frozen=True)
class WealthPaths:
    """Wealth X along scenarios with its gains-from-trade decomposition:
    values = initial * bond + income_value + trading_gains, exactly."""
    initial: float
    values: np.ndarray          # (n_paths, n_nodes)
    trading_gains: np.ndarray   # bond-accrued trading part
    income_value: np.ndarray    # bond-accrued income part
    deflated_values: np.ndarray  # H X

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def _income_panels(income: IncomeStream | None, deflators: DeflatorSet,
                   weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (per-step weighted rate flows (m, N), per-node weighted lump
    flows (m, N+1)) under the given node weights (discount or deflator)."""
    scn = deflators.scenarios
    m, N = scn.n_paths, scn.grid.n_steps
    rate_flows = np.zeros((m, N))
    lump_flows = np.zeros((m, N + 1))
    if income is None:
        return rate_flows, lump_flows
    rate = np.asarray(income.rate, dtype=float)
    if np.any(rate != 0.0):
        rate_flows[:] = weights[:, :-1] * rate * scn.grid.dt
    for node_index, amount in income.lumps:
        idx = np.broadcast_to(np.asarray(node_index, int), (m,))
        amt = np.broadcast_to(np.asarray(amount, dtype=float), (m,))
        np.add.at(lump_flows, (np.arange(m), idx), weights[np.arange(m), idx] * amt)
    return rate_flows, lump_flows


def trading_increments(portfolio: PortfolioProcess, deflators: DeflatorSet) -> np.ndarray:
    """Discounted gains-from-trade per step:
    gamma_k pi_k'(sigma_k dW_k + excess_k dt_k), shape (n_paths, n_steps)."""
    from .deflator import excess_and_volatility  # local: avoid import cycle

    scn = deflators.scenarios
    grid = scn.grid
    dW = scn.brownian.increments
    pi = portfolio.positions
    if pi.shape[:2] != (scn.n_paths, grid.n_steps):
        raise ConfigError(
            f"positions shaped {pi.shape} do not match {scn.n_paths} paths x "
            f"{grid.n_steps} steps")
    excess, sigma = excess_and_volatility(scn)
    excess_left = np.broadcast_to(excess, (scn.n_paths, grid.n_steps + 1,
                                           scn.n_assets))[:, :-1, :]
    if sigma.ndim == 2:
        vol_part = np.einsum("mkn,nd,mkd->mk", pi, sigma, dW)
    else:
        sig = np.broadcast_to(sigma, (scn.n_paths, grid.n_steps + 1)
                              + sigma.shape[-2:])[:, :-1]
        vol_part = np.einsum("mknd,mkn,mkd->mk", sig, pi, dW)
    drift_part = (pi * excess_left).sum(axis=-1) * grid.dt
    disc = scn.discount_paths()
    return disc[:, :-1] * (vol_part + drift_part)


def wealth_paths(initial: float, portfolio: PortfolioProcess,
                 deflators: DeflatorSet,
                 income: IncomeStream | None = None) -> WealthPaths:
    """Accumulate wealth from initial capital, trading gains and income."""
    scn = deflators.scenarios
    m, N = scn.n_paths, scn.grid.n_steps
    disc = scn.discount_paths()
    bond = scn.bond_paths()

    trade = trading_increments(portfolio, deflators)
    rate_flows, lump_flows = _income_panels(income, deflators, disc)

    def accrue(step_flows: np.ndarray, node_flows: np.ndarray | None) -> np.ndarray:
        acc = np.zeros((m, N + 1))
        np.cumsum(step_flows, axis=1, out=acc[:, 1:])
        if node_flows is not None:
            acc += np.cumsum(node_flows, axis=1)
        return acc

    disc_trading = accrue(trade, None)
    disc_income = accrue(rate_flows, lump_flows)
    disc_wealth = initial + disc_income + disc_trading
    values = bond * disc_wealth
    deflated = deflators.density * disc_wealth
    return WealthPaths(initial=float(initial), values=values,
                       trading_gains=bond * disc_trading,
                       income_value=bond * disc_income,
                       deflated_values=deflated)


def deflated_wealth_identity_residual(wealth: WealthPaths,
                                      portfolio: PortfolioProcess,
                                      deflators: DeflatorSet,
                                      income: IncomeStream | None = None) -> np.ndarray:
    """Per-path defect of the deflated-wealth representation

        H(T) X(T) - int H dGamma - x0 - sum_k H_k (sigma_k' pi_k - X_k theta_k)' dW_k.

    Near zero (round-off for vanishing market price of risk, O(sqrt(dt))
    noise otherwise) when the market is state-arbitrage-free; a kernel
    residual p != 0 leaves a drift term, so a warning is issued.
    """
    from .deflator import excess_and_volatility

    scn = deflators.scenarios
    grid = scn.grid
    if float(deflators.residual_norm.max()) > 1e-8:
        warnings.warn("deflated-wealth identity checked in a market with "
                      "nonzero kernel residual: a drift term remains",
                      RuntimeWarning, stacklevel=2)
    H = deflators.deflator
    dW = scn.brownian.increments
    pi = portfolio.positions
    _, sigma = excess_and_volatility(scn)
    if sigma.ndim == 2:
        sig_pi = pi @ sigma                      # (m, N, d)
    else:
        sig = np.broadcast_to(sigma, (scn.n_paths, grid.n_steps + 1)
                              + sigma.shape[-2:])[:, :-1]
        sig_pi = np.einsum("mknd,mkn->mkd", sig, pi)
    theta_left = deflators.market_price_of_risk[:, :-1, :]
    integrand = sig_pi - wealth.values[:, :-1, None] * theta_left
    stochastic = (H[:, :-1] * (integrand * dW).sum(axis=-1)).sum(axis=1)

    rate_flows, lump_flows = _income_panels(income, deflators, H)
    income_total = rate_flows.sum(axis=1) + lump_flows.sum(axis=1)

    return (H[:, -1] * wealth.values[:, -1] - income_total
            - wealth.initial - stochastic)


def tameness_monitor(wealth: WealthPaths, bound: float = 0.0) -> dict:
    """Minimum of deflated wealth over paths and nodes against a lower bound."""
    dv = wealth.deflated_values
    flat = int(np.argmin(dv))
    i, k = divmod(flat, dv.shape[1])
    min_val = float(dv[i, k])
    return {"min_deflated_wealth": min_val, "path": int(i), "step": int(k),
            "bound": float(bound), "violated": bool(min_val < bound)}
