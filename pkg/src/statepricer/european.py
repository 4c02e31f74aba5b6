"""European-style claims: deflator pricing, hedge surfaces, replication.

A claim pays a running rate up to expiry and a terminal lump at expiry,
where expiry is the grid horizon or a first-hitting time capped by the
horizon. The value is the expected deflator-weighted cashflow total; no
measure change is performed, so the price is well defined even when the
density factor is a strict local martingale or the volatility is
degenerate.

Hedging conditions on the states generated by a subset of drivers
(``driver_support``): the wealth surface comes from cross-sectional
regression of remaining deflated cashflows, the martingale integrand from
regressing one-step increments on the supported driver increments, and the
replication positions from minimal-norm solves of sigma' pi = H^-1 phi +
X theta. Replication residuals above tolerance flag the claim
non-attainable; with full-rank supported volatility and a complementary
orthogonal remainder they vanish up to sampling error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .deflator import DeflatorSet, excess_and_volatility
from .errors import ConfigError, SimulationError
from .regression import DEFAULT_DEGREE, fit_conditional_mean, polynomial_design
from .reports import ValuationReport, report_from_samples
from .simulate import ScenarioSet


# ---------------------------------------------------------------- claims --

@dataclass(frozen=True)
class FixedHorizon:
    """Expiry at the final grid node."""


@dataclass(frozen=True)
class FirstHitting:
    """Expiry at the first node where an asset price crosses a level
    (from below when direction is "up", from above when "down"), or at the
    horizon, whichever comes first."""
    asset: int
    level: float
    direction: str = "up"

    def __post_init__(self):
        if self.direction not in ("up", "down"):
            raise ConfigError('direction must be "up" or "down"')


@dataclass(frozen=True)
class EuropeanClaim:
    """terminal: lump payoff g(prices, aux) paid at expiry; payment_rate:
    income rate c(t, prices, aux) paid while alive; driver_support: driver
    indices spanning the claim's information (None = all drivers)."""
    terminal: Callable | None = None
    payment_rate: Callable | None = None
    expiry: FixedHorizon | FirstHitting = FixedHorizon()
    driver_support: tuple[int, ...] | None = None

    def support_tuple(self, n_drivers: int) -> tuple[int, ...]:
        if self.driver_support is None:
            return tuple(range(n_drivers))
        support = tuple(sorted(set(int(i) for i in self.driver_support)))
        if not support:
            raise ConfigError("driver_support cannot be empty")
        if support[0] < 0 or support[-1] >= n_drivers:
            raise ConfigError(f"driver_support {support} out of range for "
                              f"{n_drivers} drivers")
        return support


def call_payoff(strike: float, asset: int = 0) -> Callable:
    return lambda prices, aux: np.maximum(prices[:, asset] - strike, 0.0)


def put_payoff(strike: float, asset: int = 0) -> Callable:
    return lambda prices, aux: np.maximum(strike - prices[:, asset], 0.0)


def forward_payoff(strike: float, asset: int = 0) -> Callable:
    return lambda prices, aux: prices[:, asset] - strike


def piecewise_linear_payoff(points, asset: int = 0) -> Callable:
    """Continuous piecewise-linear payoff through (price, value) knots,
    extrapolated linearly with the end-segment slopes."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ConfigError("points must be an (k, 2) array with k >= 2")
    if np.any(np.diff(pts[:, 0]) <= 0):
        raise ConfigError("knot prices must be strictly increasing")
    x, y = pts[:, 0], pts[:, 1]
    lo_slope = (y[1] - y[0]) / (x[1] - x[0])
    hi_slope = (y[-1] - y[-2]) / (x[-1] - x[-2])

    def payoff(prices, aux):
        s = prices[:, asset]
        out = np.interp(s, x, y)
        out = np.where(s < x[0], y[0] + lo_slope * (s - x[0]), out)
        out = np.where(s > x[-1], y[-1] + hi_slope * (s - x[-1]), out)
        return out

    return payoff


def expiry_indices(claim: EuropeanClaim, scenarios: ScenarioSet) -> np.ndarray:
    """Per-path expiry node index."""
    N = scenarios.grid.n_steps
    if isinstance(claim.expiry, FixedHorizon):
        return np.full(scenarios.n_paths, N, dtype=int)
    rule = claim.expiry
    if rule.asset < 0 or rule.asset >= scenarios.n_assets:
        raise ConfigError(f"hitting rule asset {rule.asset} out of range")
    path = scenarios.prices[:, :, rule.asset]
    hit = path >= rule.level if rule.direction == "up" else path <= rule.level
    any_hit = hit.any(axis=1)
    first = np.where(any_hit, hit.argmax(axis=1), N)
    return first.astype(int)


# ---------------------------------------------------------------- pricing --

@dataclass(frozen=True)
class EuropeanCashflows:
    """Deflator-weighted claim cashflows per path."""
    rate_flows: np.ndarray   # (n_paths, n_steps): H_k c_k dt_k while alive
    lump_values: np.ndarray  # (n_paths,): H_tau g at expiry
    lump_index: np.ndarray   # (n_paths,): expiry node
    total: np.ndarray        # (n_paths,)


def claim_cashflows(claim: EuropeanClaim, deflators: DeflatorSet) -> EuropeanCashflows:
    scn = deflators.scenarios
    grid = scn.grid
    m, N = scn.n_paths, grid.n_steps
    H = deflators.deflator
    tau = expiry_indices(claim, scn)

    rate_flows = np.zeros((m, N))
    if claim.payment_rate is not None:
        c = np.asarray(claim.payment_rate(grid.times[:-1], scn.prices[:, :-1, :],
                                          None if scn.aux is None else scn.aux[:, :-1]),
                       dtype=float)
        rate_flows[:] = H[:, :-1] * c * grid.dt
        alive = np.arange(N) < tau[:, None]
        rate_flows *= alive

    lump = np.zeros(m)
    if claim.terminal is not None:
        rows = np.arange(m)
        p_tau = scn.prices[rows, tau, :]
        a_tau = None if scn.aux is None else scn.aux[rows, tau]
        g = np.asarray(claim.terminal(p_tau, a_tau), dtype=float)
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g))[0])
            raise SimulationError(f"non-finite claim payoff at path "
                                  f"{scn.path_offset + bad}")
        lump = H[rows, tau] * g
    total = rate_flows.sum(axis=1) + lump
    return EuropeanCashflows(rate_flows=rate_flows, lump_values=lump,
                             lump_index=tau, total=total)


def price_european(claim: EuropeanClaim, deflators: DeflatorSet) -> ValuationReport:
    """Deflator-weighted Monte Carlo value of a European-style claim.

    The estimate is theta-independent in an arbitrage-free market: drift
    assumptions are absorbed by the deflator weighting.
    """
    cf = claim_cashflows(claim, deflators)
    diagnostics = {
        "deflated_payoff_min": float(cf.total.min()),
        "deflated_payoff_max": float(cf.total.max()),
        "deflated_payoff_second_moment": float((cf.total ** 2).mean()),
        "theta_sq_integral_max": float(deflators.theta_sq_integral.max()),
        "max_kernel_residual_norm": float(deflators.residual_norm.max()),
    }
    return report_from_samples(cf.total, diagnostics)


# ---------------------------------------------------------------- hedging --

@dataclass(frozen=True)
class HedgeResult:
    """Hedge wealth surface, martingale integrand, replication positions and
    the per-(path, step) replication residual norms."""
    wealth: np.ndarray          # (n_paths, n_nodes), zero after expiry
    integrand: np.ndarray       # (n_paths, n_steps, n_drivers), zero off support
    positions: np.ndarray       # (n_paths, n_steps, n_assets)
    cash: np.ndarray            # (n_paths, n_steps)
    residual_norm: np.ndarray   # (n_paths, n_steps)
    max_residual: float
    attainable: bool
    tolerance: float
    driver_support: tuple[int, ...]
    expiry_index: np.ndarray
    cashflows: EuropeanCashflows


def _supported_state_columns(scenarios: ScenarioSet, support: tuple[int, ...],
                             rank_tol: float) -> list[int]:
    """Indices of state columns measurable w.r.t. the supported drivers:
    assets whose volatility rows vanish off support (checked on the panel),
    plus the aux channel if its time-zero loading does."""
    _, sigma = excess_and_volatility(scenarios)
    d = scenarios.model.n_drivers
    off = [j for j in range(d) if j not in support]
    cols = []
    sig = np.asarray(sigma, dtype=float)
    scale = np.abs(sig).max() or 1.0
    for j in range(scenarios.n_assets):
        row_off = sig[..., j, off] if off else np.zeros(1)
        if np.abs(row_off).max(initial=0.0) <= rank_tol * scale:
            cols.append(j)
    if scenarios.aux is not None:
        v = np.atleast_1d(np.asarray(
            scenarios.model.aux.vol(0.0, np.asarray([scenarios.model.aux.initial])),
            dtype=float)).reshape(-1)
        if v.size == d and (not off or np.abs(v[off]).max(initial=0.0) <= rank_tol * scale):
            cols.append(scenarios.n_assets)  # aux column
    return cols


def hedge_wealth_surface(claim: EuropeanClaim, deflators: DeflatorSet,
                         degree: int = DEFAULT_DEGREE,
                         tolerance: float = 1e-8) -> HedgeResult:
    """Estimate the hedge wealth surface, integrand and replication
    portfolio of a European-style claim by cross-sectional regression.

    degree sets the polynomial basis in the supported state columns. The
    returned wealth satisfies X = payoff exactly at each path's expiry node
    and zero afterwards; the integrand is zero outside driver_support.
    """
    scn = deflators.scenarios
    model, grid = scn.model, scn.grid
    m, N, d = scn.n_paths, grid.n_steps, model.n_drivers
    support = claim.support_tuple(d)

    if model.rate.state_dependent and len(support) < d:
        warnings.warn(
            "state-dependent rate with a proper driver subset: discount "
            "measurability w.r.t. the supported drivers is assumed, not checked",
            RuntimeWarning, stacklevel=2)
    theta = deflators.market_price_of_risk
    off = [j for j in range(d) if j not in support]
    if off and float(np.abs(theta[..., off]).max()) > 1e-8:
        warnings.warn(
            "market price of risk loads on drivers outside the claim's "
            "support; hedge construction assumes it vanishes there",
            RuntimeWarning, stacklevel=2)

    cf = claim_cashflows(claim, deflators)
    tau = cf.lump_index
    H = deflators.deflator
    dW = scn.brownian.increments

    state_cols = _supported_state_columns(scn, support, deflators.rank_tol)
    if scn.aux is not None:
        all_states = np.concatenate([scn.prices, scn.aux[:, :, None]], axis=2)
    else:
        all_states = scn.prices
    if not state_cols:
        warnings.warn("no state column is measurable w.r.t. the supported "
                      "drivers; conditioning on the intercept only",
                      RuntimeWarning, stacklevel=2)

    # remaining deflated flows at node k: rate flows of steps >= k plus the
    # lump while k <= expiry
    future = np.zeros((m, N + 1))
    future[:, :-1] = cf.rate_flows[:, ::-1].cumsum(axis=1)[:, ::-1]
    future += np.where(np.arange(N + 1)[None, :] <= tau[:, None],
                       cf.lump_values[:, None], 0.0)

    rows = np.arange(m)
    wealth = np.zeros((m, N + 1))
    for k in range(N + 1):
        alive = tau >= k
        if not alive.any():
            break
        if state_cols:
            states = all_states[alive, k][:, state_cols]
        else:
            states = np.ones((int(alive.sum()), 1))
        fitted = fit_conditional_mean(states, future[alive, k], degree)
        wealth[alive, k] = fitted / H[alive, k]
    # the payoff is known at expiry: enforce it pathwise
    if claim.terminal is not None:
        p_tau = scn.prices[rows, tau, :]
        a_tau = None if scn.aux is None else scn.aux[rows, tau]
        wealth[rows, tau] = np.asarray(claim.terminal(p_tau, a_tau), dtype=float)
    else:
        wealth[rows, tau] = 0.0

    # integrand phi: regress increments of (H X + accumulated flows) on the
    # supported driver increments, with state interactions
    integrand = np.zeros((m, N, d))
    deflated_surface = H * wealth
    for k in range(N):
        through = tau >= k + 1
        if not through.any():
            break
        lump_now = np.where(tau == k + 1, cf.lump_values, 0.0)
        dM = (deflated_surface[:, k + 1] + cf.rate_flows[:, k] + lump_now
              - deflated_surface[:, k])[through]
        if state_cols:
            states = all_states[through, k][:, state_cols]
        else:
            states = np.ones((int(through.sum()), 1))
        basis = polynomial_design(states, degree)
        shocks = dW[through, k][:, support]
        design_blocks = [basis * shocks[:, [j]] for j in range(len(support))]
        design = np.column_stack([np.ones(basis.shape[0])] + design_blocks)
        if design.shape[0] <= design.shape[1]:
            continue
        coef, *_ = np.linalg.lstsq(design, dM, rcond=None)
        nb = basis.shape[1]
        for sj, drv in enumerate(support):
            beta = coef[1 + sj * nb: 1 + (sj + 1) * nb]
            integrand[through, k, drv] = basis @ beta

    return _replicate(claim, deflators, wealth, integrand, support,
                      tolerance, cf)


def _replicate(claim: EuropeanClaim, deflators: DeflatorSet,
               wealth: np.ndarray, integrand: np.ndarray,
               support: tuple[int, ...], tolerance: float,
               cf: EuropeanCashflows) -> HedgeResult:
    """Minimal-norm positions solving sigma' pi = H^-1 phi + X theta."""
    scn = deflators.scenarios
    N = scn.grid.n_steps
    H = deflators.deflator
    theta = deflators.market_price_of_risk
    rhs = integrand / H[:, :-1, None] + wealth[:, :-1, None] * theta[:, :-1, :]

    _, sigma = excess_and_volatility(scn)
    if sigma.ndim == 2:
        U, s, Vt = np.linalg.svd(sigma, full_matrices=False)
        keep = s > deflators.rank_tol * s[:1]
        sinv = np.where(keep, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        pinv_t = (U * sinv) @ Vt               # (n, d)
        positions = np.einsum("nd,mkd->mkn", pinv_t, rhs)
        attained = np.einsum("nd,mkn->mkd", sigma, positions)
    else:
        sig = np.broadcast_to(sigma, (scn.n_paths, N + 1) + sigma.shape[-2:])[:, :-1]
        sig_t = np.swapaxes(sig, -1, -2)
        U, s, Vt = np.linalg.svd(sig_t, full_matrices=False)
        smax = s[..., :1]
        keep = s > deflators.rank_tol * smax
        sinv = np.where(keep, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        coefs = np.einsum("...dk,...d->...k", U, rhs)
        positions = np.einsum("...kn,...k->...n", Vt, sinv * coefs)
        attained = np.einsum("...nd,...n->...d", sig, positions)

    residual = attained - rhs
    residual_norm = np.sqrt((residual ** 2).sum(axis=-1))
    scale = 1.0 + float(np.abs(rhs).max(initial=0.0))
    max_residual = float(residual_norm.max(initial=0.0))
    cash = wealth[:, :-1] - positions.sum(axis=-1)
    return HedgeResult(wealth=wealth, integrand=integrand, positions=positions,
                       cash=cash, residual_norm=residual_norm,
                       max_residual=max_residual,
                       attainable=bool(max_residual <= tolerance * scale),
                       tolerance=float(tolerance), driver_support=support,
                       expiry_index=cf.lump_index, cashflows=cf)


def attainability_check(deflators: DeflatorSet,
                        driver_support: tuple[int, ...] | None = None,
                        rank_tol: float = 1e-10) -> dict:
    """Structural replication test for the supported drivers.

    Conditions: the supported volatility block has full column rank at every
    (path, node), and the complementary block spans exactly the orthogonal
    complement of its range (orthogonal columns, complementary rank).
    """
    scn = deflators.scenarios
    n, d = scn.n_assets, scn.model.n_drivers
    support = EuropeanClaim(driver_support=driver_support).support_tuple(d)
    off = [j for j in range(d) if j not in support]
    _, sigma = excess_and_volatility(scn)
    sig = np.asarray(sigma, dtype=float)
    if sig.ndim == 2:
        sig = sig[None, :, :]
    sig = sig.reshape(-1, n, d)

    sub = sig[:, :, support]
    s_sub = np.linalg.svd(sub, compute_uv=False)
    scale = s_sub[..., :1]
    rank_sub = (s_sub > rank_tol * np.where(scale > 0, scale, 1.0)).sum(axis=-1)
    k = len(support)
    rank_ok = bool(rank_sub.min() == k) if rank_sub.size else False

    if off:
        comp = sig[:, :, off]
        s_comp = np.linalg.svd(comp, compute_uv=False)
        cscale = s_comp[..., :1]
        rank_comp = (s_comp > rank_tol * np.where(cscale > 0, cscale, 1.0)).sum(axis=-1)
        cross = np.einsum("bnk,bnj->bkj", sub, comp)
        max_cross = float(np.abs(cross).max())
        sig_scale = float(np.abs(sig).max()) or 1.0
        orth_ok = max_cross <= rank_tol * sig_scale ** 2 * max(n, d)
        complement_ok = bool(orth_ok and np.all(rank_comp == n - rank_sub))
    else:
        max_cross = 0.0
        complement_ok = True

    return {"attainable": bool(rank_ok and complement_ok),
            "rank_condition_ok": rank_ok,
            "complement_condition_ok": complement_ok,
            "required_rank": k,
            "min_rank_observed": int(rank_sub.min()) if rank_sub.size else 0,
            "max_cross_norm": max_cross,
            "driver_support": list(support)}
