"""State-price deflators from the volatility projection of excess returns.

The market price of risk theta is the minimal-norm solution of
sigma theta = (b + delta - r 1) projected onto the range of sigma; the
component of the excess return outside that range is the kernel residual p.
No equivalent martingale measure is assumed: the density factor

    Z(t) = exp(-int theta' dW - 1/2 int |theta|^2 ds)

may be a strict local martingale (E Z(T) < 1), and the deflator H = gamma Z
is the pricing weight throughout the engine.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import SimulationError
from .simulate import ScenarioSet, _rate_panel

DEFAULT_RANK_TOL = 1e-10


@dataclass(frozen=True)
class ProjectionSlice:
    """Minimal-norm projection at a single (time, state) slice."""
    market_price_of_risk: np.ndarray   # theta, (n_drivers,)
    residual: np.ndarray               # p = excess - sigma theta, (n_assets,)
    rank: int
    smallest_retained_singular_value: float


def _svd_project(sigma: np.ndarray, excess: np.ndarray, rank_tol: float):
    """Batched minimal-norm least squares via SVD.

    sigma: (..., n, d); excess: (..., n) with matching batch dims.
    Returns theta (..., d), residual (..., n), rank (...), smallest (...).
    """
    U, s, Vt = np.linalg.svd(sigma, full_matrices=False)
    smax = s[..., :1]
    keep = s > rank_tol * smax
    sinv = np.where(keep, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    coeff = np.einsum("...nk,...n->...k", U, excess)
    theta = np.einsum("...kd,...k->...d", Vt, sinv * coeff)
    residual = excess - np.einsum("...nd,...d->...n", sigma, theta)
    rank = keep.sum(axis=-1)
    padded = np.where(keep, s, np.inf)
    smallest = np.where(rank > 0, np.min(padded, axis=-1), 0.0)
    return theta, residual, rank, smallest


def market_price_of_risk(sigma, excess, rank_tol: float = DEFAULT_RANK_TOL) -> ProjectionSlice:
    """Project one excess-return slice onto the range of one volatility slice.

    theta is the unique least-squares solution orthogonal to ker(sigma);
    the residual p is orthogonal to range(sigma). Singular values below
    rank_tol times the largest are treated as zero.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    excess = np.atleast_1d(np.asarray(excess, dtype=float))
    if sigma.shape[0] != excess.shape[0]:
        raise ValueError(f"sigma has {sigma.shape[0]} rows, excess has "
                         f"{excess.shape[0]} entries")
    theta, residual, rank, smallest = _svd_project(sigma, excess, rank_tol)
    return ProjectionSlice(market_price_of_risk=theta, residual=residual,
                           rank=int(rank),
                           smallest_retained_singular_value=float(smallest))


@dataclass(frozen=True)
class DeflatorSet:
    """Deflators and projection diagnostics along simulated scenarios.

    market_price_of_risk: (n_paths, n_nodes, n_drivers)
    residual, residual_norm: kernel residual p and |p|
    density: Z > 0, the exponential martingale part
    deflator: H = discount * density, exactly that product at every node
    theta_sq_integral: trapezoid of |theta|^2 over [0, T] per path
    rank, smallest_singular: numerical rank diagnostics per slice

    Arrays whose inputs did not vary across paths or nodes are stored as
    read-only broadcast views at full shape.
    """
    scenarios: ScenarioSet
    market_price_of_risk: np.ndarray
    residual: np.ndarray
    residual_norm: np.ndarray
    density: np.ndarray
    deflator: np.ndarray
    theta_sq_integral: np.ndarray
    rank: np.ndarray
    smallest_singular: np.ndarray
    rank_tol: float

    @property
    def n_paths(self) -> int:
        return self.density.shape[0]


def excess_and_volatility(scenarios: ScenarioSet) -> tuple[np.ndarray, np.ndarray]:
    """Excess return b + delta - r 1 and volatility at every grid node.

    Excess is broadcastable to (n_paths, n_nodes, n_assets); volatility keeps
    its natural shape: (n, d) when constant, (n_nodes, n, d) when a function
    of time, or fully path-dependent (n_paths, n_nodes, n, d).
    """
    model, grid = scenarios.model, scenarios.grid
    times = grid.times
    prices, aux = scenarios.prices, scenarios.aux
    b = model.drift(times, prices, aux)
    delta = model.dividend(times, prices, aux)
    r = _rate_panel(model, grid, prices, aux)
    excess = b + delta - r[..., None]
    sigma = model.volatility(times, prices, aux)
    return excess, sigma


def deflator_paths(scenarios: ScenarioSet, rank_tol: float = DEFAULT_RANK_TOL) -> DeflatorSet:
    """Compute theta, the kernel residual, Z and H = gamma Z along scenarios.

    Coefficients are evaluated at every grid node; the density update freezes
    theta at the left endpoint of each step, in log space.
    """
    model, grid = scenarios.model, scenarios.grid
    m, n_nodes = scenarios.n_paths, grid.n_steps + 1
    n, d = model.n_assets, model.n_drivers

    dt = grid.dt
    excess, sigma = excess_and_volatility(scenarios)
    if sigma.ndim == 2:
        # one SVD, applied to every slice
        U, s, Vt = np.linalg.svd(sigma, full_matrices=False)
        keep = s > rank_tol * s[:1]
        sinv = np.where(keep, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        pinv_t = (U * sinv) @ Vt          # (n, d): theta = excess @ pinv_t
        theta = excess @ pinv_t
        residual = excess - theta @ sigma.T
        rank = np.asarray(int(keep.sum()))
        smallest = np.asarray(float(s[keep].min()) if keep.any() else 0.0)
    else:
        batch = np.broadcast_shapes(sigma.shape[:-2], excess.shape[:-1])
        sigma_b = np.broadcast_to(sigma, batch + sigma.shape[-2:])
        excess_b = np.broadcast_to(excess, batch + (n,))
        theta, residual, rank, smallest = _svd_project(sigma_b, excess_b, rank_tol)

    full = (m, n_nodes)
    theta = np.broadcast_to(theta, full + (d,))
    residual = np.broadcast_to(residual, full + (n,))
    residual_norm = np.broadcast_to(
        np.sqrt((residual ** 2).sum(axis=-1)), full)
    rank = np.broadcast_to(rank, full)
    smallest = np.broadcast_to(smallest, full)

    dW = scenarios.brownian.increments
    theta_left = theta[:, :-1, :]
    theta_sq = (theta ** 2).sum(axis=-1)          # (m, n_nodes) broadcastable
    theta_sq = np.broadcast_to(theta_sq, full)
    dlog = -((theta_left * dW).sum(axis=-1) + 0.5 * theta_sq[:, :-1] * dt)
    log_density = np.empty((m, n_nodes))
    log_density[:, 0] = 0.0
    np.cumsum(dlog, axis=1, out=log_density[:, 1:])
    density = np.exp(log_density)
    _check_finite(density, scenarios.path_offset)

    deflator = scenarios.discount_paths() * density
    theta_sq_integral = (0.5 * (theta_sq[:, :-1] + theta_sq[:, 1:]) * dt).sum(axis=1)

    return DeflatorSet(scenarios=scenarios, market_price_of_risk=theta,
                       residual=residual, residual_norm=residual_norm,
                       density=density, deflator=deflator,
                       theta_sq_integral=theta_sq_integral,
                       rank=rank, smallest_singular=smallest, rank_tol=rank_tol)


def _check_finite(density: np.ndarray, path_offset: int) -> None:
    bad = ~np.isfinite(density)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise SimulationError(
            f"non-finite density at path {path_offset + int(idx[0])}, "
            f"step {int(idx[1])}")


def integrability_diagnostic(deflators: DeflatorSet, cap: float | None = None) -> dict:
    """Summary of the pathwise risk-price energy int |theta|^2 dt.

    The continuous-time theory only requires this integral to be finite
    almost surely; the sample summary flags paths whose grid value exceeds
    ``cap``, it cannot certify finiteness.
    """
    q = deflators.theta_sq_integral
    quantiles = np.quantile(q, [0.5, 0.9, 0.99])
    out = {
        "mean": float(q.mean()),
        "max": float(q.max()),
        "q50": float(quantiles[0]),
        "q90": float(quantiles[1]),
        "q99": float(quantiles[2]),
    }
    if cap is not None:
        out["cap"] = float(cap)
        out["n_paths_over_cap"] = int((q > cap).sum())
    return out


def terminal_density_mean(deflators: DeflatorSet) -> dict:
    """Monte Carlo estimate of E Z(T) with standard error and 95% interval.

    Values materially below one indicate the density is a strict local
    martingale on [0, T] (no equivalent martingale measure), which the
    valuation machinery tolerates by construction.
    """
    zT = np.asarray(deflators.density[:, -1], dtype=float)
    return summarize_mean(zT)


def summarize_mean(samples: np.ndarray) -> dict:
    """Sample mean with standard error and normal 95% confidence interval."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return {"estimate": est, "std_error": se,
            "ci_low": est - 1.959963984540054 * se,
            "ci_high": est + 1.959963984540054 * se,
            "n_paths": int(n)}


def write_deflators_csv(deflators: DeflatorSet, path) -> None:
    """One row per (path, node): theta, residual norm, Z, H."""
    scn = deflators.scenarios
    grid = scn.grid
    d = deflators.market_price_of_risk.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["path", "step", "time"]
        header += [f"theta_{j + 1}" for j in range(d)]
        header += ["residual_norm", "density", "deflator"]
        w.writerow(header)
        for i in range(deflators.n_paths):
            gi = scn.path_offset + i
            for k in range(grid.n_steps + 1):
                row = [gi, k, f"{grid.times[k]:.17g}"]
                row += [f"{v:.17g}" for v in deflators.market_price_of_risk[i, k]]
                row += [f"{deflators.residual_norm[i, k]:.17g}",
                        f"{deflators.density[i, k]:.17g}",
                        f"{deflators.deflator[i, k]:.17g}"]
                w.writerow(row)


def write_deflator_diagnostics_json(deflators: DeflatorSet, path,
                                    cap: float | None = None) -> None:
    report = {
        "n_paths": deflators.n_paths,
        "rank_tol": deflators.rank_tol,
        "min_rank": int(deflators.rank.min()),
        "max_rank": int(deflators.rank.max()),
        "min_smallest_retained_singular_value": float(deflators.smallest_singular.min()),
        "max_residual_norm": float(deflators.residual_norm.max()),
        "theta_sq_integral": integrability_diagnostic(deflators, cap=cap),
        "terminal_density_mean": terminal_density_mean(deflators),
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
