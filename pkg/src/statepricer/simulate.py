"""Scenario simulation: time grid, driver increments, price and bond paths.

Schemes
-------
* ``log-exact-constant``: log-space update with constant coefficients; the
  grid-point distribution is exact at any step count.
* ``euler-log``: Euler in log space with coefficients frozen at the left
  endpoint; prices stay strictly positive.
* ``euler``: arithmetic Euler, P_{k+1} = P_k (1 + b dt + sigma . dW). Gains of
  buy-and-hold positions telescope exactly in this scheme, but positivity is
  not guaranteed; a non-positive price aborts the run.

The bond integrates the rate with the trapezoid rule, B = exp(int r dt), and
the discount is stored as the literal reciprocal 1/B.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SimulationError
from .market import MarketModel
from .rng import normal_increments

_BLOCK = 2048  # fixed path block size; independent of thread count by design


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid 0 = t_0 < t_1 < ... < t_N = horizon."""
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 2:
            raise ConfigError("time grid needs at least two points")
        if t[0] != 0.0:
            raise ConfigError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("time grid must be strictly increasing")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)


def build_time_grid(horizon: float, n_steps: int) -> TimeGrid:
    """Uniform grid with n_steps steps on [0, horizon]."""
    if horizon <= 0 or n_steps < 1:
        raise ConfigError("horizon must be > 0 and n_steps >= 1")
    return TimeGrid(np.linspace(0.0, float(horizon), n_steps + 1))


@dataclass(frozen=True)
class BrownianBatch:
    """Driver increments dW[path, step, driver] for logical paths
    path_offset .. path_offset + n_paths - 1."""
    grid: TimeGrid
    increments: np.ndarray
    seed: int
    path_offset: int = 0

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    @property
    def n_drivers(self) -> int:
        return self.increments.shape[2]


def simulate_brownian(grid: TimeGrid, n_drivers: int, n_paths: int, seed: int,
                      path_offset: int = 0) -> BrownianBatch:
    """Draw driver increments. Path identity is (seed, global path index):
    disjoint offsets glue into one consistent super-batch."""
    z = normal_increments(seed, path_offset, n_paths, grid.n_steps, n_drivers)
    z *= np.sqrt(grid.dt)[None, :, None]
    return BrownianBatch(grid=grid, increments=z, seed=seed,
                         path_offset=path_offset)


@dataclass(frozen=True)
class ScenarioSet:
    """Simulated market scenarios on a shared grid.

    prices: (n_paths, n_nodes, n_assets), strictly positive for log schemes.
    aux:    (n_paths, n_nodes) or None.
    bond:   (n_nodes,) when the rate is deterministic, else (n_paths, n_nodes).
    discount: same shape as bond; stored as the reciprocal 1/bond.
    """
    model: MarketModel
    grid: TimeGrid
    brownian: BrownianBatch
    prices: np.ndarray
    aux: np.ndarray | None
    bond: np.ndarray
    discount: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def n_assets(self) -> int:
        return self.prices.shape[2]

    @property
    def seed(self) -> int:
        return self.brownian.seed

    @property
    def path_offset(self) -> int:
        return self.brownian.path_offset

    def discount_paths(self) -> np.ndarray:
        """Discount broadcast to (n_paths, n_nodes)."""
        n = self.grid.n_steps + 1
        return np.broadcast_to(self.discount, (self.n_paths, n))

    def bond_paths(self) -> np.ndarray:
        n = self.grid.n_steps + 1
        return np.broadcast_to(self.bond, (self.n_paths, n))


def _fail_nonfinite(name: str, values: np.ndarray, path_offset: int) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        raise SimulationError(
            f"non-finite {name} at path {path_offset + int(idx[0])}, "
            f"step {int(idx[1])}")


def _evolve_aux(model: MarketModel, grid: TimeGrid, dW: np.ndarray) -> np.ndarray | None:
    """Euler recursion for the aux channel, clamped at its floor."""
    if model.aux is None:
        return None
    spec = model.aux
    m = dW.shape[0]
    times, dt = grid.times, grid.dt
    aux = np.empty((m, grid.n_steps + 1))
    aux[:, 0] = spec.initial
    a = aux[:, 0].copy()
    for k in range(grid.n_steps):
        drift = np.asarray(spec.drift(times[k], a), dtype=float)
        vol = np.asarray(spec.vol(times[k], a), dtype=float)
        if vol.ndim == 1:
            shock = dW[:, k, :] @ vol
        else:
            shock = (vol * dW[:, k, :]).sum(axis=-1)
        a = np.maximum(a + drift * dt[k] + shock, spec.floor)
        aux[:, k + 1] = a
    return aux


def _volatility_shock(sigma: np.ndarray, dW: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (sigma . dW per asset, row norms squared) for a step panel.

    sigma: (n, d) or broadcastable to (m, N, n, d); dW: (m, N, d).
    """
    if sigma.ndim == 2:
        return dW @ sigma.T, (sigma ** 2).sum(axis=-1)
    full = np.broadcast_to(sigma, dW.shape[:2] + sigma.shape[-2:])
    shock = np.einsum("mknd,mkd->mkn", full, dW)
    qvar = (full ** 2).sum(axis=-1)
    return shock, qvar


def _evolve_prices(model: MarketModel, grid: TimeGrid, dW: np.ndarray,
                   aux: np.ndarray | None) -> np.ndarray:
    m, N = dW.shape[0], grid.n_steps
    n = model.n_assets
    times, dt = grid.times, grid.dt
    p0 = model.initial_prices

    if not model.price_feedback:
        # coefficients never read prices: evaluate left-endpoint panels in one go
        t_left = times[:-1]
        aux_left = aux[:, :-1] if aux is not None else None
        b = model.drift(t_left, None, aux_left)
        sigma = model.volatility(t_left, None, aux_left)
        shock, qvar = _volatility_shock(sigma, dW)
        if model.scheme == "euler":
            growth = 1.0 + b * dt[:, None] + shock
            prices = np.empty((m, N + 1, n))
            prices[:, 0] = p0
            prices[:, 1:] = p0 * np.cumprod(growth, axis=1)
        else:
            dlog = (b - 0.5 * qvar) * dt[:, None] + shock
            lnp = np.empty((m, N + 1, n))
            lnp[:, 0] = np.log(p0)
            lnp[:, 1:] = np.log(p0) + np.cumsum(dlog, axis=1)
            prices = np.exp(lnp)
        return prices

    # price feedback: step recursion with coefficients frozen at the left node
    prices = np.empty((m, N + 1, n))
    prices[:, 0] = p0
    p = np.broadcast_to(p0, (m, n)).copy()
    for k in range(N):
        a_k = aux[:, k] if aux is not None else None
        b = model.drift(times[k], p, a_k)
        sigma = model.volatility(times[k], p, a_k)
        if sigma.ndim == 2:
            shock = dW[:, k, :] @ sigma.T
        else:
            sig = np.broadcast_to(sigma, (m, n, dW.shape[2]))
            shock = np.einsum("mnd,md->mn", sig, dW[:, k, :])
        qvar = (sigma ** 2).sum(axis=-1)
        if model.scheme == "euler":
            p = p * (1.0 + b * dt[k] + shock)
        else:
            p = p * np.exp((b - 0.5 * qvar) * dt[k] + shock)
        prices[:, k + 1] = p
    return prices


def _rate_panel(model: MarketModel, grid: TimeGrid, prices: np.ndarray | None,
                aux: np.ndarray | None) -> np.ndarray:
    """Rate at every grid node; (n_nodes,) if deterministic else (m, n_nodes)."""
    n_nodes = grid.n_steps + 1
    if not model.rate.state_dependent:
        r = model.rate(grid.times, None, None)
        return np.broadcast_to(r, (n_nodes,)).astype(float)
    r = model.rate(grid.times, prices, aux)
    m = prices.shape[0] if prices is not None else aux.shape[0]
    return np.broadcast_to(r, (m, n_nodes)).astype(float)


def bond_from_rate(rate_values: np.ndarray, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid-integrated bond and its literal reciprocal discount."""
    r = np.asarray(rate_values, dtype=float)
    integral = np.zeros(r.shape)
    increments = 0.5 * (r[..., :-1] + r[..., 1:]) * grid.dt
    integral[..., 1:] = np.cumsum(increments, axis=-1)
    bond = np.exp(integral)
    return bond, 1.0 / bond


def _simulate_block(model: MarketModel, grid: TimeGrid, seed: int,
                    path_offset: int, n_paths: int) -> tuple:
    batch = simulate_brownian(grid, model.n_drivers, n_paths, seed, path_offset)
    dW = batch.increments
    aux = _evolve_aux(model, grid, dW)
    prices = _evolve_prices(model, grid, dW, aux)
    return dW, aux, prices


def simulate_market(model: MarketModel, grid: TimeGrid, n_paths: int, seed: int,
                    path_offset: int = 0, threads: int = 1) -> ScenarioSet:
    """Simulate scenarios for ``n_paths`` logical paths starting at
    ``path_offset``. Output is independent of ``threads``."""
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    N, n, d = grid.n_steps, model.n_assets, model.n_drivers

    dW = np.empty((n_paths, N, d))
    prices = np.empty((n_paths, N + 1, n))
    aux = np.empty((n_paths, N + 1)) if model.aux is not None else None

    spans = [(lo, min(lo + _BLOCK, n_paths)) for lo in range(0, n_paths, _BLOCK)]

    def work(span):
        lo, hi = span
        blk_dW, blk_aux, blk_prices = _simulate_block(
            model, grid, seed, path_offset + lo, hi - lo)
        dW[lo:hi] = blk_dW
        prices[lo:hi] = blk_prices
        if aux is not None:
            aux[lo:hi] = blk_aux

    if threads == 1 or len(spans) == 1:
        for span in spans:
            work(span)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, spans))

    _fail_nonfinite("price", prices, path_offset)
    if np.any(prices <= 0):
        idx = np.argwhere(prices <= 0)[0]
        raise SimulationError(
            f"non-positive price at path {path_offset + int(idx[0])}, "
            f"step {int(idx[1])} (scheme {model.scheme!r})")

    r = _rate_panel(model, grid, prices, aux)
    bond, discount = bond_from_rate(r, grid)

    batch = BrownianBatch(grid=grid, increments=dW, seed=seed,
                          path_offset=path_offset)
    return ScenarioSet(model=model, grid=grid, brownian=batch, prices=prices,
                       aux=aux, bond=bond, discount=discount)


def write_scenarios_csv(scenarios: ScenarioSet, path) -> None:
    """One row per (path, node): indices, time, prices, aux, bond, discount."""
    grid = scenarios.grid
    n, n_nodes = scenarios.n_assets, grid.n_steps + 1
    bond = scenarios.bond_paths()
    disc = scenarios.discount_paths()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["path", "step", "time"]
        header += [f"price_{i + 1}" for i in range(n)]
        if scenarios.aux is not None:
            header.append("aux")
        header += ["bond", "discount"]
        w.writerow(header)
        for i in range(scenarios.n_paths):
            gi = scenarios.path_offset + i
            for k in range(n_nodes):
                row = [gi, k, f"{grid.times[k]:.17g}"]
                row += [f"{v:.17g}" for v in scenarios.prices[i, k]]
                if scenarios.aux is not None:
                    row.append(f"{scenarios.aux[i, k]:.17g}")
                row += [f"{bond[i, k]:.17g}", f"{disc[i, k]:.17g}"]
                w.writerow(row)
