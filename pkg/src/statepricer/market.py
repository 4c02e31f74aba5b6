"""Market model: rate, drift, dividend and volatility coefficient fields.

Coefficients are callables ``f(t, prices, aux)`` that must broadcast over
leading batch dimensions. The engine calls them two ways:

* per step: ``t`` scalar, ``prices`` of shape (n_paths, n_assets), ``aux``
  of shape (n_paths,) or None;
* per panel: ``t`` of shape (n_nodes,), ``prices`` of shape
  (n_paths, n_nodes, n_assets), ``aux`` of shape (n_paths, n_nodes).

Return shapes, broadcastable against the batch shape B:

* rate: B
* drift, dividend: B + (n_assets,)
* volatility: B + (n_assets, n_drivers)

The dependence flags let the engine skip per-step re-evaluation when a
coefficient is constant or a function of time only; they must be truthful
for custom callables or results will silently use stale values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError

SCHEMES = ("log-exact-constant", "euler-log", "euler")


@dataclass(frozen=True)
class Coefficient:
    fn: Callable
    depends_on_prices: bool = True
    depends_on_aux: bool = True
    time_dependent: bool = True

    def __call__(self, t, prices, aux):
        return np.asarray(self.fn(t, prices, aux), dtype=float)

    @property
    def state_dependent(self) -> bool:
        return self.depends_on_prices or self.depends_on_aux

    @property
    def is_constant(self) -> bool:
        return not (self.state_dependent or self.time_dependent)


def constant_coefficient(value) -> Coefficient:
    """Coefficient fixed across time, paths and state."""
    arr = np.asarray(value, dtype=float)
    return Coefficient(lambda t, prices, aux: arr,
                       depends_on_prices=False, depends_on_aux=False,
                       time_dependent=False)


def piecewise_constant_coefficient(breakpoints, values) -> Coefficient:
    """Right-continuous step function of time.

    ``values[i]`` applies on [breakpoints[i], breakpoints[i+1]); the last
    value extends to the horizon. breakpoints[0] must be 0.
    """
    bp = np.asarray(breakpoints, dtype=float)
    vals = np.asarray(values, dtype=float)
    if bp.ndim != 1 or bp.size == 0 or bp[0] != 0.0:
        raise ConfigError("breakpoints must be a 1-d array starting at 0")
    if np.any(np.diff(bp) <= 0):
        raise ConfigError("breakpoints must be strictly increasing")
    if vals.shape[0] != bp.shape[0]:
        raise ConfigError("need one value row per breakpoint")

    def fn(t, prices, aux):
        idx = np.searchsorted(bp, np.asarray(t, dtype=float), side="right") - 1
        return vals[np.maximum(idx, 0)]

    return Coefficient(fn, depends_on_prices=False, depends_on_aux=False,
                       time_dependent=True)


@dataclass(frozen=True)
class AuxState:
    """Optional scalar state channel evolved with the same driver increments.

    Euler recursion: A_{k+1} = A_k + drift(t_k, A_k) dt + vol(t_k, A_k)' dW_k,
    clamped below at ``floor`` (positivity guard for reciprocal drifts).
    """
    initial: float
    drift: Callable  # (t, aux) -> batch-shaped array
    vol: Callable    # (t, aux) -> batch + (n_drivers,)
    floor: float = 1e-12


def bessel_radius_aux(initial: float = 1.0, driver: int = 0,
                      n_drivers: int = 1, floor: float = 1e-12) -> AuxState:
    """Three-dimensional Bessel radius driven by one scalar driver:
    dA = (1/A) dt + dW_driver."""
    e = np.zeros(n_drivers)
    e[driver] = 1.0
    return AuxState(initial=float(initial),
                    drift=lambda t, a: 1.0 / np.asarray(a, dtype=float),
                    vol=lambda t, a: e,
                    floor=float(floor))


@dataclass(frozen=True)
class MarketModel:
    """Ito market: bond dB = B r dt and stocks dP_i = P_i (b_i dt + sigma_i . dW).

    ``dividend`` is the proportional payout rate delta; it enters portfolio
    excess returns (b + delta - r 1) but not the price paths themselves.
    """
    n_assets: int
    n_drivers: int
    initial_prices: np.ndarray
    rate: Coefficient
    drift: Coefficient
    dividend: Coefficient
    volatility: Coefficient
    scheme: str = "euler-log"
    aux: AuxState | None = None

    def __post_init__(self):
        object.__setattr__(self, "initial_prices",
                           np.atleast_1d(np.asarray(self.initial_prices, dtype=float)))
        self.validate()

    def validate(self) -> None:
        if self.n_assets < 1 or self.n_drivers < 1:
            raise ConfigError("need at least one asset and one driver")
        if self.initial_prices.shape != (self.n_assets,):
            raise ConfigError(
                f"initial_prices must have shape ({self.n_assets},), "
                f"got {self.initial_prices.shape}")
        if np.any(self.initial_prices <= 0) or not np.all(np.isfinite(self.initial_prices)):
            raise ConfigError("initial prices must be finite and > 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.scheme == "log-exact-constant":
            for name in ("rate", "drift", "dividend", "volatility"):
                if not getattr(self, name).is_constant:
                    raise ConfigError(
                        f"scheme 'log-exact-constant' requires constant "
                        f"coefficients; {name} is not")
        # probe coefficient output shapes at t = 0
        p0 = np.broadcast_to(self.initial_prices, (1, self.n_assets))
        a0 = np.zeros(1) + (self.aux.initial if self.aux is not None else 0.0)
        checks = (("rate", self.rate, (1,)),
                  ("drift", self.drift, (1, self.n_assets)),
                  ("dividend", self.dividend, (1, self.n_assets)),
                  ("volatility", self.volatility, (1, self.n_assets, self.n_drivers)))
        for name, coeff, target in checks:
            out = coeff(0.0, p0, a0)
            try:
                np.broadcast_shapes(out.shape, target)
            except ValueError:
                raise ConfigError(
                    f"{name} coefficient returned shape {out.shape}, not "
                    f"broadcastable to {target}") from None

    @property
    def state_dependent(self) -> bool:
        return any(getattr(self, name).state_dependent
                   for name in ("rate", "drift", "dividend", "volatility"))

    @property
    def price_feedback(self) -> bool:
        """True when any coefficient reads the price paths."""
        return any(getattr(self, name).depends_on_prices
                   for name in ("rate", "drift", "dividend", "volatility"))


def _as_coefficient(value) -> Coefficient:
    if isinstance(value, Coefficient):
        return value
    if callable(value):
        return Coefficient(value)
    return constant_coefficient(value)


def single_asset_model(rate, drift, volatility, dividend=0.0, *,
                       initial_price: float = 100.0, n_drivers: int | None = None,
                       scheme: str = "log-exact-constant",
                       aux: AuxState | None = None) -> MarketModel:
    """One-stock market. ``volatility`` may be a scalar or a driver row; extra
    drivers beyond the row's length load zero volatility."""
    row = np.atleast_1d(np.asarray(volatility, dtype=float))
    d = n_drivers if n_drivers is not None else row.size
    if row.size < d:
        row = np.concatenate([row, np.zeros(d - row.size)])
    elif row.size > d:
        raise ConfigError("volatility row longer than n_drivers")
    return MarketModel(
        n_assets=1, n_drivers=d,
        initial_prices=np.array([initial_price], dtype=float),
        rate=_as_coefficient(rate),
        drift=_as_coefficient(np.atleast_1d(drift)),
        dividend=_as_coefficient(np.atleast_1d(dividend)),
        volatility=_as_coefficient(row.reshape(1, d)),
        scheme=scheme, aux=aux)


def black_scholes_model(rate: float = 0.05, volatility: float = 0.2,
                        drift: float | None = None, dividend: float = 0.0,
                        initial_price: float = 100.0, *, n_drivers: int = 1,
                        scheme: str = "log-exact-constant") -> MarketModel:
    """Constant-coefficient single-asset market. With drift b = r (the
    default) the market price of risk vanishes; any other b is re-weighted
    by the deflator and leaves claim values unchanged."""
    b = rate if drift is None else drift
    return single_asset_model(rate, b, volatility, dividend,
                              initial_price=initial_price, n_drivers=n_drivers,
                              scheme=scheme)


def bessel_deflator_demo_model(volatility: float = 0.2, rate: float = 0.0,
                               initial_price: float = 100.0,
                               initial_radius: float = 1.0,
                               floor: float = 1e-12) -> MarketModel:
    """Single-asset market whose market price of risk is 1/A for a Bessel(3)
    radius A sharing the stock's driver.

    The deflator's martingale part then tracks A(0)/A(t) pathwise, a strict
    local martingale: E Z(T) = 2 Phi(A(0)/sqrt(T)) - 1 < 1 for A(0) = 1.
    Excess return b - r = volatility / A keeps the market arbitrage-free.
    """
    aux = bessel_radius_aux(initial=initial_radius, floor=floor)
    rate_c = constant_coefficient(rate)
    drift = Coefficient(
        lambda t, prices, a: rate + volatility / np.asarray(a, dtype=float)[..., None],
        depends_on_prices=False, depends_on_aux=True, time_dependent=False)
    return MarketModel(
        n_assets=1, n_drivers=1,
        initial_prices=np.array([initial_price], dtype=float),
        rate=rate_c, drift=drift,
        dividend=constant_coefficient(np.zeros(1)),
        volatility=constant_coefficient(np.array([[volatility]])),
        scheme="euler-log", aux=aux)
