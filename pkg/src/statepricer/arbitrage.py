"""State-arbitrage detection and the explicit exploiting portfolio.

A market is free of state arbitrage on the grid horizon exactly when the
excess return lies in the range of the volatility at every (path, node),
i.e. the kernel residual p = (b + delta - r 1) - sigma theta vanishes.
When it does not, holding the unit direction p/|p| earns the locally
riskless rate |p| on top of financing: sigma'p = 0 kills the driver
exposure and the deflated gain is nonnegative, positive with positive
probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .deflator import DeflatorSet
from .portfolio import PortfolioProcess, WealthPaths, wealth_paths

DEFAULT_DETECTION_TOL = 1e-8


@dataclass(frozen=True)
class ArbitrageReport:
    is_free: bool
    max_residual_norm: float
    argmax_path: int
    argmax_step: int
    tolerance: float
    n_paths: int
    n_nodes: int

    def to_dict(self) -> dict:
        return {"is_free": self.is_free,
                "max_residual_norm": self.max_residual_norm,
                "argmax_path": self.argmax_path,
                "argmax_step": self.argmax_step,
                "tolerance": self.tolerance,
                "n_paths": self.n_paths,
                "n_nodes": self.n_nodes}


def detect_state_arbitrage(deflators: DeflatorSet,
                           tol: float = DEFAULT_DETECTION_TOL) -> ArbitrageReport:
    """Scan the kernel residual over every (path, node) slice."""
    norms = deflators.residual_norm
    flat = int(np.argmax(norms))
    i, k = divmod(flat, norms.shape[1])
    max_norm = float(norms[i, k])
    return ArbitrageReport(
        is_free=bool(max_norm <= tol), max_residual_norm=max_norm,
        argmax_path=int(deflators.scenarios.path_offset + i), argmax_step=int(k),
        tolerance=float(tol), n_paths=int(norms.shape[0]),
        n_nodes=int(norms.shape[1]))


def construct_arbitrage_portfolio(deflators: DeflatorSet,
                                  tol: float = DEFAULT_DETECTION_TOL) -> PortfolioProcess:
    """Unit kernel-residual direction pi = p/|p| wherever |p| > tol, zero
    elsewhere. In a free market this is the zero portfolio."""
    p = np.asarray(deflators.residual[:, :-1, :], dtype=float)
    norms = deflators.residual_norm[:, :-1]
    scale = np.where(norms > tol, norms, np.inf)
    return PortfolioProcess(p / scale[..., None])


def simulate_gain(portfolio: PortfolioProcess, deflators: DeflatorSet) -> WealthPaths:
    """Gains-from-trade of a costless position: wealth from zero initial
    capital with no income (identical accumulation, by construction)."""
    return wealth_paths(0.0, portfolio, deflators, income=None)


def write_arbitrage_json(report: ArbitrageReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
