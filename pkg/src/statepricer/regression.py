"""Cross-sectional regression estimators of conditional expectations.

Targets observed per path are regressed on polynomial functions of the
Markov state (prices plus the aux channel) at the conditioning node. The
fitted value is the estimate of the conditional expectation given that
node's information. Columns are standardized per fit; degenerate columns
(no cross-sectional variation, e.g. at time zero) drop to the intercept.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations_with_replacement

import numpy as np

from .errors import EstimatorError
from .simulate import ScenarioSet

DEFAULT_DEGREE = 4


def polynomial_design(states: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of total degree <= degree over standardized state columns.

    states: (n_rows, n_vars). Returns (n_rows, n_terms) including the
    intercept. Constant columns are standardized to zero, so their
    monomials merge into the intercept under least squares.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    mean = states.mean(axis=0)
    std = states.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = (states - mean) / std
    cols = [np.ones(states.shape[0])]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(states.shape[1]), deg):
            term = np.ones(states.shape[0])
            for j in combo:
                term = term * z[:, j]
            cols.append(term)
    return np.column_stack(cols)


def fit_conditional_mean(states: np.ndarray, targets: np.ndarray,
                         degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """Least-squares fit of targets on the polynomial design; returns the
    fitted values. Falls back to the plain mean when the cross-section is
    too small to support the basis."""
    targets = np.asarray(targets, dtype=float)
    n = targets.shape[0]
    if n == 0:
        raise EstimatorError("cannot fit a conditional mean on zero paths")
    design = polynomial_design(states, degree)
    if n <= design.shape[1]:
        return np.full(n, targets.mean())
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return design @ coef


class RegressionConditional:
    """Conditional-expectation estimator backed by scenario states.

    cond_exp(step, mask, targets) fits on the masked cross-section only and
    returns fitted values for those paths, in mask order.
    """

    def __init__(self, scenarios: ScenarioSet, degree: int = DEFAULT_DEGREE):
        self.scenarios = scenarios
        self.degree = int(degree)

    def state_matrix(self, step: int) -> np.ndarray:
        prices = self.scenarios.prices[:, step, :]
        if self.scenarios.aux is not None:
            return np.column_stack([prices, self.scenarios.aux[:, step]])
        return prices

    def cond_exp(self, step: int, mask: np.ndarray, targets: np.ndarray) -> np.ndarray:
        states = self.state_matrix(step)[mask]
        return fit_conditional_mean(states, targets, self.degree)


class PrefixExactConditional:
    """Exact conditional expectations on an enumerated path ensemble.

    Paths sharing the same driver-move prefix up to the conditioning step
    carry identical information, so the conditional expectation is the
    weight-averaged target within each prefix group. Works with Fraction
    weights and targets for exact arithmetic.
    """

    def __init__(self, moves: np.ndarray, weights: np.ndarray):
        self.moves = np.asarray(moves)
        self.weights = weights

    def cond_exp(self, step: int, mask: np.ndarray, targets: np.ndarray):
        idx = np.flatnonzero(mask)
        groups: dict[tuple, list[int]] = {}
        for local, path in enumerate(idx):
            key = tuple(self.moves[path, :step])
            groups.setdefault(key, []).append(local)
        out = np.empty(len(idx), dtype=object)
        for members in groups.values():
            w_sum = sum(self.weights[idx[j]] for j in members)
            if w_sum == 0:
                raise EstimatorError("zero-probability prefix group")
            avg = sum(self.weights[idx[j]] * targets[j] for j in members) / w_sum
            for j in members:
                out[j] = avg
        if not isinstance(out[0], Fraction):
            return out.astype(float)
        return out
