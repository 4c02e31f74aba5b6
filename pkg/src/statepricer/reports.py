"""Valuation report container shared by the European and American pricers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ValuationReport:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    n_paths: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "std_error": self.std_error,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "n_paths": self.n_paths, "diagnostics": self.diagnostics}


def report_from_samples(samples: np.ndarray, diagnostics: dict | None = None) -> ValuationReport:
    """Mean, standard error and normal 95% interval of per-path samples."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ValuationReport(estimate=est, std_error=se,
                           ci_low=est - 1.959963984540054 * se,
                           ci_high=est + 1.959963984540054 * se,
                           n_paths=int(n),
                           diagnostics=dict(diagnostics or {}))


def write_report_json(report: ValuationReport, path, extra: dict | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
