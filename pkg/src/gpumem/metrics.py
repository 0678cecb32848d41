"""The five regression metrics reported in the benchmark tables."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAPE_EPS = 1e-8


@dataclass(frozen=True)
class MetricsReport:
    """RMSE is derived from MSE on access, never stored separately.

    ``r2`` is None when the true values have zero variance.
    """

    name: str
    n: int
    mse: float
    mae: float
    mape_percent: float
    r2: float | None
    mape_excluded: int = 0

    @property
    def rmse(self) -> float:
        return math.sqrt(self.mse)

    def row(self) -> dict:
        return {"model": self.name, "mse": self.mse, "rmse": self.rmse, "mae": self.mae,
                "mape": self.mape_percent, "r2": self.r2}


def compute_metrics(y_true, y_pred, name: str = "model") -> MetricsReport:
    y = np.asarray(y_true, dtype=np.float64).ravel()
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.size == 0 or y.shape != p.shape:
        raise ValueError(f"need equal non-empty inputs, got {y.shape} and {p.shape}")
    r = y - p
    mse = float(np.mean(r * r))
    mae = float(np.mean(np.abs(r)))
    used = np.abs(y) > MAPE_EPS
    mape = float(100.0 * np.mean(np.abs(r[used]) / np.abs(y[used]))) if used.any() else math.nan
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(r * r)) / ss_tot if ss_tot > 0 else None
    return MetricsReport(name, int(y.size), mse, mae, mape, r2, int((~used).sum()))
