"""Post-processing helpers for sweep results: power-law fits and summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.linear_model import LinearRegression


@dataclass
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float

    def predict(self, x: float | np.ndarray) -> np.ndarray:
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerLawFit:
    """Fit |y| = c * x^p by linear regression on log|y| against log x."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if x.size < 2 or x.size != y.size:
        raise ValueError("A power-law fit needs at least two matching points.")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("Power-law fits need strictly positive data.")
    feature = np.log(x).reshape(-1, 1)
    target = np.log(y)
    model = LinearRegression()
    model.fit(feature, target)
    return PowerLawFit(
        exponent=float(model.coef_[0]),
        prefactor=float(np.exp(model.intercept_)),
        r_squared=float(model.score(feature, target)) if x.size > 2 else 1.0,
    )


def convergence_order(
    steps: Sequence[float], values: Sequence[float], reference: float | None = None
) -> float:
    """Order p of values(step) -> limit as step -> 0.

    With a known ``reference`` the errors |value - reference| are fitted.
    Otherwise successive differences are used, which scale with the same
    power when ``steps`` form a geometric sequence.
    """
    steps = np.asarray(steps, dtype=float)
    values = np.asarray(values, dtype=float)
    if reference is not None:
        return fit_power_law(steps, values - reference).exponent
    if steps.size < 3:
        raise ValueError("Estimating an order without a reference needs three or more steps.")
    order = np.argsort(steps)[::-1]
    steps, values = steps[order], values[order]
    return fit_power_law(steps[:-1], np.diff(values)).exponent


def summarize_sweep(frame: pd.DataFrame) -> pd.DataFrame:
    """Per (model, h, chi, finetuned) group: delta_f range and timing."""
    keys = ["model", "h", "chi", "finetuned"]
    grouped = frame.groupby(keys, dropna=False)
    summary = grouped.agg(
        points=("beta", "size"),
        beta_min=("beta", "min"),
        beta_max=("beta", "max"),
        delta_f_max=("delta_f", "max"),
        delta_f_median=("delta_f", "median"),
        total_s_mean=("total_s", "mean"),
        total_s_max=("total_s", "max"),
    )
    return summary.reset_index()


def time_ratio(frame: pd.DataFrame, beta_high: float, beta_low: float) -> float:
    """total_s at the closest grid beta to ``beta_high`` over the one closest to ``beta_low``."""

    def closest(beta: float) -> float:
        index = (frame["beta"] - beta).abs().idxmin()
        return float(frame.loc[index, "total_s"])

    return closest(beta_high) / closest(beta_low)
