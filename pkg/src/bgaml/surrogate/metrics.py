"""Prediction-error metrics. Errors are e = prediction - truth."""

from __future__ import annotations

import numpy as np

METRICS = ("MAE", "RMSE", "MAPE", "R2")
# metrics where a smaller value is better; the search negates these
LOWER_IS_BETTER = {"MAE", "RMSE", "MAPE"}


def evaluate_metrics(predictions, truths, metrics=METRICS) -> dict[str, float]:
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(truths, dtype=float).ravel()
    if len(p) != len(y) or len(y) == 0:
        raise ValueError("predictions and truths must be nonempty and of equal length")
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    e = p - y
    out = {}
    if "MAE" in metrics:
        out["MAE"] = float(np.mean(np.abs(e)))
    if "RMSE" in metrics:
        out["RMSE"] = float(np.sqrt(np.mean(e**2)))
    if "MAPE" in metrics:
        if np.any(y == 0):
            raise ValueError("MAPE is undefined when a truth is zero")
        out["MAPE"] = float(100.0 * np.mean(np.abs(e / y)))
    if "R2" in metrics:
        ss_res = float(np.sum(e**2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot == 0:
            # constant truth: perfect fit scores 1, anything else 0
            out["R2"] = 1.0 if ss_res == 0 else 0.0
        else:
            out["R2"] = 1.0 - ss_res / ss_tot
    return out


def score(metrics: dict[str, float], name: str) -> float:
    """Higher-is-better view of one metric."""
    if name not in METRICS:
        raise ValueError(f"unknown scoring {name!r}; expected one of {METRICS}")
    v = metrics[name]
    return -v if name in LOWER_IS_BETTER else v
