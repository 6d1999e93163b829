"""Accuracy and uncertainty-quality metrics for probabilistic predictions."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatch


def _arrays(mean, std, truth):
    mean = np.asarray(mean, dtype=float).reshape(-1)
    std = np.asarray(std, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if not (mean.size == std.size == truth.size):
        raise DimensionMismatch("mean, std and truth must be aligned")
    if mean.size == 0:
        raise ValueError("no predictions to assess")
    return mean, std, truth


def calibration_curve(mean, std, truth, n_bins: int = 100):
    """Expected vs observed proportions of residuals below each predicted quantile."""
    mean, std, truth = _arrays(mean, std, truth)
    expected = np.linspace(0.0, 1.0, n_bins + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (truth - mean) / std
    z = np.where(std > 0, z, np.where(truth > mean, np.inf, np.where(truth < mean, -np.inf, 0.0)))
    u = ndtr(z)
    observed = np.array([np.mean(u <= p) for p in expected])
    return expected, observed


def miscalibration_area(mean, std, truth, n_bins: int = 100) -> float:
    """Area between the calibration curve and the diagonal (trapezoid rule)."""
    expected, observed = calibration_curve(mean, std, truth, n_bins)
    return float(np.trapezoid(np.abs(observed - expected), expected))


def uncertainty_metrics(mean, std, truth) -> dict:
    """RMSE, MAE, median AE, MARPD, miscalibration area, sharpness and C_v.

    Sharpness is ``sqrt(mean(std^2))``. ``C_v`` is the sample coefficient of
    variation of the predicted standard deviations. MARPD is
    ``100 * mean(|m - t| / ((|m| + |t|) / 2))``, counting 0/0 as 0.
    """
    mean, std, truth = _arrays(mean, std, truth)
    err = mean - truth
    ae = np.abs(err)
    denom = 0.5 * (np.abs(mean) + np.abs(truth))
    with np.errstate(divide="ignore", invalid="ignore"):
        rpd = np.where(denom > 0, ae / denom, 0.0)
    n = std.size
    mu_s = std.mean()
    if n > 1 and mu_s > 0 and np.ptp(std) > 0:
        cv = float(np.sqrt(np.sum((std - mu_s) ** 2) / (n - 1)) / mu_s)
    else:
        cv = 0.0
    return {
        "n": int(n),
        "rmse": float(np.sqrt(np.mean(err * err))),
        "mae": float(ae.mean()),
        "median_ae": float(np.median(ae)),
        "marpd": float(100.0 * rpd.mean()),
        "miscalibration_area": miscalibration_area(mean, std, truth),
        "sharpness": float(np.sqrt(np.mean(std * std))),
        "cv": cv,
    }


def _read_columns(path) -> dict:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: expected a header row and data rows")
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return {h: data[:, i] for i, h in enumerate(header)}


def diagnose_files(pred_path, truth_path) -> tuple[dict, dict]:
    """Read ``mean,std`` predictions and a ``truth`` column (or the first column).

    Returns the metric report and the calibration-curve columns for plotting.
    """
    pred = _read_columns(pred_path)
    truth_cols = _read_columns(truth_path)
    if "mean" not in pred or "std" not in pred:
        raise ValueError(f"{pred_path}: needs 'mean' and 'std' columns")
    truth = truth_cols.get("truth", next(iter(truth_cols.values())))
    if truth.size != pred["mean"].size:
        raise DimensionMismatch(f"{pred['mean'].size} predictions vs {truth.size} truths")
    report = uncertainty_metrics(pred["mean"], pred["std"], truth)
    expected, observed = calibration_curve(pred["mean"], pred["std"], truth)
    return report, {"expected": expected, "observed": observed}
