"""Reconstruction and traffic metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class RoundMetrics:
    round: int
    snr_db: float
    err_l2: float
    bound: float | None
    cost: int | None
    feasible: bool


def snr(d, d_hat) -> float:
    """``10 log10(sum d^2 / sum (d - d_hat)^2)`` in dB; ``inf`` for a perfect match."""
    d = np.asarray(d, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    p_signal = float(np.sum(d**2))
    if p_signal == 0.0:
        raise ValueError("zero signal power")
    p_noise = float(np.sum((d - d_hat) ** 2))
    if p_noise == 0.0:
        return math.inf
    return 10.0 * math.log10(p_signal / p_noise)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        return math.nan
    return float(a @ b) / den


def _rows(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "readings", trace), dtype=float)


def round_correlation(trace) -> np.ndarray:
    """Pearson r between rounds ``t`` and ``t-1`` for t = 1..T-1.

    Entries are NaN where either round has zero variance.
    """
    r = _rows(trace)
    if r.shape[0] < 2:
        raise ValueError("need at least two rounds")
    return np.array([_pearson(r[t], r[t - 1]) for t in range(1, r.shape[0])])


def increment_correlation(trace) -> np.ndarray:
    """Pearson r between ``d(t-1)`` and the increment ``d(t) - d(t-1)``."""
    r = _rows(trace)
    if r.shape[0] < 2:
        raise ValueError("need at least two rounds")
    return np.array([_pearson(r[t - 1], r[t] - r[t - 1]) for t in range(1, r.shape[0])])


def summarize_correlation(values: np.ndarray) -> dict:
    v = np.asarray(values, dtype=float)
    defined = v[np.isfinite(v)]
    out = {"count": int(v.size), "undefined": int(v.size - defined.size)}
    if defined.size:
        out.update(
            mean=float(defined.mean()),
            median=float(np.median(defined)),
            min=float(defined.min()),
        )
    return out


def boxplot_stats(values) -> dict:
    """Five-number summary with linearly interpolated quartiles."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("boxplot of empty sample")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return {
        "min": float(v.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(v.max()),
    }


def error_trend(errors) -> float:
    """Least-squares slope of a per-round error series, in error units per round."""
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        return 0.0
    t = np.arange(e.size, dtype=float)
    return float(np.polyfit(t, e, 1)[0])
