"""Error aggregation: quartiles and recall-versus-threshold curves.

Failed registrations enter as ``inf`` errors, so they lower every recall
value and ``recall(inf) = 1 - failure_rate``.
"""
from __future__ import annotations

import numpy as np


def quartiles(errors) -> tuple[float, float, float]:
    """``(Q1, median, Q3)`` with linear interpolation between order statistics."""
    e = np.sort(np.asarray(errors, dtype=float).reshape(-1))
    if e.size == 0:
        raise ValueError("quartiles of an empty set")
    return tuple(_quantile(e, p) for p in (0.25, 0.5, 0.75))


def _quantile(e: np.ndarray, p: float) -> float:
    # written out instead of np.percentile so inf - inf never produces NaN
    pos = p * (e.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, e.size - 1)
    a, b = float(e[lo]), float(e[hi])
    frac = pos - lo
    if frac == 0.0 or a == b:
        return a
    return a + (b - a) * frac


def recall_curve(errors, thresholds) -> np.ndarray:
    """Fraction of errors strictly below each threshold."""
    e = np.sort(np.asarray(errors, dtype=float))
    th = np.asarray(thresholds, dtype=float)
    if e.size == 0:
        return np.zeros(th.shape)
    return np.searchsorted(e, th, side="left") / e.size


def summarize(errors, thresholds) -> dict:
    e = np.asarray(errors, dtype=float)
    ok = np.isfinite(e)
    d = {"count": int(e.size), "failures": int((~ok).sum())}
    d["q1"], d["median"], d["q3"] = quartiles(e) if e.size else (np.nan,) * 3
    d["recall"] = [[float(t), float(r)] for t, r in zip(thresholds, recall_curve(e, thresholds))]
    return d
