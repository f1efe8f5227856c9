"""Cross-seed statistics: metric correlation and bootstrap bands."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .analysis import metric_table
from .running import RunManifest


def correlate_across_seeds(
    manifests: Sequence[RunManifest],
    metric_a: str,
    metric_b: str,
    step: int,
) -> dict:
    """Pearson r and the R^2 of a univariate least-squares fit of B on A
    across runs, plus the scatter points.

    A constant metric makes the correlation undefined; it is reported as 0
    with ``degenerate`` set. (For a univariate in-sample fit R^2 equals r^2;
    out-of-sample conventions can go negative and are not replicated here.)
    """
    if len(manifests) < 3:
        raise ValueError("need at least 3 runs to correlate")
    xs, ys, seeds = [], [], []
    for m in manifests:
        table = metric_table(m)
        if step not in table or metric_a not in table[step] or metric_b not in table[step]:
            raise ValueError(f"run {m.run_dir.name} lacks {metric_a}/{metric_b} at step {step}")
        xs.append(table[step][metric_a])
        ys.append(table[step][metric_b])
        seeds.append(m.seed)
    x = np.asarray(xs)
    y = np.asarray(ys)
    degenerate = bool(np.ptp(x) == 0 or np.ptp(y) == 0)
    if degenerate:
        r = 0.0
        r2 = 0.0
    else:
        r = float(np.corrcoef(x, y)[0, 1])
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        r2 = float(1.0 - resid.var() / y.var())
    return {
        "metric_a": metric_a,
        "metric_b": metric_b,
        "step": step,
        "n": len(xs),
        "pearson_r": r,
        "r_squared": r2,
        "degenerate": degenerate,
        "points": [{"seed": s, "a": float(a), "b": float(b)} for s, a, b in zip(seeds, xs, ys)],
    }


def bootstrap_bands(
    values: np.ndarray, n_boot: int = 1000, seed: int = 0, level: float = 0.95
) -> tuple[np.ndarray, np.ndarray]:
    """Nonparametric bootstrap CI of the mean over axis 0 (seeds).

    With a single seed the bands collapse to the point estimate.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n == 1:
        return values[0].copy(), values[0].copy()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_boot, n))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(means, alpha, axis=0)
    hi = np.quantile(means, 1.0 - alpha, axis=0)
    return lo, hi
