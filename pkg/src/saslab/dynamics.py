"""Breakthrough detection on metric series and alternative training scales.

A break is the sample coordinate maximizing the discrete second difference
[f(t+D) - f(t)] - [f(t) - f(t-D)], with linear imputation when t +/- D falls
between recorded checkpoints. Metrics whose breakthrough is a drop declare
orientation 'drop' and are detected on -f. Checkpoint weight vectors also
induce alternative x-axes: distance from the origin, distance from the
initialization, and cumulative optimization path length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DynamicsError(ValueError):
    pass


@dataclass
class MetricSeries:
    name: str
    coords: np.ndarray
    values: np.ndarray
    kind: str = "step"              # step | origin-distance | init-distance | path-length
    orientation: str = "rise"       # 'rise' or 'drop'

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.coords.shape != self.values.shape or self.coords.ndim != 1:
            raise DynamicsError("coords and values must be matching 1-D arrays")
        if self.coords.size and np.any(np.diff(self.coords) <= 0):
            raise DynamicsError(f"series {self.name!r} coordinates must strictly increase")
        if not np.all(np.isfinite(self.values)):
            raise DynamicsError(f"series {self.name!r} contains non-finite values")
        if self.orientation not in ("rise", "drop"):
            raise DynamicsError(f"unknown orientation {self.orientation!r}")


def impute(series: MetricSeries, t: float) -> float:
    """Exact sample if present, else linear interpolation between neighbors."""
    c, v = series.coords, series.values
    if not c.size or t < c[0] or t > c[-1]:
        raise DynamicsError(f"t={t} outside sampled range [{c[0] if c.size else '-'}, {c[-1] if c.size else '-'}]")
    k = int(np.searchsorted(c, t))
    if k < c.size and c[k] == t:
        return float(v[k])
    lo, hi = k - 1, k
    w = (t - c[lo]) / (c[hi] - c[lo])
    return float(v[lo] + w * (v[hi] - v[lo]))


@dataclass
class BreakReport:
    metric: str
    t_star: float
    delta: float
    magnitude: float                 # oriented second difference at t_star
    f_minus: float                   # imputed f(t*-D), original orientation
    f_center: float
    f_plus: float
    orientation: str
    kind: str
    grid: np.ndarray = field(repr=False)
    second_diffs: np.ndarray = field(repr=False)   # oriented, aligned with grid

    def to_row(self) -> dict:
        return {
            "metric": self.metric,
            "t_star": self.t_star,
            "delta": self.delta,
            "magnitude": self.magnitude,
            "f_minus": self.f_minus,
            "f_center": self.f_center,
            "f_plus": self.f_plus,
            "orientation": self.orientation,
            "coordinate_kind": self.kind,
        }


def default_delta(series: MetricSeries, n_intervals: int = 5) -> float:
    """n checkpoints' worth of coordinate span (median spacing times n)."""
    if series.coords.size < 2:
        raise DynamicsError("series too short for a default delta")
    return float(n_intervals * np.median(np.diff(series.coords)))


def detect_break(
    series: MetricSeries,
    delta: float,
    grid: Sequence[float] | None = None,
    exclude_before: float | None = None,
) -> BreakReport:
    """Argmax of the oriented second difference over the candidate grid.

    The default grid is the recorded coordinates at least ``delta`` from
    either end. Ties resolve to the smallest coordinate. ``exclude_before``
    optionally drops early candidates (e.g. a warmup window).
    """
    if delta <= 0:
        raise DynamicsError("delta must be positive")
    c = series.coords
    if c.size < 2 or c[-1] - c[0] < 2 * delta:
        raise DynamicsError("series span must be at least twice delta")
    if grid is None:
        grid_arr = c[(c >= c[0] + delta) & (c <= c[-1] - delta)]
    else:
        grid_arr = np.asarray(grid, dtype=np.float64)
    if exclude_before is not None:
        grid_arr = grid_arr[grid_arr >= exclude_before]
    if grid_arr.size == 0:
        raise DynamicsError("empty candidate grid")
    sign = 1.0 if series.orientation == "rise" else -1.0
    d2 = np.empty(grid_arr.size)
    for idx, t in enumerate(grid_arr):
        d2[idx] = sign * (impute(series, t + delta) - 2.0 * impute(series, t) + impute(series, t - delta))
    best = int(np.argmax(d2))
    t_star = float(grid_arr[best])
    return BreakReport(
        metric=series.name,
        t_star=t_star,
        delta=float(delta),
        magnitude=float(d2[best]),
        f_minus=impute(series, t_star - delta),
        f_center=impute(series, t_star),
        f_plus=impute(series, t_star + delta),
        orientation=series.orientation,
        kind=series.kind,
        grid=grid_arr,
        second_diffs=d2,
    )


def is_clear_onset(report: BreakReport, factor: float = 3.0) -> bool:
    """A break counts as clear when its magnitude exceeds ``factor`` times
    the median absolute second difference of the series."""
    med = float(np.median(np.abs(report.second_diffs)))
    return report.magnitude > factor * med


def rescale_axis(
    steps: Sequence[int],
    weight_vectors: Iterable[np.ndarray],
    mode: str,
    sqrt_variant: bool = False,
) -> np.ndarray:
    """Map checkpoint steps to an alternative training scale.

    origin-distance: |w_t|; init-distance: |w_t - w_0|; path-length: the sum
    of |w_i - w_{i-1}| over recorded checkpoints up to t (an approximation,
    since only checkpointed weights are seen). ``sqrt_variant`` applies a
    square root to each norm term before use.
    """
    if mode not in ("origin-distance", "init-distance", "path-length"):
        raise DynamicsError(f"unknown rescale mode {mode!r}")
    steps = list(steps)
    if mode in ("init-distance", "path-length") and (not steps or steps[0] != 0):
        raise DynamicsError(f"{mode} needs the step-0 checkpoint first")

    def xf(x: float) -> float:
        return float(np.sqrt(x)) if sqrt_variant else float(x)

    coords: list[float] = []
    w0: np.ndarray | None = None
    prev: np.ndarray | None = None
    total = 0.0
    for k, w in enumerate(weight_vectors):
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if mode == "origin-distance":
            coords.append(xf(np.linalg.norm(w)))
        elif mode == "init-distance":
            if w0 is None:
                w0 = w.copy()
            coords.append(xf(np.linalg.norm(w - w0)))
        else:
            if prev is not None:
                total += xf(np.linalg.norm(w - prev))
            coords.append(total)
            prev = w.copy()
    if len(coords) != len(steps):
        raise DynamicsError("one weight vector per step is required")
    return np.asarray(coords, dtype=np.float64)


def strictly_increasing_filter(coords: np.ndarray, *arrays: np.ndarray):
    """Keep the subsequence where coordinates strictly increase (first wins).

    Rescaled axes can stall when consecutive checkpoints coincide; plots and
    series construction need strict monotonicity.
    """
    keep = [0]
    for i in range(1, len(coords)):
        if coords[i] > coords[keep[-1]]:
            keep.append(i)
    keep_arr = np.asarray(keep, dtype=np.int64)
    out = [coords[keep_arr]] + [np.asarray(a)[keep_arr] for a in arrays]
    return tuple(out)
