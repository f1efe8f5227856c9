"""Central-difference gradient oracle, kept independent of the tape."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def finite_diff_grad(
    f: Callable[[Mapping[str, Tensor]], float],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    coords: Mapping[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Estimate d f / d params by central differences.

    ``f`` is re-evaluated with single coordinates perturbed in place (and
    restored). When ``coords`` maps a parameter name to flat indices, only
    those coordinates are probed and the result array aligns with them;
    otherwise every coordinate is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if coords is not None:
            idx = np.asarray(coords.get(name, []), dtype=np.int64)
        else:
            idx = np.arange(flat.size)
        est = np.empty(idx.size, dtype=np.float64)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f(params))
            flat[i] = orig - step
            f_minus = float(f(params))
            flat[i] = orig
            est[k] = (f_plus - f_minus) / (2.0 * step)
        out[name] = est
    return out


def max_relative_error(
    analytic: Mapping[str, np.ndarray],
    estimated: Mapping[str, np.ndarray],
    floor: float = 1e-6,
) -> float:
    """Largest |a - e| / max(|e|, floor) across all shared coordinates."""
    worst = 0.0
    for name, e in estimated.items():
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        e = np.asarray(e, dtype=np.float64).reshape(-1)
        denom = np.maximum(np.abs(e), floor)
        worst = max(worst, float(np.max(np.abs(a - e) / denom)) if e.size else 0.0)
    return worst
