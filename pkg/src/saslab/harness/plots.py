"""Plot-data emission: one CSV per figure analogue plus a figure manifest.

Metric-vs-step figures aggregate seeds with bootstrap confidence bands and
carry onset marker columns; rescaled-axis figures are emitted per seed
(their coordinates differ across seeds).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import build_series, weight_vectors
from .running import RunManifest
from .stats import bootstrap_bands
from ..dynamics import rescale_axis, strictly_increasing_filter

DEFAULT_METRICS = (
    "eval_loss", "uas", "continuous_sas", "pair_accuracy", "continuous_pair",
    "pppl", "twonn", "weight_norm", "fisher", "attention_entropy",
)
RESCALE_METRICS = ("eval_loss", "uas", "pair_accuracy")
RESCALE_MODES = ("origin-distance", "init-distance", "path-length")


def _onset_coord(analyses: list[dict], which: str) -> float | None:
    vals = [
        a["onsets"][which]["t_star"]
        for a in analyses
        if a.get("onsets", {}).get(which)
    ]
    return float(np.mean(vals)) if vals else None


def emit_plot_data(
    manifests: Sequence[RunManifest],
    out_dir: Path | str,
    metrics: Sequence[str] = DEFAULT_METRICS,
    n_boot: int = 1000,
) -> dict:
    """Write figure CSVs for a group of same-config runs and return the
    figure manifest (also written as figures.json)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not manifests:
        raise ValueError("no runs to plot")
    hashes = {m.config_hash for m in manifests}
    if len(hashes) > 1:
        raise ValueError("plot groups must share a config")

    per_run_series = [build_series(m) for m in manifests]
    analyses = []
    for m in manifests:
        path = m.run_dir / "analysis" / "analysis.json"
        analyses.append(json.loads(path.read_text()) if path.exists() else {})
    figures: list[dict] = []

    structure_at = _onset_coord(analyses, "structure")
    capabilities_at = _onset_coord(analyses, "capabilities")

    for metric in metrics:
        runs_with = [s[metric] for s in per_run_series if metric in s]
        if not runs_with:
            continue
        coords = runs_with[0].coords
        aligned = [s for s in runs_with if np.array_equal(s.coords, coords)]
        values = np.stack([s.values for s in aligned])
        lo, hi = bootstrap_bands(values, n_boot=n_boot)
        mean = values.mean(axis=0)

        def flag(at: float | None) -> np.ndarray:
            marks = np.zeros(coords.size, dtype=int)
            if at is not None:
                marks[int(np.argmin(np.abs(coords - at)))] = 1
            return marks

        s_flag, c_flag = flag(structure_at), flag(capabilities_at)
        path = out_dir / f"{metric}_vs_step.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean", "lo95", "hi95", "n_seeds",
                        "is_structure_onset", "is_capabilities_onset"])
            for k in range(coords.size):
                w.writerow([coords[k], mean[k], lo[k], hi[k], len(aligned),
                            s_flag[k], c_flag[k]])
        figures.append({
            "figure": f"{metric}_vs_step",
            "csv": path.name,
            "x": "step",
            "y": metric,
            "n_seeds": len(aligned),
            "onsets": {"structure": structure_at, "capabilities": capabilities_at},
        })

    for m, series in zip(manifests, per_run_series):
        for mode in RESCALE_MODES:
            steps, vecs = weight_vectors(m)
            coords = rescale_axis(steps, vecs, mode)
            cols: dict[str, np.ndarray] = {}
            base = None
            for metric in RESCALE_METRICS:
                if metric not in series:
                    continue
                s = series[metric]
                val_at = dict(zip(s.coords.tolist(), s.values.tolist()))
                keep = [k for k, st in enumerate(steps) if float(st) in val_at]
                c, v = strictly_increasing_filter(
                    coords[keep], np.array([val_at[float(steps[k])] for k in keep])
                )
                if base is None or np.array_equal(base, c):
                    base = c
                    cols[metric] = v
            if base is None:
                continue
            path = out_dir / f"rescaled_{mode}_{m.run_dir.name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["coord", *cols])
                for k in range(base.size):
                    w.writerow([base[k], *[cols[c_][k] for c_ in cols]])
            figures.append({
                "figure": f"rescaled_{mode}_{m.run_dir.name}",
                "csv": path.name,
                "x": mode,
                "y": list(cols),
                "seed": m.seed,
            })

    doc = {"figures": figures, "runs": [m.run_dir.name for m in manifests]}
    (out_dir / "figures.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc
