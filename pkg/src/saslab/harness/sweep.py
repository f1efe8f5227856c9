"""Multistage suppression sweeps: suppress attention-to-parse early, release
at a preset step, and compare outcomes at a fixed step and at a fixed offset
after release.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Sequence


from .analysis import analyze_run, compute_checkpoint_metrics, evaluate_checkpoint, metric_table
from .config import ExperimentConfig, RegularizerSettings
from .running import RunManifest, load_run_data, model_for, run_experiment


def release_config(
    base: ExperimentConfig,
    release_step: int,
    lam: float,
    eval_step: int,
    offset_steps: int,
) -> ExperimentConfig:
    """Suppression until ``release_step`` then release; extra checkpoints at
    the two evaluation points. Release at 0 means the coefficient never
    applies; release at total_steps means it never releases."""
    stages = [(0, lam), (release_step, 0.0)] if release_step > 0 else [(0, 0.0)]
    if release_step >= base.total_steps:
        stages = [(0, lam)]
    extra = tuple(sorted({
        *base.checkpoints.extra,
        min(eval_step, base.total_steps),
        min(release_step + offset_steps, base.total_steps),
    }))
    return dataclasses.replace(
        base,
        name=f"{base.name}-rel{release_step}",
        regularizer=RegularizerSettings(stages=tuple(stages), normalize=base.regularizer.normalize),
        checkpoints=dataclasses.replace(base.checkpoints, extra=extra),
    )


def _metrics_at(manifest: RunManifest, step: int) -> dict:
    table = metric_table(manifest)
    if step not in table or "eval_loss" not in table[step]:
        data = load_run_data(manifest)
        rows = evaluate_checkpoint(model_for(manifest, step), manifest, data, step)
        with open(manifest.path("checkpoint_metrics"), "a") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
        table = metric_table(manifest)
    at = table[step]
    return {k: at.get(k) for k in ("eval_loss", "uas", "continuous_sas", "pair_accuracy", "pppl")}


def multistage_sweep(
    base: ExperimentConfig,
    release_steps: Sequence[int],
    seeds: Sequence[int],
    runs_root: Path | str,
    lam: float = 0.01,
    offset_steps: int = 2000,
    eval_step: int | None = None,
    quick_metrics: bool = True,
) -> dict:
    """One run per (release step, seed); summary rows carry metrics at the
    fixed evaluation step and at release + offset, plus the structure-onset
    timing and spike magnitude per run. Writes sweep_summary.json and .csv
    under ``runs_root``."""
    runs_root = Path(runs_root)
    eval_step = base.total_steps if eval_step is None else eval_step
    rows = []
    for release in release_steps:
        cfg = release_config(base, release, lam, eval_step, offset_steps)
        for seed in seeds:
            manifest = run_experiment(cfg, seed, runs_root, resume=True)
            compute_checkpoint_metrics(manifest, quick=quick_metrics)
            analysis = analyze_run(manifest, rescale=False)
            at_eval = _metrics_at(manifest, eval_step)
            offset_at = min(release + offset_steps, base.total_steps)
            at_offset = _metrics_at(manifest, offset_at)
            structure = analysis["onsets"]["structure"]
            rows.append({
                "release_step": release,
                "seed": seed,
                "run": manifest.run_dir.name,
                "eval_step": eval_step,
                **{f"{k}_at_eval": v for k, v in at_eval.items()},
                "offset_step": offset_at,
                **{f"{k}_at_offset": v for k, v in at_offset.items()},
                "structure_onset": structure["t_star"] if structure else None,
                "structure_onset_clear": structure["clear"] if structure else None,
                "uas_spike_magnitude": analysis["onsets"].get("uas_spike_magnitude"),
            })
    summary = {
        "base_config": base.to_dict(),
        "lambda": lam,
        "offset_steps": offset_steps,
        "eval_step": eval_step,
        "rows": rows,
    }
    (runs_root / "sweep_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    if rows:
        with open(runs_root / "sweep_summary.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return summary
