#!/usr/bin/env python3
"""Train baseline seeds at desk scale, analyze each run, and emit figure data.

Produces the loss / implicit-parse / pair-accuracy trajectories with
structure- and capabilities-onset markers, the rescaled-axis variants, and a
cross-seed correlation report between parse accuracy and pair accuracy.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from saslab.grammar import CorpusConfig
from saslab.harness import (
    CheckpointCadence,
    EvaluationSettings,
    ExperimentConfig,
    OptimizerSettings,
    analyze_run,
    correlate_across_seeds,
    emit_plot_data,
    run_experiment,
)
from saslab.model import ModelConfig


def default_config(name: str, total_steps: int, seeds: tuple[int, ...]) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        corpus=CorpusConfig(size=50_000, seed=0),
        model=ModelConfig(layers=4, heads=4, d_model=128, d_ff=512, max_len=16, dropout=0.1),
        optimizer=OptimizerSettings(peak_lr=5e-4, warmup_steps=250),
        checkpoints=CheckpointCadence(dense_every=50, dense_until=2000, sparse_every=250),
        evaluation=EvaluationSettings(),
        total_steps=total_steps,
        batch_size=32,
        seeds=seeds,
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs-root", default="runs")
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--out", default="figures")
    args = ap.parse_args()

    seeds = tuple(int(s) for s in args.seeds.split(","))
    config = default_config("baseline", args.steps, seeds)
    manifests = []
    for seed in seeds:
        m = run_experiment(config, seed, args.runs_root, resume=True)
        doc = analyze_run(m)
        print(f"seed {seed}: onsets {json.dumps(doc['onsets'], default=str)}")
        manifests.append(m)
    emit_plot_data(manifests, args.out)
    if len(manifests) >= 3:
        final = max(manifests[0].checkpoints)
        corr = correlate_across_seeds(manifests, "uas", "pair_accuracy", final)
        Path(args.out, "uas_vs_pair_correlation.json").write_text(json.dumps(corr, indent=1))
        print(f"uas~pair accuracy across seeds: r={corr['pearson_r']:.3f} "
              f"R^2={corr['r_squared']:.3f}")
    print(f"figure data in {args.out}/")


if __name__ == "__main__":
    main()
