from .config import (
    CheckpointCadence,
    EvaluationSettings,
    ExperimentConfig,
    OptimizerSettings,
    RegularizerSettings,
    config_hash,
)
from .running import NanLossError, RunManifest, run_experiment
from .analysis import analyze_run, build_series, compare_runs, compute_checkpoint_metrics
from .stats import bootstrap_bands, correlate_across_seeds
from .sweep import multistage_sweep
from .plots import emit_plot_data

__all__ = [
    "CheckpointCadence",
    "EvaluationSettings",
    "ExperimentConfig",
    "OptimizerSettings",
    "RegularizerSettings",
    "config_hash",
    "NanLossError",
    "RunManifest",
    "run_experiment",
    "analyze_run",
    "build_series",
    "compare_runs",
    "compute_checkpoint_metrics",
    "bootstrap_bands",
    "correlate_across_seeds",
    "multistage_sweep",
    "emit_plot_data",
]
