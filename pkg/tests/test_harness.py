from __future__ import annotations

import csv
import math
import json
from pathlib import Path

import numpy as np
import pytest

from saslab.checkpoint import checkpoint_digest
from saslab.grammar import CorpusConfig
from saslab.harness import (
    CheckpointCadence,
    EvaluationSettings,
    ExperimentConfig,
    NanLossError,
    OptimizerSettings,
    RegularizerSettings,
    RunManifest,
    analyze_run,
    bootstrap_bands,
    build_series,
    compare_runs,
    compute_checkpoint_metrics,
    config_hash,
    correlate_across_seeds,
    emit_plot_data,
    run_experiment,
)
from saslab.harness.analysis import _spike_magnitude
from saslab.harness.running import run_dir_for
from saslab.harness.sweep import release_config
from saslab.dynamics import MetricSeries
from saslab.model import ModelConfig


def tiny_config(name="tiny", **overrides) -> ExperimentConfig:
    base = dict(
        name=name,
        corpus=CorpusConfig(nouns=10, verbs=10, adjectives=6, determiners=4,
                            possessives=3, adverbs=3, reflexives=2, size=300, seed=1),
        model=ModelConfig(layers=2, heads=2, d_model=32, d_ff=64, max_len=16, dropout=0.1),
        optimizer=OptimizerSettings(peak_lr=1e-3, warmup_steps=20),
        checkpoints=CheckpointCadence(dense_every=30, dense_until=120, sparse_every=60),
        evaluation=EvaluationSettings(probe_selection=16, probe_eval=20, pairs=12,
                                      pppl_sentences=8, ngram_ns=(1, 2), ngram_samples=16,
                                      twonn_points=40, fisher_batches=2, eval_loss_batches=2),
        total_steps=240,
        batch_size=8,
        seeds=(1,),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    config = tiny_config()
    manifest = run_experiment(config, 1, root)
    return manifest


# -- configuration ------------------------------------------------------------


def test_cadence_covers_ends_and_pattern():
    cad = CheckpointCadence(dense_every=50, dense_until=200, sparse_every=100, extra=(425,))
    steps = cad.steps(500)
    assert steps[0] == 0 and steps[-1] == 500
    assert {50, 100, 150, 200, 300, 400, 425, 500} <= set(steps)


def test_config_round_trip_and_hash(tmp_path):
    cfg = tiny_config(regularizer=RegularizerSettings(stages=((0, 0.01), (100, 0.0))))
    path = tmp_path / "c.json"
    cfg.write_json(path)
    back = ExperimentConfig.from_json(path)
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)
    assert config_hash(tiny_config(name="other")) != config_hash(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(seeds=()).validate()
    with pytest.raises(ValueError):
        tiny_config(model=ModelConfig(max_len=8)).validate()
    tiny_config().validate()


# -- training runs ---------------------------------------------------------


def test_zero_step_run_has_initial_checkpoint_only(tmp_path):
    cfg = tiny_config(name="zero", total_steps=0,
                      checkpoints=CheckpointCadence(dense_every=50, dense_until=0, sparse_every=50))
    m = run_experiment(cfg, 3, tmp_path)
    assert m.checkpoint_steps() == [0]
    assert m.status == "completed"


def test_identical_seed_gives_identical_loss_stream(tmp_path):
    cfg = tiny_config(name="det", total_steps=60,
                      checkpoints=CheckpointCadence(dense_every=30, dense_until=60, sparse_every=30))
    a = run_experiment(cfg, 5, tmp_path / "a")
    b = run_experiment(cfg, 5, tmp_path / "b")
    assert a.path("train_loss").read_text() == b.path("train_loss").read_text()
    assert (checkpoint_digest(a.checkpoint_manifest(60))
            == checkpoint_digest(b.checkpoint_manifest(60)))


def test_kill_and_resume_matches_uninterrupted(tmp_path):
    cfg = tiny_config(name="resume", total_steps=120,
                      checkpoints=CheckpointCadence(dense_every=30, dense_until=120, sparse_every=30))
    full = run_experiment(cfg, 2, tmp_path / "full")
    part = run_experiment(cfg, 2, tmp_path / "part", stop_after=70)
    assert part.status == "interrupted"
    assert max(part.checkpoints) == 60
    resumed = run_experiment(cfg, 2, tmp_path / "part", resume=True)
    assert resumed.status == "completed"
    assert (checkpoint_digest(resumed.checkpoint_manifest(120))
            == checkpoint_digest(full.checkpoint_manifest(120)))
    assert resumed.path("train_loss").read_text() == full.path("train_loss").read_text()


def test_resume_rejects_changed_config(tmp_path):
    cfg = tiny_config(name="guard", total_steps=60,
                      checkpoints=CheckpointCadence(dense_every=30, dense_until=60, sparse_every=30))
    run_experiment(cfg, 1, tmp_path, stop_after=30)
    changed = tiny_config(name="guard", total_steps=60, batch_size=4,
                          checkpoints=CheckpointCadence(dense_every=30, dense_until=60, sparse_every=30))
    with pytest.raises(ValueError):
        run_experiment(changed, 1, tmp_path, resume=True)


def test_manifest_round_trip(tiny_run):
    loaded = RunManifest.load(tiny_run.run_dir)
    assert loaded.config == tiny_run.config
    assert loaded.checkpoints == tiny_run.checkpoints
    assert loaded.config_hash == tiny_run.config_hash


# -- analysis ------------------------------------------------------------


def test_checkpoint_metrics_and_series(tiny_run):
    compute_checkpoint_metrics(tiny_run)
    series = build_series(tiny_run)
    for name in ("uas", "continuous_sas", "pair_accuracy", "pppl", "eval_loss",
                 "twonn", "weight_norm", "fisher", "attention_entropy", "train_loss",
                 "ngram_1", "ngram_2", "continuous_pair"):
        assert name in series, f"missing series {name}"
    steps = set(tiny_run.checkpoint_steps())
    assert set(series["uas"].coords.tolist()) <= {float(s) for s in steps}


def test_analyze_run_is_read_only(tiny_run):
    before = {s: checkpoint_digest(tiny_run.checkpoint_manifest(s))
              for s in tiny_run.checkpoint_steps()}
    analyze_run(tiny_run, delta=60.0)
    after = {s: checkpoint_digest(tiny_run.checkpoint_manifest(s))
             for s in tiny_run.checkpoint_steps()}
    assert before == after
    assert (tiny_run.run_dir / "analysis" / "analysis.json").exists()


def test_analyze_reports_rescaled_orderings(tiny_run):
    doc = analyze_run(tiny_run, delta=60.0)
    assert doc["onsets"]["structure"] is not None
    assert doc["onsets"]["capabilities"] is not None
    for mode in ("origin-distance", "init-distance", "path-length"):
        assert mode in doc["rescaled"]
        entry = doc["rescaled"][mode]
        assert "breaks" in entry or "error" in entry


def _synthetic_run(tmp_path: Path, name: str, metric_rows: list[dict],
                   loss_rows: list[dict] | None = None, seed: int = 1,
                   stages=((0, 0.0),), checkpoint_weights=None) -> RunManifest:
    from saslab.checkpoint import save_checkpoint

    run_dir = tmp_path / name
    (run_dir / "metrics").mkdir(parents=True)
    cfg = tiny_config(name=name, regularizer=RegularizerSettings(stages=tuple(stages)))
    manifest = RunManifest(run_dir=run_dir, config=cfg, seed=seed, status="completed",
                           checkpoints={}, streams={
                               "train_loss": "metrics/train_loss.jsonl",
                               "checkpoint_metrics": "metrics/checkpoint_metrics.jsonl"},
                           data={})
    if checkpoint_weights:
        for step, vec in checkpoint_weights.items():
            p = save_checkpoint(run_dir / "checkpoints", step, {"w": np.asarray(vec)})
            manifest.checkpoints[step] = str(p.relative_to(run_dir))
    with open(run_dir / "metrics" / "checkpoint_metrics.jsonl", "w") as fh:
        for row in metric_rows:
            fh.write(json.dumps(row) + "\n")
    with open(run_dir / "metrics" / "train_loss.jsonl", "w") as fh:
        for row in (loss_rows or []):
            fh.write(json.dumps(row) + "\n")
    manifest.save()
    return manifest


def _kinked_rows(uas_kink: int, acc_kink: int, steps: range, ramp: int = 400) -> list[dict]:
    # ramps (not steps): the second difference peaks exactly at the corner
    rows = []
    for s in steps:
        uas = 0.1 + 0.5 * min(max((s - uas_kink) / ramp, 0.0), 1.0)
        acc = 0.5 + 0.4 * min(max((s - acc_kink) / ramp, 0.0), 1.0)
        rows.append({"family": "probe", "step": s, "uas": uas, "continuous_sas": 2 * uas,
                     "per_relation": {}})
        rows.append({"family": "eval", "step": s, "eval_loss": 5.0 - s / 1000,
                     "pair_accuracy": acc, "continuous_pair": acc, "pppl": 40.0,
                     "per_phenomenon": {}, "ngram": {"1": 0.1}})
    return rows


def test_injected_kinks_give_structure_before_capabilities(tmp_path):
    rows = _kinked_rows(800, 1200, range(0, 2050, 50))
    m = _synthetic_run(tmp_path, "kinks", rows)
    doc = analyze_run(m, delta=250.0, rescale=False)
    assert doc["onsets"]["structure"]["t_star"] == 800.0
    assert doc["onsets"]["capabilities"]["t_star"] == 1200.0
    assert doc["onsets"]["structure_before_capabilities"] is True
    assert doc["onsets"]["structure"]["clear"]
    assert doc["onsets"]["capabilities"]["clear"]


def test_flat_metrics_flagged_unclear(tmp_path):
    rows = []
    for s in range(0, 2050, 50):
        rows.append({"family": "probe", "step": s, "uas": 0.3, "continuous_sas": 0.6,
                     "per_relation": {}})
        rows.append({"family": "eval", "step": s, "eval_loss": 3.0, "pair_accuracy": 0.5,
                     "continuous_pair": 0.5, "pppl": 40.0, "per_phenomenon": {},
                     "ngram": {"1": 0.1}})
    m = _synthetic_run(tmp_path, "flat", rows)
    doc = analyze_run(m, delta=250.0, rescale=False)
    assert doc["onsets"]["structure"]["magnitude"] == pytest.approx(0.0, abs=1e-12)
    assert not doc["onsets"]["structure"]["clear"]
    assert not doc["onsets"]["capabilities"]["clear"]


def test_alternative_onset_only_for_suppression_runs(tmp_path):
    rows = _kinked_rows(800, 1200, range(0, 2050, 50))
    base = _synthetic_run(tmp_path, "plain", rows)
    assert analyze_run(base, delta=250.0, rescale=False)["onsets"]["alternative"] is None
    sup = _synthetic_run(tmp_path, "sup", rows, stages=((0, 0.01),))
    assert analyze_run(sup, delta=250.0, rescale=False)["onsets"]["alternative"] is not None


def test_rescaled_ordering_preserved_end_to_end(tmp_path):
    # dominant single kinks survive any smooth monotone reparameterization;
    # the full analyze pipeline must agree across all three axis modes
    steps = range(0, 2050, 50)
    rows = _kinked_rows(800, 1200, steps)
    rng = np.random.default_rng(0)
    weights = {}
    for s in steps:
        # nonlinear monotone trajectory: norm grows like sqrt(step)
        base = math.sqrt(s + 25.0)
        weights[s] = np.array([base, 0.1 * base, 1.0 + 0.001 * s])
    m = _synthetic_run(tmp_path, "rescale", rows, checkpoint_weights=weights)
    doc = analyze_run(m, delta=250.0, rescale=True)
    assert doc["onsets"]["ordering_sign_steps"] == 1
    for mode in ("origin-distance", "init-distance", "path-length"):
        entry = doc["rescaled"][mode]
        assert entry.get("error") is None
        assert entry["coords_strictly_increasing"]
        assert entry["onset_ordering_preserved"], (mode, entry)


def test_spike_magnitude_on_step_function():
    # value climbs from 0 at the onset to 0.6 inside the 10-checkpoint window
    coords = np.arange(0.0, 2000.0, 50.0)
    values = np.where(coords > 1000.0, 0.6, 0.0)
    series = MetricSeries("uas", coords, values)
    assert _spike_magnitude(series, 1000.0, window_checkpoints=10) == pytest.approx(0.6)


# -- sweep config identities ------------------------------------------------


def test_release_config_identities():
    base = tiny_config()
    rel0 = release_config(base, 0, lam=0.01, eval_step=240, offset_steps=100)
    assert rel0.regularizer.schedule().to_pairs() == [(0, 0.0)]
    rel_end = release_config(base, base.total_steps, lam=0.01, eval_step=240, offset_steps=100)
    assert rel_end.regularizer.schedule().to_pairs() == [(0, 0.01)]
    mid = release_config(base, 120, lam=0.01, eval_step=240, offset_steps=60)
    assert mid.regularizer.schedule().lambda_at(119) == 0.01
    assert mid.regularizer.schedule().lambda_at(120) == 0.0
    assert 180 in mid.checkpoints.extra and 240 in mid.checkpoints.extra


# -- correlation ------------------------------------------------------------


def _correlation_runs(tmp_path, pairs, step=100):
    manifests = []
    for k, (a, b) in enumerate(pairs):
        rows = [{"family": "probe", "step": step, "uas": a, "continuous_sas": 0.0,
                 "per_relation": {}},
                {"family": "eval", "step": step, "eval_loss": 1.0, "pair_accuracy": b,
                 "continuous_pair": b, "pppl": 1.0, "per_phenomenon": {}, "ngram": {}}]
        manifests.append(_synthetic_run(tmp_path, f"corr{k}", rows, seed=k))
    return manifests


def test_correlation_exact_linear(tmp_path):
    xs = [0.1, 0.3, 0.5, 0.7]
    manifests = _correlation_runs(tmp_path, [(x, 2 * x + 0.1) for x in xs])
    out = correlate_across_seeds(manifests, "uas", "pair_accuracy", 100)
    assert out["pearson_r"] == pytest.approx(1.0)
    assert out["r_squared"] == pytest.approx(1.0)
    assert not out["degenerate"]


def test_correlation_constant_degenerate(tmp_path):
    manifests = _correlation_runs(tmp_path, [(x, 0.5) for x in (0.1, 0.2, 0.3)])
    out = correlate_across_seeds(manifests, "uas", "pair_accuracy", 100)
    assert out["degenerate"]
    assert out["pearson_r"] == 0.0


def test_correlation_independent_small(tmp_path):
    rng = np.random.default_rng(0)
    pairs = list(zip(rng.random(25), rng.random(25)))
    manifests = _correlation_runs(tmp_path, pairs)
    out = correlate_across_seeds(manifests, "uas", "pair_accuracy", 100)
    assert abs(out["pearson_r"]) < 0.4
    assert out["r_squared"] < 0.2


def test_correlation_needs_three_runs(tmp_path):
    manifests = _correlation_runs(tmp_path, [(0.1, 0.2), (0.2, 0.3)])
    with pytest.raises(ValueError):
        correlate_across_seeds(manifests, "uas", "pair_accuracy", 100)


# -- plots -------------------------------------------------------------------


def test_bootstrap_bands_contain_mean_and_collapse():
    rng = np.random.default_rng(1)
    vals = rng.random((3, 17))
    lo, hi = bootstrap_bands(vals, n_boot=500, seed=0)
    mean = vals.mean(axis=0)
    assert np.all(lo <= mean + 1e-12) and np.all(mean <= hi + 1e-12)
    single = vals[:1]
    lo1, hi1 = bootstrap_bands(single)
    np.testing.assert_array_equal(lo1, single[0])
    np.testing.assert_array_equal(hi1, single[0])


def test_emit_plot_data_schema(tiny_run, tmp_path):
    analyze_run(tiny_run, delta=60.0)
    doc = emit_plot_data([tiny_run], tmp_path / "figs")
    names = {f["figure"] for f in doc["figures"]}
    assert "eval_loss_vs_step" in names and "uas_vs_step" in names
    with open(tmp_path / "figs" / "eval_loss_vs_step.csv") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert header == ["t", "mean", "lo95", "hi95", "n_seeds",
                          "is_structure_onset", "is_capabilities_onset"]
        rows = list(reader)
    assert len(rows) == len(tiny_run.checkpoint_steps())
    for row in rows:
        lo, mean, hi = float(row[2]), float(row[1]), float(row[3])
        assert lo <= mean + 1e-12
        assert mean <= hi + 1e-12
    # single seed: bands collapse to the mean
    assert all(float(r[1]) == float(r[2]) == float(r[3]) for r in rows)
    for mode in ("origin-distance", "init-distance", "path-length"):
        path = tmp_path / "figs" / f"rescaled_{mode}_{tiny_run.run_dir.name}.csv"
        assert path.exists()
        with open(path) as fh:
            rdr = csv.reader(fh)
            next(rdr)
            coords = [float(r[0]) for r in rdr]
        assert all(b > a for a, b in zip(coords, coords[1:]))
    assert (tmp_path / "figs" / "figures.json").exists()


# -- run comparison -----------------------------------------------------------


def test_compare_runs_rows(tiny_run, tmp_path):
    other = run_experiment(tiny_config(), 9, tmp_path / "other")
    rows = compare_runs(tiny_run, other, max_points=3)
    assert rows
    for row in rows:
        assert len(row["cka_per_layer"]) == tiny_run.config.model.layers
        assert 0.0 <= row["mean_tvd"] <= 1.0
    out = tiny_run.run_dir / "analysis" / f"pairwise_{other.run_dir.name}.jsonl"
    assert out.exists()
    same = compare_runs(tiny_run, tiny_run, max_points=2)
    assert all(r["mean_tvd"] == 0.0 for r in same)
    assert all(np.allclose(r["cka_per_layer"], 1.0) for r in same)
