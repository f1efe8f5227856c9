"""Post-hoc analysis of a training run.

Walks the checkpoint index, computes every metric family (probe, extrinsic
evaluation, complexity) into a JSONL stream, assembles metric series, runs
break detection with each metric's declared orientation, labels the
structure / capabilities / alternative-strategy onsets, and repeats the
onset-ordering check under the alternative x-axis scales.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from ..checkpoint import load_checkpoint
from ..complexity import (
    attention_by_distance_arrays,
    attention_entropy_arrays,
    fisher_approx,
    model_tvd,
    linear_cka,
    twonn_id,
    weight_norm,
)
from ..dynamics import (
    BreakReport,
    MetricSeries,
    default_delta,
    detect_break,
    is_clear_onset,
    rescale_axis,
    strictly_increasing_filter,
)
from ..evaluation import minimal_pair_eval, ngram_context_probe, pppl
from ..model import MaskedLanguageModel, mask_batch, mlm_loss
from ..sas_probe import probe
from .running import RunManifest, load_run_data, model_for

# Which way each metric's breakthrough points; detection runs on -f for drops.
METRIC_ORIENTATION = {
    "train_loss": "drop",
    "eval_loss": "drop",
    "pppl": "drop",
    "attention_entropy": "drop",
}


def _orientation(metric: str) -> str:
    return METRIC_ORIENTATION.get(metric, "rise")


def _eval_loss_batches(manifest: RunManifest, data: dict, model_cfg) -> list:
    """Fixed held-out batches; identical on every analysis invocation."""
    ev = manifest.config.evaluation
    rng = np.random.default_rng(ev.eval_seed + 8)
    corpus = data["probe_eval"]
    batches = []
    for _ in range(ev.eval_loss_batches):
        idx = rng.integers(0, len(corpus), size=manifest.config.batch_size)
        sents = [corpus[i].tokens for i in idx]
        batches.append(mask_batch(sents, manifest.config.mask_rate, rng, data["vocab"], model_cfg.max_len))
    return batches


def _fisher_batches(manifest: RunManifest, data: dict, model_cfg) -> list:
    ev = manifest.config.evaluation
    rng = np.random.default_rng(ev.eval_seed + 6)
    corpus = data["train"]
    batches = []
    for _ in range(ev.fisher_batches):
        idx = rng.integers(0, len(corpus), size=manifest.config.batch_size)
        sents = [corpus[i].tokens for i in idx]
        batches.append(mask_batch(sents, manifest.config.mask_rate, rng, data["vocab"], model_cfg.max_len))
    return batches


def _profile_batch(manifest: RunManifest, data: dict, model_cfg):
    ev = manifest.config.evaluation
    rng = np.random.default_rng(ev.eval_seed + 7)
    corpus = data["probe_eval"]
    idx = rng.integers(0, len(corpus), size=min(len(corpus), manifest.config.batch_size))
    sents = [corpus[i].tokens for i in idx]
    return mask_batch(sents, manifest.config.mask_rate, rng, data["vocab"], model_cfg.max_len)


def evaluate_checkpoint(
    model: MaskedLanguageModel,
    manifest: RunManifest,
    data: dict,
    step: int,
    quick: bool = False,
) -> list[dict]:
    """Metric rows for one checkpoint: probe family always; evaluation and
    complexity families unless ``quick``."""
    ev = manifest.config.evaluation
    rows: list[dict] = []
    pr = probe(
        model,
        data["probe_select"],
        None if ev.same_split_probe else data["probe_eval"],
        step=step,
    )
    rows.append({
        "family": "probe",
        "step": step,
        "uas": pr.uas,
        "continuous_sas": pr.continuous_sas,
        "per_relation": {
            rel: {"layer": lh[0], "head": lh[1], "accuracy": pr.assignment.accuracy[rel]}
            for rel, lh in pr.assignment.heads.items()
        },
    })
    if quick:
        return rows

    report = minimal_pair_eval(model, data["pairs"])
    loss_batches = _eval_loss_batches(manifest, data, model.config)
    losses = []
    for b in loss_batches:
        out = model.forward_ids(b.input_ids, b.attention_mask, collect_attention=False)
        losses.append(float(mlm_loss(out, b).data))
    rows.append({
        "family": "eval",
        "step": step,
        "eval_loss": float(np.mean(losses)),
        "pair_accuracy": report.accuracy,
        "continuous_pair": report.continuous_mean,
        "per_phenomenon": report.per_phenomenon,
        "pppl": pppl(model, data["pppl"]),
        "ngram": {str(n): ngram_context_probe(model, data["pppl"], n, ev.ngram_samples, ev.eval_seed + 9)
                  for n in ev.ngram_ns},
    })

    cls = model.cls_embeddings([s.tokens for s in data["embed"]])
    try:
        tw = twonn_id(cls, metric="cosine", trim_fraction=ev.twonn_trim).dimension
    except ValueError:
        tw = float("nan")
    fisher = fisher_approx(model, _fisher_batches(manifest, data, model.config))
    pb = _profile_batch(manifest, data, model.config)
    out = model.forward_ids(pb.input_ids, pb.attention_mask, collect_attention=True)
    attn = [a.data for a in out.attentions]
    rows.append({
        "family": "complexity",
        "step": step,
        "twonn": tw,
        "weight_norm": weight_norm(model.params),
        "fisher": fisher,
        "attention_entropy": attention_entropy_arrays(attn, pb.attention_mask),
        "attention_profile": {
            str(o): v
            for o, v in attention_by_distance_arrays(
                attn, pb.mask_positions, pb.attention_mask, ev.profile_max_offset
            ).items()
        },
    })
    return rows


def compute_checkpoint_metrics(
    manifest: RunManifest, force: bool = False, quick: bool = False
) -> Path:
    """Fill metrics/checkpoint_metrics.jsonl (one row per checkpoint per
    metric family), skipping steps already present."""
    path = manifest.path("checkpoint_metrics")
    done: set[int] = set()
    if path.exists() and not force:
        for line in path.read_text().splitlines():
            if line:
                done.add(json.loads(line)["step"])
    elif path.exists():
        path.unlink()
    todo = [s for s in manifest.checkpoint_steps() if s not in done]
    if not todo:
        return path
    data = load_run_data(manifest)
    with open(path, "a") as fh:
        for step in todo:
            model = model_for(manifest, step)
            for row in evaluate_checkpoint(model, manifest, data, step, quick=quick):
                fh.write(json.dumps(row) + "\n")
            fh.flush()
    return path


def metric_table(manifest: RunManifest) -> dict[int, dict[str, float]]:
    """Flatten the per-family rows into {step: {metric: value}}."""
    table: dict[int, dict[str, float]] = {}
    path = manifest.path("checkpoint_metrics")
    if not path.exists():
        return table
    for line in path.read_text().splitlines():
        if not line:
            continue
        row = json.loads(line)
        at = table.setdefault(row["step"], {})
        fam = row["family"]
        if fam == "probe":
            at["uas"] = row["uas"]
            at["continuous_sas"] = row["continuous_sas"]
        elif fam == "eval":
            for k in ("eval_loss", "pair_accuracy", "continuous_pair", "pppl"):
                at[k] = row[k]
            for n, v in row["ngram"].items():
                at[f"ngram_{n}"] = v
        elif fam == "complexity":
            for k in ("twonn", "weight_norm", "fisher", "attention_entropy"):
                at[k] = row[k]
    return table


def build_series(manifest: RunManifest, include_train_loss: bool = True) -> dict[str, MetricSeries]:
    table = metric_table(manifest)
    steps = sorted(table)
    series: dict[str, MetricSeries] = {}
    names = sorted({k for at in table.values() for k in at})
    for name in names:
        coords = [s for s in steps if name in table[s] and np.isfinite(table[s][name])]
        vals = [table[s][name] for s in coords]
        if len(coords) >= 2:
            series[name] = MetricSeries(name, np.array(coords, float), np.array(vals, float),
                                        orientation=_orientation(name))
    if include_train_loss:
        loss_path = manifest.path("train_loss")
        if loss_path.exists():
            rows = [json.loads(l) for l in loss_path.read_text().splitlines() if l]
            if len(rows) >= 2:
                series["train_loss"] = MetricSeries(
                    "train_loss",
                    np.array([r["step"] for r in rows], float),
                    np.array([r["loss"] for r in rows], float),
                    orientation="drop",
                )
    return series


def weight_vectors(manifest: RunManifest) -> tuple[list[int], Iterable[np.ndarray]]:
    steps = manifest.checkpoint_steps()

    def gen():
        for s in steps:
            ck = load_checkpoint(manifest.checkpoint_manifest(s))
            yield np.concatenate([
                ck.arrays[name].reshape(-1)
                for name in ck.arrays
                if not name.startswith("opt.")
            ])

    return steps, gen()


def _spike_magnitude(series: MetricSeries, t_star: float, window_checkpoints: int = 10) -> float:
    idx = int(np.searchsorted(series.coords, t_star))
    j = min(idx + window_checkpoints, series.coords.size - 1)
    return float(series.values[j] - series.values[idx])


def analyze_run(
    manifest: RunManifest | Path | str,
    delta: float | None = None,
    clear_factor: float = 3.0,
    exclude_before: float | None = None,
    window_checkpoints: int = 10,
    rescale: bool = True,
) -> dict:
    """Full analysis: metric series, per-metric breaks, onset labels and
    ordering, UAS spike magnitude, and rescaled-axis cross-checks. Writes
    analysis/analysis.json; never touches checkpoints."""
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    compute_checkpoint_metrics(manifest)
    series = build_series(manifest)
    cfg = manifest.config
    if delta is None:
        delta = 5.0 * cfg.checkpoints.dense_every

    breaks: dict[str, dict] = {}
    reports: dict[str, BreakReport] = {}
    for name, s in series.items():
        try:
            rep = detect_break(s, delta, exclude_before=exclude_before)
        except Exception as exc:  # degenerate/short series stay reportable
            breaks[name] = {"error": str(exc)}
            continue
        reports[name] = rep
        breaks[name] = {**rep.to_row(), "clear": is_clear_onset(rep, clear_factor)}

    def onset(metric: str) -> dict | None:
        if metric not in reports:
            return None
        rep = reports[metric]
        return {
            "metric": metric,
            "t_star": rep.t_star,
            "magnitude": rep.magnitude,
            "clear": is_clear_onset(reports[metric], clear_factor),
        }

    structure = onset("uas")
    capabilities = onset("pair_accuracy")
    suppressed_from_start = cfg.regularizer.schedule().lambda_at(0) > 0
    alternative = onset("eval_loss") if suppressed_from_start else None

    onsets: dict = {
        "structure": structure,
        "capabilities": capabilities,
        "alternative": alternative,
        "structure_before_capabilities": (
            structure["t_star"] <= capabilities["t_star"]
            if structure and capabilities else None
        ),
    }
    if structure and "uas" in series:
        onsets["uas_spike_magnitude"] = _spike_magnitude(
            series["uas"], structure["t_star"], window_checkpoints
        )

    rescaled: dict = {}
    if rescale and structure and capabilities:
        # Ordering at the detector's resolution: gaps below the detection
        # window count as ties; preservation means no strict reversal.
        def order_sign(t_uas: float, t_pair: float, window: float) -> int:
            if abs(t_pair - t_uas) <= window:
                return 0
            return 1 if t_uas < t_pair else -1

        base_order = order_sign(structure["t_star"], capabilities["t_star"], delta)
        onsets["ordering_sign_steps"] = base_order
        for mode in ("origin-distance", "init-distance", "path-length"):
            steps, vecs = weight_vectors(manifest)
            coords = rescale_axis(steps, vecs, mode)
            entry: dict = {"coords_strictly_increasing": bool(np.all(np.diff(coords) > 0))}
            try:
                mode_breaks = {}
                mode_delta = None
                for metric in ("uas", "pair_accuracy", "eval_loss"):
                    if metric not in series:
                        continue
                    step_series = series[metric]
                    val_at = dict(zip(step_series.coords.tolist(), step_series.values.tolist()))
                    keep = [k for k, s in enumerate(steps) if float(s) in val_at]
                    c, v = strictly_increasing_filter(
                        coords[keep],
                        np.array([val_at[float(steps[k])] for k in keep]),
                    )
                    ms = MetricSeries(metric, c, v, kind=mode, orientation=_orientation(metric))
                    mode_delta = default_delta(ms)
                    rep = detect_break(ms, mode_delta)
                    mode_breaks[metric] = {**rep.to_row(), "clear": is_clear_onset(rep, clear_factor)}
                entry["breaks"] = mode_breaks
                if "uas" in mode_breaks and "pair_accuracy" in mode_breaks:
                    mode_order = order_sign(mode_breaks["uas"]["t_star"],
                                            mode_breaks["pair_accuracy"]["t_star"],
                                            mode_delta)
                    entry["ordering_sign"] = mode_order
                    entry["onset_ordering_preserved"] = bool(base_order * mode_order >= 0)
            except Exception as exc:
                entry["error"] = str(exc)
            rescaled[mode] = entry

    doc = {
        "run": str(manifest.run_dir),
        "seed": manifest.seed,
        "config_hash": manifest.config_hash,
        "delta": delta,
        "clear_factor": clear_factor,
        "breaks": breaks,
        "onsets": onsets,
        "rescaled": rescaled,
        "notes": [
            "break(loss) is computed on held-out MLM loss at checkpoints; the per-step training loss stream is also emitted",
        ],
    }
    out_dir = manifest.run_dir / "analysis"
    out_dir.mkdir(exist_ok=True)
    (out_dir / "analysis.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def compare_runs(
    manifest_a: RunManifest,
    manifest_b: RunManifest,
    max_points: int = 40,
    max_queries: int = 256,
) -> list[dict]:
    """Per-layer CKA and output TVD between two runs at shared checkpoints.

    Both runs must have been trained against identical evaluation data. One
    row per compared step lands in analysis/pairwise_<other run>.jsonl of
    run A.
    """
    for key in ("embed", "pppl", "vocab"):
        if _file_digest(manifest_a.data_path(key)) != _file_digest(manifest_b.data_path(key)):
            raise ValueError(f"runs disagree on shared evaluation data ({key})")
    shared = sorted(set(manifest_a.checkpoints) & set(manifest_b.checkpoints))
    if not shared:
        raise ValueError("no shared checkpoint steps")
    if len(shared) > max_points:
        pick = np.linspace(0, len(shared) - 1, max_points).round().astype(int)
        shared = [shared[i] for i in sorted(set(pick))]
    data = load_run_data(manifest_a)
    embed_sents = [s.tokens for s in data["embed"]]
    queries = []
    for s in data["pppl"]:
        queries.extend((s.tokens, i) for i in range(len(s.tokens)))
        if len(queries) >= max_queries:
            queries = queries[:max_queries]
            break
    rows = []
    for step in shared:
        ma = model_for(manifest_a, step)
        mb = model_for(manifest_b, step)
        _, layers_a = ma.cls_embeddings(embed_sents, per_layer=True)
        _, layers_b = mb.cls_embeddings(embed_sents, per_layer=True)
        cka = [linear_cka(xa, xb) for xa, xb in zip(layers_a, layers_b)]
        rows.append({
            "run_a": manifest_a.run_dir.name,
            "run_b": manifest_b.run_dir.name,
            "step": step,
            "cka_per_layer": cka,
            "mean_tvd": model_tvd(ma, mb, queries),
        })
    out_dir = manifest_a.run_dir / "analysis"
    out_dir.mkdir(exist_ok=True)
    out = out_dir / f"pairwise_{manifest_b.run_dir.name}.jsonl"
    out.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return rows
