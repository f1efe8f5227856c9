"""Command-line entry points.

Run storage defaults to $SASLAB_RUNS_ROOT (or ./runs); configs are JSON
files matching the ExperimentConfig schema documented in the README.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .grammar import (
    build_vocabulary,
    generate_corpus,
    generate_minimal_pairs,
    write_corpus_jsonl,
    write_pairs_jsonl,
    write_vocabulary,
)
from .harness import (
    ExperimentConfig,
    analyze_run,
    compare_runs,
    compute_checkpoint_metrics,
    correlate_across_seeds,
    emit_plot_data,
    multistage_sweep,
    run_experiment,
)
from .harness.analysis import evaluate_checkpoint
from .harness.running import RunManifest, load_run_data, model_for


def _runs_root(args) -> Path:
    root = args.runs_root or os.environ.get("SASLAB_RUNS_ROOT", "runs")
    return Path(root)


def _load_manifest(run_dir: str) -> RunManifest:
    return RunManifest.load(run_dir)


def _cmd_gen_corpus(args) -> None:
    config = ExperimentConfig.from_json(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocabulary(config.corpus)
    write_vocabulary(out / "vocab.json", vocab)
    write_corpus_jsonl(out / "corpus.jsonl", generate_corpus(config.corpus, vocab))
    n_pairs = args.pairs if args.pairs is not None else config.evaluation.pairs
    write_pairs_jsonl(
        out / "pairs.jsonl",
        generate_minimal_pairs(config.corpus, n_pairs, config.evaluation.eval_seed + 3, vocab),
    )
    print(f"wrote vocab.json, corpus.jsonl ({config.corpus.size} sentences), "
          f"pairs.jsonl ({n_pairs} pairs) to {out}")


def _cmd_train(args) -> None:
    config = ExperimentConfig.from_json(args.config)
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    for seed in seeds:
        manifest = run_experiment(config, seed, _runs_root(args), resume=args.resume,
                                  stop_after=args.stop_after)
        print(f"{manifest.run_dir} [{manifest.status}] "
              f"checkpoints={len(manifest.checkpoints)}")


def _cmd_probe(args) -> None:
    manifest = _load_manifest(args.run)
    step = args.step if args.step is not None else max(manifest.checkpoints)
    data = load_run_data(manifest)
    rows = evaluate_checkpoint(model_for(manifest, step), manifest, data, step, quick=True)
    print(json.dumps(rows[0], indent=1))


def _cmd_eval(args) -> None:
    manifest = _load_manifest(args.run)
    step = args.step if args.step is not None else max(manifest.checkpoints)
    data = load_run_data(manifest)
    rows = evaluate_checkpoint(model_for(manifest, step), manifest, data, step)
    print(json.dumps(rows, indent=1))


def _cmd_analyze(args) -> None:
    manifest = _load_manifest(args.run)
    compute_checkpoint_metrics(manifest, force=args.force)
    doc = analyze_run(manifest, delta=args.delta, exclude_before=args.exclude_before)
    if args.pair_with:
        compare_runs(manifest, _load_manifest(args.pair_with))
    print(json.dumps(doc["onsets"], indent=1))
    print(f"analysis written to {manifest.run_dir / 'analysis' / 'analysis.json'}")


def _cmd_sweep(args) -> None:
    base = ExperimentConfig.from_json(args.config)
    releases = [int(x) for x in args.release.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else list(base.seeds)
    summary = multistage_sweep(
        base, releases, seeds, _runs_root(args),
        lam=args.lam, offset_steps=args.offset, eval_step=args.eval_step,
    )
    print(f"{len(summary['rows'])} sweep rows -> {_runs_root(args) / 'sweep_summary.json'}")


def _cmd_correlate(args) -> None:
    manifests = [_load_manifest(r) for r in args.runs]
    step = args.step if args.step is not None else max(manifests[0].checkpoints)
    result = correlate_across_seeds(manifests, args.metric_a, args.metric_b, step)
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1))
    print(json.dumps({k: v for k, v in result.items() if k != "points"}, indent=1))


def _cmd_plots(args) -> None:
    manifests = [_load_manifest(r) for r in args.runs]
    doc = emit_plot_data(manifests, args.out)
    print(f"{len(doc['figures'])} figures -> {args.out}/figures.json")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saslab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="write vocabulary, corpus and minimal pairs")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--pairs", type=int, default=None)
    g.set_defaults(fn=_cmd_gen_corpus)

    t = sub.add_parser("train", help="train one or all seeds of a config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--runs-root", default=None)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-after", type=int, default=None)
    t.set_defaults(fn=_cmd_train)

    pr = sub.add_parser("probe", help="attention-parse probe at one checkpoint")
    pr.add_argument("--run", required=True)
    pr.add_argument("--step", type=int, default=None)
    pr.set_defaults(fn=_cmd_probe)

    ev = sub.add_parser("eval", help="all metric families at one checkpoint")
    ev.add_argument("--run", required=True)
    ev.add_argument("--step", type=int, default=None)
    ev.set_defaults(fn=_cmd_eval)

    an = sub.add_parser("analyze", help="metric series, breaks and onsets for a run")
    an.add_argument("--run", required=True)
    an.add_argument("--delta", type=float, default=None)
    an.add_argument("--exclude-before", type=float, default=None)
    an.add_argument("--force", action="store_true")
    an.add_argument("--pair-with", default=None,
                    help="second run dir for CKA/TVD comparison rows")
    an.set_defaults(fn=_cmd_analyze)

    sw = sub.add_parser("sweep", help="multistage release sweep")
    sw.add_argument("--config", required=True)
    sw.add_argument("--release", required=True, help="comma-separated release steps")
    sw.add_argument("--seeds", default=None, help="comma-separated seeds")
    sw.add_argument("--runs-root", default=None)
    sw.add_argument("--lam", type=float, default=0.01)
    sw.add_argument("--offset", type=int, default=2000)
    sw.add_argument("--eval-step", type=int, default=None)
    sw.set_defaults(fn=_cmd_sweep)

    co = sub.add_parser("correlate", help="cross-seed metric correlation")
    co.add_argument("--runs", nargs="+", required=True)
    co.add_argument("--metric-a", required=True)
    co.add_argument("--metric-b", required=True)
    co.add_argument("--step", type=int, default=None)
    co.add_argument("--out", default=None)
    co.set_defaults(fn=_cmd_correlate)

    pl = sub.add_parser("plots", help="figure CSVs + manifest for a run group")
    pl.add_argument("--runs", nargs="+", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=_cmd_plots)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
