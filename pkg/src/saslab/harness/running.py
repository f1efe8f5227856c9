"""Training runs: deterministic data/masking/dropout streams, cadence
checkpointing, a per-step loss stream, and exact resume.

All randomness derives from (run seed, step, stream) tuples, so a resumed
run replays the remaining steps bit-identically in 64-bit mode without
serializing generator internals; the checkpoint manifest records the
derivation state instead.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as tensor_mod
from ..checkpoint import load_checkpoint, save_checkpoint
from ..grammar import (
    CorpusConfig,
    build_vocabulary,
    generate_corpus,
    generate_minimal_pairs,
    read_corpus_jsonl,
    read_pairs_jsonl,
    read_vocabulary,
    write_corpus_jsonl,
    write_pairs_jsonl,
    write_vocabulary,
)
from ..model import MaskedLanguageModel, forward, init_params, mask_batch
from ..optim import AdamW, LinearWarmupSchedule
from ..regularizer import regularized_loss
from ..tensor import GradientTape, Tensor, backward
from .config import ExperimentConfig, config_hash

STREAM_BATCH, STREAM_MASK, STREAM_DROPOUT = 0, 1, 2


class NanLossError(RuntimeError):
    pass


@dataclass
class RunManifest:
    run_dir: Path
    config: ExperimentConfig
    seed: int
    status: str
    checkpoints: dict[int, str] = field(default_factory=dict)
    streams: dict[str, str] = field(default_factory=dict)
    data: dict[str, str] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def checkpoint_manifest(self, step: int) -> Path:
        return self.run_dir / self.checkpoints[step]

    def checkpoint_steps(self) -> list[int]:
        return sorted(self.checkpoints)

    def path(self, key: str) -> Path:
        return self.run_dir / self.streams[key]

    def data_path(self, key: str) -> Path:
        return self.run_dir / self.data[key]

    def save(self) -> None:
        doc = {
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "seed": self.seed,
            "status": self.status,
            "checkpoints": {str(k): v for k, v in self.checkpoints.items()},
            "streams": self.streams,
            "data": self.data,
        }
        (self.run_dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True))

    @classmethod
    def load(cls, run_dir: Path | str) -> "RunManifest":
        run_dir = Path(run_dir)
        doc = json.loads((run_dir / "manifest.json").read_text())
        return cls(
            run_dir=run_dir,
            config=ExperimentConfig.from_dict(doc["config"]),
            seed=doc["seed"],
            status=doc["status"],
            checkpoints={int(k): v for k, v in doc["checkpoints"].items()},
            streams=doc["streams"],
            data=doc["data"],
        )


def run_dir_for(runs_root: Path | str, config: ExperimentConfig, seed: int) -> Path:
    return Path(runs_root) / f"{config.name}-seed{seed}"


def derived_corpus(corpus: CorpusConfig, size: int, seed: int) -> CorpusConfig:
    return dataclasses.replace(corpus, size=size, seed=seed)


def prepare_data(config: ExperimentConfig, run_dir: Path) -> dict[str, str]:
    """Write the vocabulary, training corpus, probe splits, minimal pairs and
    evaluation corpora under data/; reuse files that already exist."""
    data_dir = run_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    ev = config.evaluation
    vocab_path = data_dir / "vocab.json"
    if not vocab_path.exists():
        write_vocabulary(vocab_path, build_vocabulary(config.corpus))
    vocab = read_vocabulary(vocab_path)
    jobs = {
        "train": (config.corpus, None),
        "probe_select": (derived_corpus(config.corpus, ev.probe_selection, ev.eval_seed + 1), None),
        "probe_eval": (derived_corpus(config.corpus, ev.probe_eval, ev.eval_seed + 2), None),
        "pppl": (derived_corpus(config.corpus, ev.pppl_sentences, ev.eval_seed + 4), None),
        "embed": (derived_corpus(config.corpus, ev.twonn_points, ev.eval_seed + 5), None),
    }
    paths = {"vocab": "data/vocab.json"}
    for key, (cc, _) in jobs.items():
        p = data_dir / f"{key}.jsonl"
        if not p.exists():
            write_corpus_jsonl(p, generate_corpus(cc, vocab))
        paths[key] = f"data/{key}.jsonl"
    pairs_path = data_dir / "pairs.jsonl"
    if not pairs_path.exists():
        write_pairs_jsonl(pairs_path, generate_minimal_pairs(config.corpus, ev.pairs, ev.eval_seed + 3, vocab))
    paths["pairs"] = "data/pairs.jsonl"
    return paths


def load_run_data(manifest: RunManifest) -> dict:
    vocab = read_vocabulary(manifest.data_path("vocab"))
    out = {"vocab": vocab}
    for key in ("train", "probe_select", "probe_eval", "pppl", "embed"):
        out[key] = read_corpus_jsonl(manifest.data_path(key))
    out["pairs"] = read_pairs_jsonl(manifest.data_path("pairs"))
    return out


def model_for(manifest: RunManifest, step: int) -> MaskedLanguageModel:
    """Load one checkpoint as a read-only model."""
    vocab = read_vocabulary(manifest.data_path("vocab"))
    mc = dataclasses.replace(manifest.config.model, vocab_size=vocab.size, seed=manifest.seed)
    ck = load_checkpoint(manifest.checkpoint_manifest(step))
    params = {
        name: Tensor(arr, requires_grad=True, name=name)
        for name, arr in ck.arrays.items()
        if not name.startswith("opt.")
    }
    return MaskedLanguageModel(mc, params, vocab)


def _truncate_stream(path: Path, before_step: int) -> None:
    if not path.exists():
        return
    kept = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["step"] < before_step]
    path.write_text("".join(k + "\n" for k in kept))


def run_experiment(
    config: ExperimentConfig,
    seed: int,
    runs_root: Path | str,
    resume: bool = False,
    stop_after: int | None = None,
) -> RunManifest:
    """Train one seed of an experiment, writing checkpoints on cadence and a
    per-step loss stream. With ``resume`` the run continues from its latest
    checkpoint and reproduces the uninterrupted run bit-for-bit (64-bit).
    ``stop_after`` ends the run early at that step (simulating a kill).
    """
    config.validate()
    tensor_mod.set_default_dtype(np.float64 if config.dtype == "float64" else np.float32)
    run_dir = run_dir_for(runs_root, config, seed)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "metrics").mkdir(exist_ok=True)

    ckpt_steps = set(config.checkpoints.steps(config.total_steps))
    loss_path = run_dir / "metrics" / "train_loss.jsonl"
    schedule = config.regularizer.schedule()

    if resume and (run_dir / "manifest.json").exists():
        manifest = RunManifest.load(run_dir)
        if manifest.config_hash != config_hash(config):
            raise ValueError("resume config does not match the run on disk")
    else:
        manifest = RunManifest(
            run_dir=run_dir,
            config=config,
            seed=seed,
            status="running",
            streams={"train_loss": "metrics/train_loss.jsonl",
                     "checkpoint_metrics": "metrics/checkpoint_metrics.jsonl"},
        )
        manifest.data = prepare_data(config, run_dir)
        loss_path.write_text("")
    manifest.status = "running"
    manifest.save()

    vocab = read_vocabulary(manifest.data_path("vocab"))
    corpus = read_corpus_jsonl(manifest.data_path("train"))
    mc = dataclasses.replace(config.model, vocab_size=vocab.size, seed=seed)
    opt_cfg = config.optimizer
    lr = LinearWarmupSchedule(opt_cfg.peak_lr, opt_cfg.warmup_steps, config.total_steps)

    start_step = 0
    params = init_params(mc)
    optimizer = AdamW(params, lr, betas=opt_cfg.betas, eps=opt_cfg.eps,
                      weight_decay=opt_cfg.weight_decay)
    if resume and manifest.checkpoints:
        start_step = max(manifest.checkpoints)
        ck = load_checkpoint(manifest.checkpoint_manifest(start_step))
        for name, p in params.items():
            p.data = np.array(ck.arrays[name])
        optimizer.load_state(ck.arrays, start_step)
        _truncate_stream(loss_path, start_step)

    def save_step(step: int, stats: dict | None = None) -> None:
        payload: dict[str, np.ndarray | Tensor] = dict(params)
        payload.update(optimizer.state_arrays())
        p = save_checkpoint(
            run_dir / "checkpoints", step, payload,
            rng_state={"run_seed": seed, "next_step": step},
            stats=stats or {},
        )
        manifest.checkpoints[step] = str(p.relative_to(run_dir))
        manifest.save()

    if start_step == 0 and 0 in ckpt_steps and 0 not in manifest.checkpoints:
        save_step(0)

    end_step = config.total_steps if stop_after is None else min(stop_after, config.total_steps)
    loss_fh = open(loss_path, "a")
    try:
        for step in range(start_step, end_step):
            brng = np.random.default_rng([seed, step, STREAM_BATCH])
            idx = brng.integers(0, len(corpus), size=config.batch_size)
            sents = [corpus[i] for i in idx]
            mrng = np.random.default_rng([seed, step, STREAM_MASK])
            batch = mask_batch([s.tokens for s in sents], config.mask_rate, mrng, vocab, mc.max_len)
            drng = np.random.default_rng([seed, step, STREAM_DROPOUT]) if mc.dropout > 0 else None
            lam = schedule.lambda_at(step)
            with GradientTape() as tape:
                out = forward(params, batch.input_ids, batch.attention_mask, mc,
                              dropout_rng=drng, collect_attention=lam != 0.0)
                total, mlm, _ = regularized_loss(out, batch, sents, lam,
                                                 normalize=config.regularizer.normalize)
                if not np.isfinite(total.data):
                    save_step(step, stats={"diagnostic": "nan-loss"})
                    manifest.status = "failed-nan"
                    manifest.save()
                    raise NanLossError(f"non-finite loss at step {step}")
                grads = backward(total, tape)
            optimizer.step(grads)
            loss_fh.write(json.dumps({
                "step": step, "loss": float(mlm.data), "total": float(total.data),
                "lambda": lam,
            }) + "\n")
            done = step + 1
            if done in ckpt_steps:
                loss_fh.flush()
                save_step(done, stats={"last_loss": float(mlm.data)})
    finally:
        loss_fh.close()

    manifest.status = "completed" if end_step == config.total_steps else "interrupted"
    manifest.save()
    return manifest
