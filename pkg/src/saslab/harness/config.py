"""Experiment configuration: nested dataclasses with a JSON round trip.

The JSON layout mirrors the dataclass fields one-to-one; README documents
the schema. A config hash (canonical JSON, sorted keys) identifies runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..grammar import CorpusConfig
from ..model import ModelConfig
from ..regularizer import RegularizerSchedule


@dataclass(frozen=True)
class OptimizerSettings:
    peak_lr: float = 5e-4
    warmup_steps: int = 250
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass(frozen=True)
class CheckpointCadence:
    """Dense early sampling, sparser later; always covers step 0 and the end."""

    dense_every: int = 50
    dense_until: int = 2000
    sparse_every: int = 250
    extra: tuple[int, ...] = ()

    def steps(self, total_steps: int) -> list[int]:
        out = {0, total_steps}
        dense_end = min(self.dense_until, total_steps)
        out.update(range(self.dense_every, dense_end + 1, self.dense_every))
        out.update(range(dense_end, total_steps + 1, self.sparse_every))
        out.update(s for s in self.extra if 0 <= s <= total_steps)
        return sorted(out)


@dataclass(frozen=True)
class EvaluationSettings:
    probe_selection: int = 120
    probe_eval: int = 150
    pairs: int = 120
    pppl_sentences: int = 60
    ngram_ns: tuple[int, ...] = (1, 2, 4, 8)
    ngram_samples: int = 120
    twonn_points: int = 256
    twonn_trim: float = 0.1
    fisher_batches: int = 4
    eval_loss_batches: int = 4
    profile_max_offset: int = 8
    eval_seed: int = 9000
    same_split_probe: bool = False
    continuous_sas_average: str = "arcs"


@dataclass(frozen=True)
class RegularizerSettings:
    stages: tuple[tuple[int, float], ...] = ((0, 0.0),)
    normalize: str = "arcs"

    def schedule(self) -> RegularizerSchedule:
        return RegularizerSchedule.from_pairs(list(self.stages))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(dropout=0.1))
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    regularizer: RegularizerSettings = field(default_factory=RegularizerSettings)
    checkpoints: CheckpointCadence = field(default_factory=CheckpointCadence)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    total_steps: int = 5000
    batch_size: int = 32
    mask_rate: float = 0.15
    seeds: tuple[int, ...] = (1,)
    dtype: str = "float64"

    def validate(self) -> None:
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.total_steps < 0 or self.batch_size <= 0:
            raise ValueError("bad training sizes")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unknown dtype {self.dtype}")
        steps = self.checkpoints.steps(self.total_steps)
        if steps[0] != 0 or steps[-1] != self.total_steps:
            raise ValueError("checkpoint cadence must cover step 0 and the final step")
        if self.model.max_len < self.corpus.max_len + 2:
            raise ValueError("model max_len must fit the longest sentence plus CLS/SEP")

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw: dict = {}
        kw["corpus"] = _dc(CorpusConfig, d.pop("corpus", {}))
        kw["model"] = _dc(ModelConfig, d.pop("model", {}))
        kw["optimizer"] = _dc(OptimizerSettings, d.pop("optimizer", {}))
        reg = d.pop("regularizer", {})
        if "stages" in reg:
            reg["stages"] = tuple(tuple(s) for s in reg["stages"])
        kw["regularizer"] = _dc(RegularizerSettings, reg)
        kw["checkpoints"] = _dc(CheckpointCadence, d.pop("checkpoints", {}))
        kw["evaluation"] = _dc(EvaluationSettings, d.pop("evaluation", {}))
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    @classmethod
    def from_json(cls, path: Path | str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def _dc(cls, d: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in d.items():
        if k not in fields:
            raise ValueError(f"unknown {cls.__name__} key {k!r}")
        if isinstance(v, list):
            v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        kw[k] = v
    return cls(**kw)


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
