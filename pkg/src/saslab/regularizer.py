"""Attention regularization toward or away from the gold parse.

The syntacticity of an arc is the attention weight between its two words,
maximized over every head and layer and summed across both directions. A
coefficient scales the batch syntacticity into the MLM loss: positive
suppresses attention on syntactic neighbors, negative promotes it. Staged
schedules switch the coefficient at preset steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

from . import tensor as T
from .grammar import ParsedSentence
from .model import ForwardOutput, MlmBatch, mlm_loss
from .tensor import Tensor


class RegularizerError(ValueError):
    pass


@dataclass(frozen=True)
class RegularizerSchedule:
    """Piecewise-constant coefficient: (start_step, value) stages from step 0;
    the last stage extends indefinitely."""

    stages: tuple[tuple[int, float], ...]

    @classmethod
    def constant(cls, value: float) -> "RegularizerSchedule":
        return cls.from_pairs([(0, value)])

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]]) -> "RegularizerSchedule":
        if not pairs:
            return cls(((0, 0.0),))
        dedup: dict[int, float] = {}
        for start, value in pairs:
            if start < 0 or not math.isfinite(value):
                raise RegularizerError(f"bad schedule stage ({start}, {value})")
            dedup[int(start)] = float(value)  # later entries win at equal starts
        stages = tuple(sorted(dedup.items()))
        if stages[0][0] != 0:
            stages = ((0, 0.0),) + stages
        return cls(stages)

    def lambda_at(self, step: int) -> float:
        if step < 0:
            raise RegularizerError("step must be >= 0")
        value = self.stages[0][1]
        for start, v in self.stages:
            if step >= start:
                value = v
            else:
                break
        return value

    def to_pairs(self) -> list[tuple[int, float]]:
        return list(self.stages)


def syntacticity_score(word_attention: np.ndarray, i: int, j: int) -> float:
    """max over heads/layers of a_ij plus max of a_ji on a (L, H, n, n) map."""
    if i == j:
        raise RegularizerError("syntacticity needs two distinct words")
    return float(word_attention[:, :, i, j].max() + word_attention[:, :, j, i].max())


def gamma_scores(attentions: Sequence[Tensor], arcs: np.ndarray) -> Tensor:
    """Differentiable per-arc syntacticity from taped attention tensors.

    ``attentions`` holds one (B, H, S, S) tensor per layer; ``arcs`` is an
    (n, 3) int array of (batch row, child position, parent position) in
    encoded coordinates. At argmax ties the subgradient flows to the
    first-indexed maximizer.
    """
    arcs = np.asarray(arcs, dtype=np.int64)
    if arcs.ndim != 2 or arcs.shape[1] != 3:
        raise RegularizerError("arcs must be (n, 3): batch row, child, parent")
    B, H, S, _ = attentions[0].shape
    b, i, j = arcs[:, 0], arcs[:, 1], arcs[:, 2]
    heads = np.arange(H)[None, :]

    def flat(src, dst):
        return ((b[:, None] * H + heads) * S + src[:, None]) * S + dst[:, None]

    idx_fwd = flat(i, j)
    idx_rev = flat(j, i)
    fwd = T.concat([T.take(a, idx_fwd) for a in attentions], axis=1)
    rev = T.concat([T.take(a, idx_rev) for a in attentions], axis=1)
    return T.add(T.reduce_max(fwd, axis=1), T.reduce_max(rev, axis=1))


def batch_arcs(parses: Sequence[ParsedSentence | None]) -> np.ndarray:
    """Gold (row, child, parent) triples in encoded coordinates (CLS at 0)."""
    rows = []
    for r, parse in enumerate(parses):
        if parse is None:
            raise RegularizerError(f"missing parse for batch sentence {r}")
        for child, parent, _ in parse.arcs():
            rows.append((r, child + 1, parent + 1))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def regularized_loss(
    output: ForwardOutput,
    batch: MlmBatch,
    parses: Sequence[ParsedSentence],
    lam: float,
    normalize: str = "arcs",
) -> tuple[Tensor, Tensor, Tensor | None]:
    """MLM loss plus the scaled batch syntacticity.

    ``normalize='arcs'`` divides the syntacticity sum by the number of gold
    arcs so the coefficient means the same thing at any batch size;
    ``normalize='raw'`` keeps the plain sum. With ``lam == 0`` the result is
    bit-for-bit the MLM loss (no regularizer term is built at all).

    Returns (total, mlm, syntacticity term or None).
    """
    if normalize not in ("arcs", "raw"):
        raise RegularizerError(f"unknown normalization {normalize!r}")
    mlm = mlm_loss(output, batch)
    if lam == 0.0:
        return mlm, mlm, None
    if len(parses) != batch.input_ids.shape[0]:
        raise RegularizerError("one parse per batch sentence is required")
    if output.attentions is None:
        raise RegularizerError("forward pass did not retain attention")
    arcs = batch_arcs(parses)
    if arcs.shape[0] == 0:
        return mlm, mlm, None
    gamma = gamma_scores(output.attentions, arcs)
    term = T.reduce_mean(gamma) if normalize == "arcs" else T.reduce_sum(gamma)
    total = T.add(mlm, T.scale(term, lam))
    return total, mlm, term
