"""Attention-head parse induction.

A head predicts, for each word, the other word with the maximum attention
weight across both directions; the best head per dependency relation is the
one whose predictions most often hit the gold parent. Pooling correct
predictions over all relations gives the unlabeled attachment score. The
continuous variant reads off the attention mass itself instead of an argmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grammar import ParsedSentence, RELATIONS
from .model import MaskedLanguageModel


class ProbeError(ValueError):
    pass


@dataclass
class HeadAssignment:
    heads: dict[str, tuple[int, int]]     # relation -> (layer, head)
    accuracy: dict[str, float]            # selection-split accuracy


@dataclass
class ProbeResult:
    uas: float
    continuous_sas: float
    assignment: HeadAssignment
    corpus_id: str | None = None
    step: int | None = None


def word_level_attention(attn: np.ndarray, spans: Sequence[tuple[int, int]]) -> np.ndarray:
    """Merge token-level attention (..., n, n) into word level.

    Attention *to* a word sums over its token columns; attention *from* a
    word averages over its token rows, so row mass is preserved. ``spans``
    must partition [0, n) as contiguous (start, end) pairs.
    """
    n = attn.shape[-1]
    expected = 0
    for start, end in spans:
        if start != expected or end <= start:
            raise ProbeError(f"spans must partition the token range, got {list(spans)}")
        expected = end
    if expected != n:
        raise ProbeError(f"spans cover [0, {expected}) but attention has {n} tokens")
    starts = [s for s, _ in spans]
    sizes = np.array([e - s for s, e in spans], dtype=attn.dtype)
    summed = np.add.reduceat(attn, starts, axis=-1)
    merged = np.add.reduceat(summed, starts, axis=-2)
    return merged / sizes[:, None]


def singleton_spans(n: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(n)]


def word_region(attn_sentence: np.ndarray, n_words: int) -> np.ndarray:
    """Drop CLS/SEP rows and columns from a (L, H, n+2, n+2) sentence slice."""
    return np.array(attn_sentence[:, :, 1 : n_words + 1, 1 : n_words + 1])


def head_parent_prediction(word_attn: np.ndarray, head: tuple[int, int], i: int) -> int:
    """argmax over j != i of max(a_ij, a_ji) for one (layer, head)."""
    l, h = head
    a = word_attn[l, h]
    scores = np.maximum(a[i, :], a[:, i])
    scores[i] = -np.inf
    return int(np.argmax(scores))


def all_head_predictions(word_attn: np.ndarray) -> np.ndarray:
    """Predicted parent of every word under every head: (L, H, n) ints.

    Ties break to the smallest candidate index (argmax convention).
    """
    m = np.maximum(word_attn, np.swapaxes(word_attn, -1, -2))
    n = m.shape[-1]
    idx = np.arange(n)
    m[..., idx, idx] = -np.inf
    return m.argmax(axis=-1)


def word_attentions(
    model: MaskedLanguageModel, corpus: Sequence[ParsedSentence]
) -> list[np.ndarray]:
    """(L, H, n, n) word-level attention per sentence (CLS/SEP excluded)."""
    raw = model.attention_tensors([s.tokens for s in corpus])
    return [word_region(a, len(s.tokens)) for a, s in zip(raw, corpus)]


def _accuracy_table(
    word_attns: Sequence[np.ndarray], corpus: Sequence[ParsedSentence]
) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    correct: dict[str, np.ndarray] = {}
    total: dict[str, int] = {}
    for attn, sent in zip(word_attns, corpus):
        preds = all_head_predictions(attn)
        for child, par, rel in sent.arcs():
            if rel not in correct:
                correct[rel] = np.zeros(preds.shape[:2], dtype=np.int64)
                total[rel] = 0
            correct[rel] += preds[:, :, child] == par
            total[rel] += 1
    return correct, total


def select_best_heads(
    model: MaskedLanguageModel, corpus: Sequence[ParsedSentence]
) -> HeadAssignment:
    """Best (layer, head) per relation by parent-prediction accuracy; ties
    break to the lower layer, then lower head."""
    attns = word_attentions(model, corpus)
    return select_best_heads_from(attns, corpus)


def select_best_heads_from(
    word_attns: Sequence[np.ndarray], corpus: Sequence[ParsedSentence]
) -> HeadAssignment:
    correct, total = _accuracy_table(word_attns, corpus)
    missing = [r for r in RELATIONS if r not in total]
    if missing:
        raise ProbeError(f"relations absent from selection corpus: {missing}")
    heads: dict[str, tuple[int, int]] = {}
    accuracy: dict[str, float] = {}
    for rel in RELATIONS:
        acc = correct[rel] / total[rel]
        l, h = np.unravel_index(int(np.argmax(acc)), acc.shape)
        heads[rel] = (int(l), int(h))
        accuracy[rel] = float(acc[l, h])
    return HeadAssignment(heads, accuracy)


def uas(
    model: MaskedLanguageModel,
    corpus: Sequence[ParsedSentence],
    assignment: HeadAssignment,
) -> float:
    attns = word_attentions(model, corpus)
    return uas_from(attns, corpus, assignment)


def uas_from(
    word_attns: Sequence[np.ndarray],
    corpus: Sequence[ParsedSentence],
    assignment: HeadAssignment,
) -> float:
    """Correct parent predictions over all arcs, each relation scored by its
    assigned head (pooled, so relations weigh by their arc counts)."""
    if not corpus:
        raise ProbeError("empty corpus")
    n_correct = 0
    n_arcs = 0
    for attn, sent in zip(word_attns, corpus):
        preds = all_head_predictions(attn)
        for child, par, rel in sent.arcs():
            if rel not in assignment.heads:
                raise ProbeError(f"assignment missing relation {rel}")
            l, h = assignment.heads[rel]
            n_correct += int(preds[l, h, child] == par)
            n_arcs += 1
    if n_arcs == 0:
        raise ProbeError("corpus has no arcs")
    return n_correct / n_arcs


def continuous_sas(
    model: MaskedLanguageModel,
    corpus: Sequence[ParsedSentence],
    average: str = "arcs",
) -> float:
    attns = word_attentions(model, corpus)
    return continuous_sas_from(attns, corpus, average=average)


def continuous_sas_from(
    word_attns: Sequence[np.ndarray],
    corpus: Sequence[ParsedSentence],
    average: str = "arcs",
) -> float:
    """Mean syntacticity over gold arcs: the max attention (over all heads
    and layers) child->parent plus parent->child, in [0, 2]."""
    if not corpus:
        raise ProbeError("empty corpus")
    if average not in ("arcs", "sentences"):
        raise ProbeError(f"unknown averaging mode {average!r}")
    per_arc: list[float] = []
    per_sentence: list[float] = []
    for attn, sent in zip(word_attns, corpus):
        vals = [
            float(attn[:, :, c, p].max() + attn[:, :, p, c].max())
            for c, p, _ in sent.arcs()
        ]
        per_arc.extend(vals)
        if vals:
            per_sentence.append(float(np.mean(vals)))
    if not per_arc:
        raise ProbeError("corpus has no arcs")
    return float(np.mean(per_arc if average == "arcs" else per_sentence))


def probe(
    model: MaskedLanguageModel,
    selection_corpus: Sequence[ParsedSentence],
    eval_corpus: Sequence[ParsedSentence] | None = None,
    step: int | None = None,
    corpus_id: str | None = None,
) -> ProbeResult:
    """Select best heads on one split, score UAS on the other.

    Passing ``eval_corpus=None`` mirrors the single-split variant where the
    same data selects heads and is scored.
    """
    sel_attns = word_attentions(model, selection_corpus)
    assignment = select_best_heads_from(sel_attns, selection_corpus)
    if eval_corpus is None:
        eval_corpus, eval_attns = selection_corpus, sel_attns
    else:
        eval_attns = word_attentions(model, eval_corpus)
    return ProbeResult(
        uas=uas_from(eval_attns, eval_corpus, assignment),
        continuous_sas=continuous_sas_from(eval_attns, eval_corpus),
        assignment=assignment,
        corpus_id=corpus_id,
        step=step,
    )
