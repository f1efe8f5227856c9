"""Extrinsic capability scoring: pseudo-log-likelihoods, pseudoperplexity,
minimal-pair accuracy with a continuous variant, and the fixed-context
window probe.

Scoring only needs an object exposing ``masked_probability_rows(queries)``
and ``vocab_size``; the trained model and test stubs both qualify.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .grammar import MinimalPair, ParsedSentence


class EvalError(ValueError):
    pass


class MaskedScorer(Protocol):
    vocab_size: int

    def masked_probability_rows(self, queries: Sequence[tuple[Sequence[int], int]]) -> np.ndarray: ...


@dataclass
class PairScore:
    pll_acceptable: float
    pll_unacceptable: float
    correct: bool          # strict inequality; ties count as incorrect
    continuous: float      # relative per-token pseudo-likelihood in [0, 1]


@dataclass
class MinimalPairReport:
    accuracy: float
    continuous_mean: float
    per_phenomenon: dict[str, float]
    scores: list[PairScore]


_TINY = 1e-300  # floor before log; float64 softmax can underflow to 0


def _token_log_probs(model: MaskedScorer, sentences: Sequence[Sequence[int]]) -> list[np.ndarray]:
    """Per-sentence arrays of log P(x_i | rest) with position i masked."""
    queries: list[tuple[Sequence[int], int]] = []
    for toks in sentences:
        if len(toks) == 0:
            raise EvalError("cannot score an empty sentence")
        queries.extend((toks, i) for i in range(len(toks)))
    rows = model.masked_probability_rows(queries)
    out: list[np.ndarray] = []
    k = 0
    for toks in sentences:
        idx = np.arange(len(toks))
        p = rows[k : k + len(toks)][idx, np.asarray(toks)]
        out.append(np.log(np.maximum(p, _TINY)))
        k += len(toks)
    return out


def pll(model: MaskedScorer, tokens: Sequence[int]) -> float:
    """Sum over positions of log P(token | all others visible, self masked)."""
    return float(_token_log_probs(model, [tokens])[0].sum())


def plls(model: MaskedScorer, sentences: Sequence[Sequence[int]]) -> np.ndarray:
    return np.array([lp.sum() for lp in _token_log_probs(model, sentences)])


def pppl(
    model: MaskedScorer,
    corpus: Sequence[ParsedSentence] | Sequence[Sequence[int]],
    per_document: bool = False,
) -> float:
    """exp(-sum PLL / N); N counts scored tokens by default, documents when
    ``per_document`` is set."""
    sentences = [s.tokens if isinstance(s, ParsedSentence) else s for s in corpus]
    if not sentences:
        raise EvalError("empty corpus")
    scores = plls(model, sentences)
    n = len(sentences) if per_document else sum(len(s) for s in sentences)
    return float(np.exp(-scores.sum() / n))


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-min(x, 700.0)))
    return float(np.exp(max(x, -700.0)) / (1.0 + np.exp(max(x, -700.0))))


def score_pair(model: MaskedScorer, pair: MinimalPair) -> PairScore:
    good, bad = pair.acceptable.tokens, pair.unacceptable
    pll_good, pll_bad = plls(model, [good, bad])
    la, lu = pll_good / len(good), pll_bad / len(bad)
    if not (np.isfinite(la) and np.isfinite(lu)):
        raise EvalError("degenerate pair likelihoods")
    return PairScore(
        pll_acceptable=float(pll_good),
        pll_unacceptable=float(pll_bad),
        correct=bool(pll_good > pll_bad),
        continuous=_logistic(la - lu),
    )


def continuous_pair_score(model: MaskedScorer, pair: MinimalPair) -> float:
    """p / (p + p~) with p the per-token-normalized pseudo-likelihood
    exp(PLL/len) of the acceptable member."""
    return score_pair(model, pair).continuous


def minimal_pair_eval(model: MaskedScorer, pairs: Sequence[MinimalPair]) -> MinimalPairReport:
    if not pairs:
        raise EvalError("no pairs to evaluate")
    scores = [score_pair(model, p) for p in pairs]
    by_ph: dict[str, list[bool]] = {}
    for p, s in zip(pairs, scores):
        by_ph.setdefault(p.phenomenon, []).append(s.correct)
    return MinimalPairReport(
        accuracy=float(np.mean([s.correct for s in scores])),
        continuous_mean=float(np.mean([s.continuous for s in scores])),
        per_phenomenon={k: float(np.mean(v)) for k, v in by_ph.items()},
        scores=scores,
    )


def ngram_context_probe(
    model: MaskedScorer,
    corpus: Sequence[ParsedSentence] | Sequence[Sequence[int]],
    n: int,
    samples: int,
    seed: int,
) -> float:
    """Mean likelihood of a masked token inside a random (n+1)-token window.

    Each sample draws a sentence with at least n+1 tokens, a window start,
    and a mask position inside the window; only the window is presented.
    """
    if n < 0:
        raise EvalError("n must be >= 0")
    sentences = [s.tokens if isinstance(s, ParsedSentence) else list(s) for s in corpus]
    eligible = [s for s in sentences if len(s) >= n + 1]
    if not eligible:
        raise EvalError(f"no sentence has {n + 1} tokens")
    rng = np.random.default_rng(seed)
    queries: list[tuple[Sequence[int], int]] = []
    for _ in range(samples):
        s = eligible[rng.integers(len(eligible))]
        start = rng.integers(len(s) - n) if len(s) > n else 0
        window = s[start : start + n + 1]
        queries.append((window, int(rng.integers(n + 1))))
    rows = model.masked_probability_rows(queries)
    truth = np.array([toks[pos] for toks, pos in queries])
    return float(rows[np.arange(len(queries)), truth].mean())
