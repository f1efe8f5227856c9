from __future__ import annotations

import numpy as np
import pytest

from saslab.grammar import CorpusConfig, build_vocabulary, generate_corpus
from saslab.model import (
    MaskedLanguageModel,
    ModelConfig,
    forward,
    init_params,
    mask_batch,
)
from saslab.optim import AdamW, LinearWarmupSchedule
from saslab.regularizer import regularized_loss
from saslab.tensor import GradientTape, backward


SMALL_CORPUS = CorpusConfig(
    nouns=10, verbs=10, adjectives=6, determiners=4, possessives=3,
    adverbs=3, reflexives=2, size=1000, seed=11,
)


@pytest.fixture(scope="session")
def small_vocab():
    return build_vocabulary(SMALL_CORPUS)


@pytest.fixture(scope="session")
def small_corpus(small_vocab):
    return generate_corpus(SMALL_CORPUS, small_vocab)


def train_model(vocab, corpus, *, layers=2, heads=2, d_model=32, d_ff=128,
                steps=1500, batch_size=16, peak_lr=1e-3, warmup=50, seed=7,
                lam=0.0, dropout=0.1):
    config = ModelConfig(layers=layers, heads=heads, d_model=d_model, d_ff=d_ff,
                         max_len=16, vocab_size=vocab.size, dropout=dropout, seed=seed)
    params = init_params(config)
    opt = AdamW(params, LinearWarmupSchedule(peak_lr, warmup, steps))
    for step in range(steps):
        brng = np.random.default_rng([seed, step, 0])
        sents = [corpus[i] for i in brng.integers(0, len(corpus), size=batch_size)]
        mrng = np.random.default_rng([seed, step, 1])
        batch = mask_batch([s.tokens for s in sents], 0.15, mrng, vocab, config.max_len)
        drng = np.random.default_rng([seed, step, 2]) if dropout > 0 else None
        with GradientTape() as tape:
            out = forward(params, batch.input_ids, batch.attention_mask, config,
                          dropout_rng=drng, collect_attention=lam != 0.0)
            total, _, _ = regularized_loss(out, batch, sents, lam)
            grads = backward(total, tape)
        opt.step(grads)
    return MaskedLanguageModel(config, params, vocab)


@pytest.fixture(scope="session")
def trained_tiny(small_vocab, small_corpus):
    """A small MLM trained long enough to exploit agreement structure."""
    return train_model(small_vocab, small_corpus)


@pytest.fixture(scope="session")
def untrained_tiny(small_vocab):
    config = ModelConfig(layers=2, heads=2, d_model=32, d_ff=128, max_len=16,
                         vocab_size=small_vocab.size, dropout=0.0, seed=13)
    return MaskedLanguageModel(config, init_params(config), small_vocab)


class UniformStub:
    """Scoring stub: every masked query returns the uniform distribution."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size

    def masked_probability_rows(self, queries):
        return np.full((len(queries), self.vocab_size), 1.0 / self.vocab_size)


@pytest.fixture
def uniform_stub():
    return UniformStub


class TableStub:
    """Scoring stub backed by an explicit (tokens, position) -> row table."""

    def __init__(self, vocab_size: int, table):
        self.vocab_size = vocab_size
        self.table = table

    def masked_probability_rows(self, queries):
        return np.stack([self.table[(tuple(t), p)] for t, p in queries])


@pytest.fixture
def table_stub():
    return TableStub
