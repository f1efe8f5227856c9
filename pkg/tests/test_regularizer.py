from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saslab.gradcheck import finite_diff_grad, max_relative_error
from saslab.model import forward, mask_batch, mlm_loss
from saslab.regularizer import (
    RegularizerError,
    RegularizerSchedule,
    batch_arcs,
    gamma_scores,
    regularized_loss,
    syntacticity_score,
)
from saslab.tensor import GradientTape, Tensor, backward


# -- schedules ------------------------------------------------------------


def test_multistage_schedule_boundaries():
    sched = RegularizerSchedule.from_pairs([(0, 0.001), (3000, 0.0)])
    assert sched.lambda_at(0) == 0.001
    assert sched.lambda_at(2999) == 0.001
    assert sched.lambda_at(3000) == 0.0
    assert sched.lambda_at(10**9) == 0.0


def test_constant_and_promotion_schedules():
    const = RegularizerSchedule.constant(0.42)
    assert {const.lambda_at(s) for s in (0, 17, 10**6)} == {0.42}
    promo = RegularizerSchedule.constant(-0.001)
    assert promo.lambda_at(123456) == -0.001


def test_schedule_validation():
    with pytest.raises(RegularizerError):
        RegularizerSchedule.from_pairs([(-5, 0.1)])
    with pytest.raises(RegularizerError):
        RegularizerSchedule.from_pairs([(0, float("nan"))])
    with pytest.raises(RegularizerError):
        RegularizerSchedule.constant(0.0).lambda_at(-1)
    # duplicate starts: the later pair wins; missing 0 stage defaults to 0
    assert RegularizerSchedule.from_pairs([(0, 0.5), (0, 0.0)]).stages == ((0, 0.0),)
    assert RegularizerSchedule.from_pairs([(100, 0.5)]).lambda_at(0) == 0.0


# -- syntacticity ----------------------------------------------------------


def test_syntacticity_sums_directional_maxima():
    a = np.zeros((2, 2, 4, 4))
    a[0, 1, 1, 2] = 0.6   # forward maxima over heads/layers
    a[1, 0, 1, 2] = 0.2
    a[1, 1, 2, 1] = 0.3   # backward maxima
    assert syntacticity_score(a, 1, 2) == pytest.approx(0.9)


def test_syntacticity_uniform():
    n = 5
    a = np.full((3, 2, n, n), 1.0 / n)
    assert syntacticity_score(a, 0, 3) == pytest.approx(2.0 / n)


def test_syntacticity_needs_distinct_words():
    with pytest.raises(RegularizerError):
        syntacticity_score(np.zeros((1, 1, 3, 3)), 2, 2)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=25, deadline=None)
def test_syntacticity_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    n = 6
    a = rng.random((2, 2, n, n))
    perm = rng.permutation(n)
    permuted = a[:, :, perm][:, :, :, perm]
    inv = np.argsort(perm)
    i, j = 1, 4
    assert syntacticity_score(a, i, j) == pytest.approx(
        syntacticity_score(permuted, int(inv[i]), int(inv[j]))
    )


def test_gamma_gradient_hits_argmax_entries_only():
    # Away from ties the gradient of gamma w.r.t. attention is exactly 1 at
    # the two directional argmax entries and 0 elsewhere; finite differences
    # confirm.
    rng = np.random.default_rng(0)
    layers = [Tensor(rng.random((1, 2, 5, 5)), requires_grad=True, name=f"a{l}")
              for l in range(2)]
    arcs = np.array([[0, 1, 3]])
    with GradientTape() as tape:
        g = gamma_scores(layers, arcs)
        grads = backward(g.sum(), tape)
    fwd_vals = np.stack([t.data[0, :, 1, 3] for t in layers])   # (L, H)
    rev_vals = np.stack([t.data[0, :, 3, 1] for t in layers])
    lf, hf = np.unravel_index(np.argmax(fwd_vals), fwd_vals.shape)
    lr_, hr = np.unravel_index(np.argmax(rev_vals), rev_vals.shape)
    for l, t in enumerate(layers):
        got = grads[t].data
        want = np.zeros_like(got)
        if l == lf:
            want[0, hf, 1, 3] = 1.0
        if l == lr_:
            want[0, hr, 3, 1] = 1.0
        np.testing.assert_array_equal(got, want)

    params = {t.name: t for t in layers}

    def f(ps):
        return float(gamma_scores([ps["a0"], ps["a1"]], arcs).data.sum())

    coords = {t.name: np.array([np.ravel_multi_index((0, hf, 1, 3), t.shape),
                                np.ravel_multi_index((0, hr, 3, 1), t.shape)])
              for t in layers}
    est = finite_diff_grad(f, params, 1e-6, coords)
    ana = {t.name: grads[t].data.reshape(-1)[coords[t.name]] for t in layers}
    assert max_relative_error(ana, est) < 1e-6


# -- regularized loss ---------------------------------------------------------


@pytest.fixture()
def forward_batch(small_vocab, small_corpus, untrained_tiny):
    sents = small_corpus[:4]
    rng = np.random.default_rng(3)
    batch = mask_batch([s.tokens for s in sents], 0.25, rng, small_vocab, 16)
    out = untrained_tiny.forward_ids(batch.input_ids, batch.attention_mask,
                                     collect_attention=True)
    return out, batch, sents


def test_lambda_zero_is_bitexact_mlm(forward_batch):
    out, batch, sents = forward_batch
    total, mlm, term = regularized_loss(out, batch, sents, 0.0)
    assert term is None
    assert total is mlm
    assert total.data == mlm_loss(out, batch).data


def test_known_gamma_sum_arithmetic(forward_batch):
    out, batch, sents = forward_batch
    arcs = batch_arcs(sents)
    attn = [a.data for a in out.attentions]
    per_arc = []
    for b, i, j in arcs:
        fwd = max(a[b, :, i, j].max() for a in attn)
        rev = max(a[b, :, j, i].max() for a in attn)
        per_arc.append(fwd + rev)
    g_mean = float(np.mean(per_arc))
    total, mlm, term = regularized_loss(out, batch, sents, 0.001)
    assert term.item() == pytest.approx(g_mean, rel=1e-12)
    assert total.item() == pytest.approx(mlm.item() + 0.001 * g_mean, rel=1e-12)


def test_raw_mode_uses_plain_sum(forward_batch):
    out, batch, sents = forward_batch
    _, _, term_mean = regularized_loss(out, batch, sents, 1.0, normalize="arcs")
    _, _, term_raw = regularized_loss(out, batch, sents, 1.0, normalize="raw")
    n_arcs = batch_arcs(sents).shape[0]
    assert term_raw.item() == pytest.approx(term_mean.item() * n_arcs, rel=1e-12)


def test_additivity_identity(forward_batch):
    out, batch, sents = forward_batch
    base, _, _ = regularized_loss(out, batch, sents, 0.0)
    for lam in (0.01, -0.01, 0.37):
        total, _, term = regularized_loss(out, batch, sents, lam)
        assert total.item() - base.item() == pytest.approx(lam * term.item(), abs=1e-12)


def test_missing_parse_rejected(forward_batch):
    out, batch, sents = forward_batch
    with pytest.raises(RegularizerError):
        regularized_loss(out, batch, sents[:-1], 0.01)
    with pytest.raises(RegularizerError):
        regularized_loss(out, batch, [None] * len(sents), 0.01)


def test_regularized_gradcheck_small_model(small_vocab, small_corpus, untrained_tiny):
    config = untrained_tiny.config
    params = untrained_tiny.params
    sents = small_corpus[:3]
    rng = np.random.default_rng(5)
    batch = mask_batch([s.tokens for s in sents], 0.3, rng, small_vocab, 16)

    for lam in (0.001, -0.001):
        def build(ps):
            out = forward(ps, batch.input_ids, batch.attention_mask, config,
                          collect_attention=True)
            total, _, _ = regularized_loss(out, batch, sents, lam)
            return total

        with GradientTape() as tape:
            loss = build(params)
            grads = backward(loss, tape)
        rng2 = np.random.default_rng(6)
        coords = {k: rng2.choice(p.size, size=min(4, p.size), replace=False)
                  for k, p in params.items()}
        est = finite_diff_grad(lambda ps: build(ps).item(), params, 1e-5, coords)
        ana = {k: (grads[p].data.reshape(-1) if p in grads else np.zeros(p.size))[coords[k]]
               for k, p in params.items()}
        assert max_relative_error(ana, est) < 1e-3
