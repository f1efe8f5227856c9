"""Transformer-encoder masked language model on the tensor core.

The forward pass is written once in taped ops; running it without an active
tape gives the plain evaluation path (dropout off, no graph). Attention
probabilities are retained per layer whenever probing or regularization
needs them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .grammar import CLS, MASK, NUM_SPECIALS, PAD, SEP, Vocabulary
from .tensor import Tensor

IGNORE = -100  # label sentinel at unselected positions


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_len: int = 16
    vocab_size: int = 0
    dropout: float = 0.1
    tie_output: bool = True
    init_std: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.heads:
            raise ModelError("d_model must be divisible by heads")
        if self.vocab_size <= 0:
            raise ModelError("vocab_size must be set before building parameters")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def init_params(config: ModelConfig) -> dict[str, Tensor]:
    config.validate()
    rng = np.random.default_rng(config.seed)
    std = config.init_std

    def p(name, *shape):
        params[name] = Tensor(rng.normal(0.0, std, shape), requires_grad=True, name=name)

    def ones(name, *shape):
        params[name] = Tensor(np.ones(shape), requires_grad=True, name=name)

    def zeros(name, *shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

    params: dict[str, Tensor] = {}
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    p("tok_emb", v, d)
    p("pos_emb", config.max_len, d)
    ones("emb_ln_g", d)
    zeros("emb_ln_b", d)
    for i in range(config.layers):
        for w in ("wq", "wk", "wv", "wo"):
            p(f"l{i}.{w}", d, d)
        for b in ("bq", "bk", "bv", "bo"):
            zeros(f"l{i}.{b}", d)
        ones(f"l{i}.ln1_g", d)
        zeros(f"l{i}.ln1_b", d)
        p(f"l{i}.w1", d, ff)
        zeros(f"l{i}.b1", ff)
        p(f"l{i}.w2", ff, d)
        zeros(f"l{i}.b2", d)
        ones(f"l{i}.ln2_g", d)
        zeros(f"l{i}.ln2_b", d)
    if not config.tie_output:
        p("out_w", d, v)
    zeros("out_bias", v)
    return params


@dataclass
class MlmBatch:
    input_ids: np.ndarray        # (B, T) int64
    attention_mask: np.ndarray   # (B, T) 1.0 valid / 0.0 pad
    labels: np.ndarray           # (B, T) int64, IGNORE where unselected
    original_ids: np.ndarray     # (B, T) int64, pre-corruption
    mask_positions: np.ndarray   # (B, T) bool, the selected positions
    lengths: list[int]           # word-token counts (no CLS/SEP/PAD)


@dataclass
class ForwardOutput:
    logits: Tensor                              # (B, T, V)
    attentions: list[Tensor] | None             # per layer, (B, H, T, T)
    cls_embedding: np.ndarray                   # (B, d), final layer
    layer_cls: list[np.ndarray] | None = None   # per layer, (B, d)


def encode_rows(token_lists: Sequence[Sequence[int]], max_len: int, pad_to: int | None = None):
    """[CLS] tokens [SEP] padded to a common width; returns (ids, mask)."""
    lengths = [len(t) for t in token_lists]
    need = max(lengths) + 2
    width = pad_to or need
    if need > max_len or width > max_len:
        raise ModelError(f"sequence of {max(lengths)} tokens exceeds max length {max_len}")
    ids = np.full((len(token_lists), width), PAD, dtype=np.int64)
    mask = np.zeros((len(token_lists), width), dtype=np.float64)
    for r, toks in enumerate(token_lists):
        row = [CLS, *toks, SEP]
        ids[r, : len(row)] = row
        mask[r, : len(row)] = 1.0
    return ids, mask


def mask_batch(
    sentences: Sequence[Sequence[int]],
    rate: float,
    rng: np.random.Generator,
    vocab: Vocabulary,
    max_len: int,
    pad_to: int | None = None,
) -> MlmBatch:
    """BERT-style masking: each word token is independently selected with
    probability ``rate``; selected tokens become [MASK] 80% of the time, a
    random word 10%, and stay put 10%. Sequences with no selection are
    redrawn so every row trains."""
    if not (0.0 < rate < 1.0):
        raise ModelError("masking rate must lie in (0, 1)")
    ids, attn = encode_rows(sentences, max_len, pad_to)
    original = ids.copy()
    labels = np.full_like(ids, IGNORE)
    selected = np.zeros_like(ids, dtype=bool)
    lengths = [len(s) for s in sentences]
    for r, n in enumerate(lengths):
        while True:
            sel = rng.random(n) < rate
            if sel.any():
                break
        for j in np.nonzero(sel)[0]:
            pos = j + 1  # CLS offset
            labels[r, pos] = original[r, pos]
            selected[r, pos] = True
            roll = rng.random()
            if roll < 0.8:
                ids[r, pos] = MASK
            elif roll < 0.9:
                ids[r, pos] = rng.integers(NUM_SPECIALS, vocab.size)
            # else: keep the original token
    return MlmBatch(ids, attn, labels, original, selected, lengths)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return T.mul(x, Tensor(keep))


def forward(
    params: dict[str, Tensor],
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    config: ModelConfig,
    dropout_rng: np.random.Generator | None = None,
    collect_attention: bool = True,
    collect_layer_cls: bool = False,
) -> ForwardOutput:
    B, S = input_ids.shape
    H, dh = config.heads, config.head_dim
    drop = config.dropout if dropout_rng is not None else 0.0

    x = T.add(T.embedding(params["tok_emb"], input_ids),
              T.embedding(params["pos_emb"], np.arange(S)))
    x = T.layer_norm(x, params["emb_ln_g"], params["emb_ln_b"])
    x = dropout(x, drop, dropout_rng)

    key_mask = Tensor(((1.0 - attention_mask) * -1e30).reshape(B, 1, 1, S))
    attentions: list[Tensor] = []
    layer_cls: list[np.ndarray] = []
    inv_sqrt = 1.0 / math.sqrt(dh)
    for i in range(config.layers):
        pre = f"l{i}."

        def proj(w, b):
            y = T.add(T.matmul(x, params[pre + w]), params[pre + b])
            return T.transpose(T.reshape(y, (B, S, H, dh)), (0, 2, 1, 3))

        q = proj("wq", "bq")
        k = proj("wk", "bk")
        v = proj("wv", "bv")
        scores = T.add(T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), inv_sqrt), key_mask)
        probs = T.softmax(scores, axis=-1)
        if collect_attention:
            attentions.append(probs)
        ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (B, S, config.d_model))
        ctx = T.add(T.matmul(ctx, params[pre + "wo"]), params[pre + "bo"])
        ctx = dropout(ctx, drop, dropout_rng)
        x = T.layer_norm(T.add(x, ctx), params[pre + "ln1_g"], params[pre + "ln1_b"])

        h = T.gelu(T.add(T.matmul(x, params[pre + "w1"]), params[pre + "b1"]))
        y = T.add(T.matmul(h, params[pre + "w2"]), params[pre + "b2"])
        y = dropout(y, drop, dropout_rng)
        x = T.layer_norm(T.add(x, y), params[pre + "ln2_g"], params[pre + "ln2_b"])
        if collect_layer_cls:
            layer_cls.append(np.array(x.data[:, 0, :]))

    if config.tie_output:
        logits = T.add(T.matmul(x, T.transpose(params["tok_emb"], (1, 0))), params["out_bias"])
    else:
        logits = T.add(T.matmul(x, params["out_w"]), params["out_bias"])
    if not np.all(np.isfinite(logits.data)):
        raise ModelError("NaN/Inf in activations")
    return ForwardOutput(
        logits=logits,
        attentions=attentions if collect_attention else None,
        cls_embedding=np.array(x.data[:, 0, :]),
        layer_cls=layer_cls if collect_layer_cls else None,
    )


def selected_log_probs(output: ForwardOutput, batch: MlmBatch) -> tuple[Tensor, np.ndarray]:
    """Log-softmax rows at the selected positions, plus their flat indices."""
    B, S, V = output.logits.shape
    flat_labels = batch.labels.reshape(-1)
    pos = np.nonzero(flat_labels != IGNORE)[0]
    if pos.size == 0:
        raise ModelError("batch has no masked positions")
    row_idx = pos[:, None] * V + np.arange(V)[None, :]
    rows = T.take(output.logits, row_idx)
    return T.log_softmax(rows, axis=-1), pos


def mlm_loss(output: ForwardOutput, batch: MlmBatch) -> Tensor:
    """Mean cross-entropy over the selected (masked) positions only."""
    log_rows, pos = selected_log_probs(output, batch)
    V = output.logits.shape[-1]
    targets = batch.labels.reshape(-1)[pos]
    picked = T.take(log_rows, np.arange(pos.size) * V + targets)
    return T.scale(T.reduce_mean(picked), -1.0)


class MaskedLanguageModel:
    """Bundle of config, parameters and vocabulary with evaluation helpers.

    All helpers run tape-free with dropout disabled, batching internally;
    they never mutate the parameters.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], vocab: Vocabulary):
        self.config = config
        self.params = params
        self.vocab = vocab

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def forward_ids(self, input_ids, attention_mask, **kw) -> ForwardOutput:
        return forward(self.params, input_ids, attention_mask, self.config, **kw)

    def masked_probability_rows(
        self, queries: Sequence[tuple[Sequence[int], int]], chunk: int = 256
    ) -> np.ndarray:
        """P(token | context) rows for (sentence, position) queries.

        Each query masks one position (all others visible) and reads the
        distribution there. Returns (len(queries), V).
        """
        out = np.empty((len(queries), self.config.vocab_size))
        for lo in range(0, len(queries), chunk):
            part = queries[lo : lo + chunk]
            rows = []
            for toks, pos in part:
                if not (0 <= pos < len(toks)):
                    raise ModelError(f"position {pos} out of range for length {len(toks)}")
                row = list(toks)
                row[pos] = MASK
                rows.append(row)
            ids, attn = encode_rows(rows, self.config.max_len)
            fo = self.forward_ids(ids, attn, collect_attention=False)
            logits = fo.logits.data
            for r, (_, pos) in enumerate(part):
                z = logits[r, pos + 1]
                z = z - z.max()
                e = np.exp(z)
                out[lo + r] = e / e.sum()
        return out

    def token_likelihood(self, tokens: Sequence[int], position: int) -> float:
        """Probability of the true token when `position` alone is masked."""
        row = self.masked_probability_rows([(tokens, position)])[0]
        return float(row[tokens[position]])

    def attention_tensors(
        self, sentences: Sequence[Sequence[int]], chunk: int = 64
    ) -> list[np.ndarray]:
        """Per-sentence (L, H, n+2, n+2) attention over the unpadded span."""
        result: list[np.ndarray] = []
        order = sorted(range(len(sentences)), key=lambda i: len(sentences[i]))
        buffers: dict[int, np.ndarray] = {}
        for lo in range(0, len(order), chunk):
            sel = order[lo : lo + chunk]
            toks = [sentences[i] for i in sel]
            ids, attn = encode_rows(toks, self.config.max_len)
            fo = self.forward_ids(ids, attn, collect_attention=True)
            stack = np.stack([a.data for a in fo.attentions], axis=0)  # (L,B,H,S,S)
            for b, i in enumerate(sel):
                m = len(sentences[i]) + 2
                buffers[i] = np.array(stack[:, b, :, :m, :m])
        for i in range(len(sentences)):
            result.append(buffers[i])
        return result

    def cls_embeddings(self, sentences: Sequence[Sequence[int]], chunk: int = 128,
                       per_layer: bool = False):
        rows: list[np.ndarray] = []
        layers: list[list[np.ndarray]] = []
        for lo in range(0, len(sentences), chunk):
            toks = list(sentences[lo : lo + chunk])
            ids, attn = encode_rows(toks, self.config.max_len)
            fo = self.forward_ids(ids, attn, collect_attention=False,
                                  collect_layer_cls=per_layer)
            rows.append(fo.cls_embedding)
            if per_layer:
                layers.append(fo.layer_cls)
        cls = np.concatenate(rows, axis=0)
        if not per_layer:
            return cls
        per = [np.concatenate([chunk_cls[l] for chunk_cls in layers], axis=0)
               for l in range(self.config.layers)]
        return cls, per
