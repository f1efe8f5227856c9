"""Complexity and similarity metrics over checkpoints.

Includes the two-nearest-neighbor intrinsic dimension (censored maximum
likelihood over the distance-ratio statistics), parameter norm, the squared
gradient norm as a Fisher information proxy, attention entropy and distance
profiles, linear centered kernel alignment, and total variation distance
between output distributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .model import MaskedLanguageModel, MlmBatch, forward, mlm_loss
from .tensor import GradientTape, Tensor, backward


class ComplexityError(ValueError):
    pass


@dataclass
class IdEstimate:
    dimension: float
    n_used: int
    variant: str = "mle"
    trim_fraction: float = 0.1


def _nn_ratios(points: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        tree = cKDTree(points)
        dist, _ = tree.query(points, k=3)
        r1, r2 = dist[:, 1], dist[:, 2]
    elif metric == "cosine":
        norms = np.linalg.norm(points, axis=1)
        if np.any(norms == 0):
            raise ComplexityError("zero vector has no cosine distance")
        unit = points / norms[:, None]
        d = 1.0 - unit @ unit.T
        np.fill_diagonal(d, np.inf)
        d = np.maximum(d, 0.0)
        part = np.partition(d, 1, axis=1)
        r1, r2 = part[:, 0], part[:, 1]
    else:
        raise ComplexityError(f"unknown metric {metric!r}")
    if np.any(r1 == 0):
        raise ComplexityError("duplicate points survive deduplication (r1 = 0)")
    return r2 / r1


def twonn_id(
    points: np.ndarray,
    metric: str = "euclidean",
    trim_fraction: float = 0.1,
) -> IdEstimate:
    """TwoNN intrinsic dimension via maximum likelihood on mu = r2/r1.

    log(mu) is exponential with rate equal to the dimension; the largest
    ``trim_fraction`` of mu values (noisy on real data) is discarded and the
    estimate uses the censored-sample MLE, which stays consistent under the
    discard: d = k / (sum of kept log-mu + (n-k) * largest kept log-mu).
    """
    points = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    n = points.shape[0]
    if n < 10:
        raise ComplexityError(f"need at least 10 distinct points, got {n}")
    if not (0.0 <= trim_fraction < 1.0):
        raise ComplexityError("trim fraction must lie in [0, 1)")
    x = np.sort(np.log(_nn_ratios(points, metric)))
    k = n if trim_fraction == 0.0 else max(1, int(np.floor(n * (1.0 - trim_fraction))))
    kept = x[:k]
    total = kept.sum() + (n - k) * kept[-1]
    if total <= 0:
        raise ComplexityError("degenerate cloud: all neighbor ratios equal 1")
    return IdEstimate(dimension=float(k / total), n_used=k, trim_fraction=trim_fraction)


def weight_norm(
    tensors: Mapping[str, Tensor | np.ndarray],
    include_prefixes: Sequence[str] | None = None,
) -> float:
    """L2 norm over the selected parameter subset (default: everything)."""
    total = 0.0
    matched = False
    for name, t in tensors.items():
        if include_prefixes is not None and not any(name.startswith(p) for p in include_prefixes):
            continue
        matched = True
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        total += float((arr.astype(np.float64) ** 2).sum())
    if not matched:
        raise ComplexityError(f"no tensors match prefixes {include_prefixes}")
    return float(np.sqrt(total))


def fisher_approx(model: MaskedLanguageModel, batches: Sequence[MlmBatch]) -> float:
    """Squared L2 norm of the MLM-loss gradient (regularizer excluded),
    averaged over batches."""
    if not batches:
        raise ComplexityError("need at least one batch")
    vals = []
    for b in batches:
        with GradientTape() as tape:
            out = forward(model.params, b.input_ids, b.attention_mask, model.config,
                          collect_attention=False)
            loss = mlm_loss(out, b)
            grads = backward(loss, tape)
        vals.append(sum(float((g.data ** 2).sum()) for g in grads.values()))
    return float(np.mean(vals))


def attention_entropy_arrays(
    attentions: Sequence[np.ndarray], attention_mask: np.ndarray
) -> float:
    """Mean Shannon entropy (nats) of attention rows over valid keys,
    averaged across layers, heads, samples and valid query rows."""
    mask = np.asarray(attention_mask, dtype=bool)
    ents: list[np.ndarray] = []
    for layer in attentions:
        p = np.asarray(layer)
        plogp = np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0)
        row_ent = -plogp.sum(axis=-1)                       # (B, H, S)
        valid = np.broadcast_to(mask[:, None, :], row_ent.shape)
        ents.append(row_ent[valid])
    return float(np.concatenate(ents).mean())


def attention_entropy(model: MaskedLanguageModel, batch: MlmBatch) -> float:
    out = model.forward_ids(batch.input_ids, batch.attention_mask, collect_attention=True)
    return attention_entropy_arrays([a.data for a in out.attentions], batch.attention_mask)


def attention_by_distance_arrays(
    attentions: Sequence[np.ndarray],
    target_positions: np.ndarray,
    attention_mask: np.ndarray,
    max_offset: int,
    direction: str = "to_target",
) -> dict[int, float]:
    """Mean attention between targets and positions at each signed offset.

    ``to_target`` reads the weight the query at offset o places on the
    target (column entries); ``from_target`` reads the target row's weight
    on the key at offset o, so one row's profile sums to 1 over offsets.
    """
    if direction not in ("to_target", "from_target"):
        raise ComplexityError(f"unknown direction {direction!r}")
    mask = np.asarray(attention_mask, dtype=bool)
    targets = np.asarray(target_positions, dtype=bool)
    sums: dict[int, float] = {o: 0.0 for o in range(-max_offset, max_offset + 1)}
    counts: dict[int, int] = {o: 0 for o in sums}
    for layer in attentions:
        p = np.asarray(layer)
        B, H, S, _ = p.shape
        for b in range(B):
            t_idx = np.nonzero(targets[b])[0]
            v_idx = np.nonzero(mask[b])[0]
            valid = set(int(i) for i in v_idx)
            for t in t_idx:
                for o in sums:
                    other = t + o
                    if other not in valid:
                        continue
                    if direction == "to_target":
                        sums[o] += float(p[b, :, other, t].sum())
                    else:
                        sums[o] += float(p[b, :, t, other].sum())
                    counts[o] += H
    return {o: (sums[o] / counts[o] if counts[o] else float("nan")) for o in sums}


def attention_by_distance(
    model: MaskedLanguageModel, batch: MlmBatch, max_offset: int, direction: str = "to_target"
) -> dict[int, float]:
    out = model.forward_ids(batch.input_ids, batch.attention_mask, collect_attention=True)
    return attention_by_distance_arrays(
        [a.data for a in out.attentions], batch.mask_positions, batch.attention_mask,
        max_offset, direction,
    )


def linear_cka(x: np.ndarray, y: np.ndarray) -> float:
    """Linear CKA of column-centered activation matrices (rows aligned)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ComplexityError("activation matrices must have the same number of rows")
    xc = x - x.mean(axis=0, keepdims=True)
    yc = y - y.mean(axis=0, keepdims=True)
    cross = float(((yc.T @ xc) ** 2).sum())
    nx = float(np.linalg.norm(xc.T @ xc))
    ny = float(np.linalg.norm(yc.T @ yc))
    if nx == 0 or ny == 0:
        raise ComplexityError("zero-variance activations")
    return cross / (nx * ny)


def mean_tvd(p_a: np.ndarray, p_b: np.ndarray) -> float:
    """Half the L1 distance between matched distributions, averaged per row."""
    p_a, p_b = np.asarray(p_a), np.asarray(p_b)
    if p_a.shape != p_b.shape:
        raise ComplexityError("distribution shapes differ (vocabulary mismatch?)")
    return float(0.5 * np.abs(p_a - p_b).sum(axis=-1).mean())


def model_tvd(
    model_a: MaskedLanguageModel,
    model_b: MaskedLanguageModel,
    queries: Sequence[tuple[Sequence[int], int]],
) -> float:
    """TVD between two models' masked-token distributions on identical
    (sentence, masked position) presentations."""
    if model_a.vocab_size != model_b.vocab_size:
        raise ComplexityError("vocabulary mismatch between models")
    return mean_tvd(
        model_a.masked_probability_rows(queries),
        model_b.masked_probability_rows(queries),
    )
