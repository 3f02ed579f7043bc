"""Evaluation metrics, parameter/byte accounting, and collision statistics."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np
from scipy.stats import rankdata

from .encoder import EncoderConfig, encode_token, encode_weight
from .errors import ConfigError, UndefinedMetricError

BYTES_PER_PARAM = 4  # float32 storage


def roc_auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties at 1/2.

    Mann-Whitney rank-sum formulation with average ranks, O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined: {n_pos} positives, {n_neg} negatives"
        )
    ranks = rankdata(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mlp_param_count(layer_sizes) -> int:
    """Weights plus biases for a dense chain of the given layer sizes."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        return 0
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def embedding_param_count(
    scheme: str,
    *,
    l: int,
    d: int = 0,
    d_prime: int = 0,
    vocab_sizes=(),
    hashtrick_rows: int = 0,
    qr_buckets: int = 0,
) -> int:
    """Embedding parameters by scheme.

    memrec: d*l + d_prime. full: sum_f m_f*l. hashtrick: rows*l.
    qr: sum_f (ceil(m_f / b) + b) * l.
    """
    if scheme == "memrec":
        return d * l + d_prime
    if scheme == "full":
        return sum(int(m) * l for m in vocab_sizes)
    if scheme == "hashtrick":
        return hashtrick_rows * l
    if scheme == "qr":
        b = qr_buckets
        return sum((math.ceil(int(m) / b) + b) * l for m in vocab_sizes)
    raise ConfigError(f"unknown embedding scheme {scheme!r}")


def count_params(
    scheme: str,
    *,
    l: int,
    mlp_bot=(),
    mlp_top=(),
    **scheme_sizes,
) -> dict:
    """Full accounting: embedding + MLP parameters and float32 bytes."""
    emb = embedding_param_count(scheme, l=l, **scheme_sizes)
    mlp = mlp_param_count(mlp_bot) + mlp_param_count(mlp_top)
    total = emb + mlp
    return {
        "embedding_params": emb,
        "mlp_params": mlp,
        "total": total,
        "bytes_at_f32": BYTES_PER_PARAM * total,
    }


def compression_ratio(
    full_counts: dict, compressed_counts: dict, include_mlp: bool = False
) -> float:
    """Bytes of the uncompressed scheme over bytes of the compressed one.

    Defaults to embedding parameters only; include_mlp compares whole models.
    """
    key = "total" if include_mlp else "embedding_params"
    num = full_counts[key] * BYTES_PER_PARAM
    den = compressed_counts[key] * BYTES_PER_PARAM
    if den <= 0:
        raise ValueError("compressed size must be positive")
    return num / den


def collision_stats(cfg: EncoderConfig, tokens, field_id: int = 0) -> dict:
    """Collision profile of a token sample under both encoders.

    pair_full_collision_rate: fraction of distinct-token pairs whose token
    signatures are identical. unresolved_pair_rate: fraction identical in
    BOTH signatures; those pairs stay indistinguishable even after the
    scalar rescaling, so this rate is never above the former.
    """
    toks = list(dict.fromkeys(tokens))  # dedupe, keep order
    n = len(toks)
    if n < 2:
        raise ValueError("need at least two distinct tokens")
    tsigs = [encode_token(cfg, field_id, t) for t in toks]
    wsigs = [encode_weight(cfg, field_id, t) for t in toks]

    popcounts = np.array([s.popcount for s in tsigs], dtype=np.int64)
    loads = np.bincount(
        np.concatenate([s.indices for s in tsigs]), minlength=cfg.d
    )
    load_values, load_counts = np.unique(loads, return_counts=True)

    def pair_count(groups: Counter) -> int:
        return sum(c * (c - 1) // 2 for c in groups.values())

    full_pairs = pair_count(Counter(tsigs))
    unresolved_pairs = pair_count(
        Counter((t, w) for t, w in zip(tsigs, wsigs))
    )
    total_pairs = n * (n - 1) // 2
    return {
        "num_tokens": n,
        "mean_popcount": float(popcounts.mean()),
        "per_bit_load_histogram": {
            int(v): int(c) for v, c in zip(load_values, load_counts)
        },
        "full_collision_pairs": int(full_pairs),
        "unresolved_pairs": int(unresolved_pairs),
        "pair_full_collision_rate": full_pairs / total_pairs,
        "unresolved_pair_rate": unresolved_pairs / total_pairs,
    }
