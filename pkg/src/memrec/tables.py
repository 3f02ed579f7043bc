"""Trainable state of the compressed embedding: a row matrix plus a scalar
weight table, with the exact forward/backward math for one pooled feature.

Given a pooled token signature (index set J in [0, d)) and weight signature
(index set I in [0, d_prime)), the embedding of a feature is

    z = alpha * sum_{j in J} rows[j],    alpha = sum_{i in I} values[i].

The backward pass distributes an upstream gradient g (shape (l,)) as

    d rows[j]  = alpha * g          for every j in J,
    d values[i] = g . r             for every i in I,  r = sum_{j in J} rows[j],

touching at most |J| rows and |I| scalars per feature.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_blobs, save_blobs
from .encoder import EncoderConfig, Signature
from .errors import DataError
from .validation import check_seed64

__all__ = [
    "TokenTable",
    "WeightTable",
    "EmbeddingGrad",
    "init_tables",
    "alpha",
    "embed",
    "embed_backward",
    "apply_grad",
    "save_tables",
    "load_tables",
]


@dataclass
class TokenTable:
    """Shared embedding matrix; token signature bits index its rows."""

    rows: np.ndarray  # (d, l) float64

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError("token table must be a (d, l) matrix")


@dataclass
class WeightTable:
    """Scalar weights; weight signature bits index its entries."""

    values: np.ndarray  # (d_prime,) float64

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("weight table must be a flat vector")


@dataclass
class EmbeddingGrad:
    """Sparse gradient of one embedded feature."""

    token_rows: dict[int, np.ndarray]
    weight_entries: dict[int, float]


def init_tables(
    cfg: EncoderConfig, init_seed: int
) -> tuple[TokenTable, WeightTable]:
    """Fresh tables: rows ~ U(-1/sqrt(l), 1/sqrt(l)), weights all 1/k_prime.

    The weight init makes alpha of any fresh token exactly 1 when its
    k_prime hash functions land on distinct entries, so training starts from
    plain pooled-row embeddings.
    """
    rng = np.random.default_rng(check_seed64("init_seed", init_seed))
    bound = 1.0 / math.sqrt(cfg.l)
    rows = rng.uniform(-bound, bound, size=(cfg.d, cfg.l))
    values = np.full(cfg.d_prime, 1.0 / cfg.k_prime, dtype=np.float64)
    return TokenTable(rows), WeightTable(values)


def _check_range(sig: Signature, size: int, what: str) -> None:
    if sig.popcount and int(sig.indices[-1]) >= size:
        raise ValueError(f"{what} index {sig.indices[-1]} out of range [0, {size})")


def alpha(weight_table: WeightTable, wsig: Signature) -> float:
    """Scalar rescaler: sum of the weight entries the signature selects."""
    _check_range(wsig, weight_table.values.size, "weight signature")
    if not wsig.popcount:
        return 0.0
    return float(weight_table.values[wsig.indices].sum())


def embed(
    token_table: TokenTable,
    weight_table: WeightTable,
    tsig: Signature,
    wsig: Signature,
) -> np.ndarray:
    """Embedding of one pooled feature; empty token signature gives zeros."""
    _check_range(tsig, token_table.rows.shape[0], "token signature")
    if not tsig.popcount:
        return np.zeros(token_table.rows.shape[1], dtype=np.float64)
    pooled = token_table.rows[tsig.indices].sum(axis=0)
    return alpha(weight_table, wsig) * pooled


def embed_backward(
    token_table: TokenTable,
    weight_table: WeightTable,
    tsig: Signature,
    wsig: Signature,
    upstream_grad: np.ndarray,
) -> EmbeddingGrad:
    """Exact gradient of embed() w.r.t. both tables for one feature."""
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (token_table.rows.shape[1],):
        raise ValueError(
            f"upstream gradient shape {g.shape} != ({token_table.rows.shape[1]},)"
        )
    _check_range(tsig, token_table.rows.shape[0], "token signature")
    _check_range(wsig, weight_table.values.size, "weight signature")
    a = alpha(weight_table, wsig)
    token_rows = {int(j): a * g for j in tsig.indices}
    if tsig.popcount:
        pooled = token_table.rows[tsig.indices].sum(axis=0)
        dot = float(g @ pooled)
    else:
        dot = 0.0
    weight_entries = {int(i): dot for i in wsig.indices}
    return EmbeddingGrad(token_rows, weight_entries)


def apply_grad(
    token_table: TokenTable,
    weight_table: WeightTable,
    grad: EmbeddingGrad,
    lr: float,
) -> tuple[TokenTable, WeightTable]:
    """One SGD step. Mutates the tables in place and returns them."""
    for j, vec in grad.token_rows.items():
        token_table.rows[j] -= lr * vec
    for i, val in grad.weight_entries.items():
        weight_table.values[i] -= lr * val
    return token_table, weight_table


def save_tables(
    path,
    cfg: EncoderConfig,
    token_table: TokenTable,
    weight_table: WeightTable,
    dtype: str = "float32",
) -> None:
    """Persist tables (float32 payload by default to halve the footprint)."""
    save_blobs(
        path,
        kind="tables",
        meta={"cfg": asdict(cfg), "dtype": np.dtype(dtype).str},
        arrays={
            "token_rows": token_table.rows.astype(dtype),
            "weight_values": weight_table.values.astype(dtype),
        },
    )


def load_tables(path) -> tuple[EncoderConfig, TokenTable, WeightTable]:
    kind, meta, arrays, _ = load_blobs(path)
    if kind != "tables":
        raise DataError(f"{path}: expected a tables checkpoint, got {kind!r}")
    cfg = EncoderConfig(**meta["cfg"])
    tt = TokenTable(arrays["token_rows"])
    wt = WeightTable(arrays["weight_values"])
    if tt.rows.shape != (cfg.d, cfg.l) or wt.values.shape != (cfg.d_prime,):
        raise DataError(f"{path}: table shapes disagree with stored config")
    return cfg, tt, wt
