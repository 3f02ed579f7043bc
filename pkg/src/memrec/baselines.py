"""Reference embedding schemes: full per-token table, hashing trick, QR.

These are the comparison points the compressed scheme is judged against.
Each stores its tables at full float64 precision like the token table, and
initializes rows from the same uniform(-1/sqrt(l), 1/sqrt(l)) distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hashing import HashFamily, hash_token
from .validation import check_positive_int, check_seed64


def _init_rows(rng: np.random.Generator, rows: int, l: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(l)
    return rng.uniform(-bound, bound, size=(rows, l))


@dataclass
class FullTable:
    """One row per distinct (field, token) observed at build time."""

    field_tables: list[np.ndarray]  # per field, (m_f, l)
    vocabs: list[dict[bytes, int]]  # token -> row index

    @property
    def num_fields(self) -> int:
        return len(self.field_tables)


def build_full_table(
    field_vocabs: list[list[bytes]], l: int, init_seed: int
) -> FullTable:
    """field_vocabs[f] lists field f's distinct tokens in a fixed order."""
    check_positive_int("l", l)
    rng = np.random.default_rng(check_seed64("init_seed", init_seed))
    tables, vocabs = [], []
    for toks in field_vocabs:
        vocab = {t: i for i, t in enumerate(toks)}
        if len(vocab) != len(toks):
            raise ValueError("field vocab contains duplicate tokens")
        tables.append(_init_rows(rng, max(1, len(toks)), l))
        vocabs.append(vocab)
    return FullTable(tables, vocabs)


def embed_full(table: FullTable, field: int, token: bytes) -> np.ndarray:
    """The token's dedicated row; unseen tokens embed as zeros."""
    vocab = table.vocabs[field]
    rows = table.field_tables[field]
    idx = vocab.get(token)
    if idx is None:
        return np.zeros(rows.shape[1], dtype=np.float64)
    return rows[idx].copy()


@dataclass
class HashTrickTable:
    """Single shared matrix; one hash function maps (field, token) to a row."""

    rows: np.ndarray  # (d_ht, l)
    family: HashFamily  # num_funcs == 1

    def row_index(self, field: int, token: bytes) -> int:
        return int(hash_token(self.family, field, token)[0])


def build_hashtrick(
    d_ht: int, l: int, hash_seed: int, init_seed: int
) -> HashTrickTable:
    check_positive_int("d_ht", d_ht)
    check_positive_int("l", l)
    # Same family derivation and row init as the compressed scheme's token
    # path, so a k=1 unit-alpha configuration reproduces this table exactly.
    from .encoder import EncoderConfig

    cfg = EncoderConfig(k=1, k_prime=1, d=d_ht, d_prime=1, l=l, hash_seed=hash_seed)
    rng = np.random.default_rng(check_seed64("init_seed", init_seed))
    return HashTrickTable(_init_rows(rng, d_ht, l), cfg.token_family)


def embed_hashtrick(table: HashTrickTable, field: int, token: bytes) -> np.ndarray:
    return table.rows[table.row_index(field, token)].copy()


@dataclass
class QRTable:
    """Compositional tables: token id splits into quotient and remainder rows
    whose elementwise product forms the embedding."""

    quotient: list[np.ndarray]  # per field, (ceil(m_f / b), l)
    remainder: list[np.ndarray]  # per field, (b, l)
    bucket_count: int
    vocabs: list[dict[bytes, int]] = field(default_factory=list)


def build_qr_table(
    field_vocabs: list[list[bytes]], l: int, bucket_count: int, init_seed: int
) -> QRTable:
    check_positive_int("l", l)
    b = check_positive_int("bucket_count", bucket_count)
    rng = np.random.default_rng(check_seed64("init_seed", init_seed))
    quotient, remainder, vocabs = [], [], []
    for toks in field_vocabs:
        vocab = {t: i for i, t in enumerate(toks)}
        if len(vocab) != len(toks):
            raise ValueError("field vocab contains duplicate tokens")
        m = max(1, len(toks))
        quotient.append(_init_rows(rng, math.ceil(m / b), l))
        remainder.append(_init_rows(rng, b, l))
        vocabs.append(vocab)
    return QRTable(quotient, remainder, b, vocabs)


def embed_qr(table: QRTable, field: int, token_id: int) -> np.ndarray:
    """Elementwise product of quotient row (id // b) and remainder row (id % b)."""
    q = table.quotient[field]
    r = table.remainder[field]
    token_id = int(token_id)
    b = table.bucket_count
    if not 0 <= token_id < q.shape[0] * b:
        raise ValueError(f"token id {token_id} out of range for field {field}")
    return q[token_id // b] * r[token_id % b]
