"""Embedding schemes behind one trainer-facing interface.

A scheme owns its parameter arrays and knows how to encode a dataset's
categorical columns into flat index structures, embed minibatches, and turn
upstream gradients into sparse SGD updates. The trainer never branches on
the scheme; it drives this interface only.

Batch math uses ragged arrays: per (row, field) index lists are stored as a
flat index vector plus offsets (CSR style), gathered per batch with
``take_ragged`` and pooled with ``segment_sum``.
"""

from __future__ import annotations

import abc
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import (
    FullTable,
    HashTrickTable,
    QRTable,
    build_full_table,
    build_hashtrick,
    build_qr_table,
    embed_full,
    embed_qr,
)
from .encoder import (
    EncoderConfig,
    empty_signature,
    encode_token,
    encode_weight,
    pool_signatures,
)
from .errors import ConfigError
from .tables import TokenTable, WeightTable, embed, init_tables

SCHEME_NAMES = ("memrec", "full", "hashtrick", "qr")


@dataclass
class RaggedIndex:
    """Flat int64 indices plus (N+1) offsets; row i owns
    indices[offsets[i]:offsets[i+1]]."""

    indices: np.ndarray
    offsets: np.ndarray


@dataclass
class RaggedPair:
    """Two parallel flat index vectors sharing one offsets array."""

    a: np.ndarray
    b: np.ndarray
    offsets: np.ndarray


def ragged_from_rows(row_arrays: list[np.ndarray]) -> RaggedIndex:
    lengths = np.fromiter(
        (len(a) for a in row_arrays), dtype=np.int64, count=len(row_arrays)
    )
    offsets = np.zeros(len(row_arrays) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if row_arrays and offsets[-1]:
        indices = np.concatenate(row_arrays).astype(np.int64, copy=False)
    else:
        indices = np.empty(0, dtype=np.int64)
    return RaggedIndex(indices, offsets)


def take_ragged(
    ragged: RaggedIndex, rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gather the index lists of the given rows; returns (flat, lengths)."""
    starts = ragged.offsets[rows]
    lengths = ragged.offsets[rows + 1] - starts
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), lengths
    excl = np.concatenate(([0], np.cumsum(lengths[:-1])))
    pos = np.arange(total, dtype=np.int64) + np.repeat(starts - excl, lengths)
    return ragged.indices[pos], lengths


def segment_sum(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Sum consecutive runs of ``values`` of the given lengths.

    Empty runs sum to zero. values has sum(lengths) leading entries.
    """
    n = lengths.shape[0]
    out_shape = (n,) + values.shape[1:]
    out = np.zeros(out_shape, dtype=np.float64)
    nonempty = lengths > 0
    if values.shape[0]:
        # reduceat over only the nonempty starts: consecutive kept starts
        # bound exactly one nonempty run each, so the empty-segment quirk of
        # reduceat never triggers.
        starts = np.concatenate(([0], np.cumsum(lengths[:-1])))
        out[nonempty] = np.add.reduceat(values, starts[nonempty], axis=0)
    return out


def segment_ids(lengths: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(lengths.shape[0], dtype=np.int64), lengths)


class EmbeddingScheme(abc.ABC):
    """Common surface: build parameters, encode columns, batch embed/update."""

    name: str = ""

    def __init__(self, embed_dim: int):
        self.embed_dim = int(embed_dim)
        self.built = False

    # -- lifecycle ---------------------------------------------------------
    @abc.abstractmethod
    def build(self, sparse_columns: list[list[tuple[bytes, ...]]]) -> None:
        """Allocate parameters (and vocabularies where applicable)."""

    def _require_built(self):
        if not self.built:
            raise RuntimeError(f"{self.name} scheme used before build()")

    # -- dataset encoding ----------------------------------------------------
    @abc.abstractmethod
    def encode_dataset(self, sparse_columns) -> list:
        """Per-field flat index structures for the whole dataset."""

    # -- batch math ----------------------------------------------------------
    @abc.abstractmethod
    def forward_batch(self, encoded: list, rows: np.ndarray):
        """Embeddings (B, F, embed_dim) for the given row ids, plus a cache."""

    @abc.abstractmethod
    def backward_batch(self, cache, dZ: np.ndarray) -> dict:
        """Sparse gradients: array name -> (indices, per-index values)."""

    # -- parameters ----------------------------------------------------------
    @abc.abstractmethod
    def arrays(self) -> dict[str, np.ndarray]:
        """Live trainable arrays by name."""

    def apply_sparse(self, grads: dict, lr: float) -> None:
        """SGD step: arr[idx] -= lr * vals, duplicates accumulated in order."""
        store = self.arrays()
        for name, (idx, vals) in grads.items():
            if idx.size:
                np.subtract.at(store[name], idx, lr * vals)

    def param_count(self) -> int:
        self._require_built()
        return sum(arr.size for arr in self.arrays().values())

    # -- single-record path ----------------------------------------------------
    @abc.abstractmethod
    def embed_feature(self, field: int, tokens: tuple[bytes, ...]) -> np.ndarray:
        """Pooled embedding of one field of one record."""

    # -- checkpointing -----------------------------------------------------
    @abc.abstractmethod
    def meta(self) -> dict:
        """JSON-safe description sufficient to rebuild the scheme."""

    def token_lists(self) -> dict[str, list[bytes]]:
        return {}


class MemRecScheme(EmbeddingScheme):
    """Dual Bloom-encoded embedding: pooled rows of a shared matrix, rescaled
    by a learned scalar selected through an independent second encoder."""

    name = "memrec"

    def __init__(
        self, cfg: EncoderConfig, init_seed: int, freeze_alpha: bool = False
    ):
        super().__init__(cfg.l)
        self.cfg = cfg
        self.init_seed = int(init_seed)
        self.freeze_alpha = bool(freeze_alpha)
        self.token_table: TokenTable | None = None
        self.weight_table: WeightTable | None = None
        self._sig_cache: dict[tuple[int, bytes], tuple[np.ndarray, np.ndarray]] = {}

    def build(self, sparse_columns=None) -> None:
        self.token_table, self.weight_table = init_tables(self.cfg, self.init_seed)
        self.built = True

    def _indices_for(self, field: int, token: bytes):
        key = (field, token)
        hit = self._sig_cache.get(key)
        if hit is None:
            hit = (
                encode_token(self.cfg, field, token).indices,
                encode_weight(self.cfg, field, token).indices,
            )
            self._sig_cache[key] = hit
        return hit

    def encode_dataset(self, sparse_columns) -> list:
        out = []
        empty = np.empty(0, dtype=np.int64)
        for field, col in enumerate(sparse_columns):
            tok_rows, wt_rows = [], []
            for tokens in col:
                if len(tokens) == 1:
                    t_idx, w_idx = self._indices_for(field, tokens[0])
                elif not tokens:
                    t_idx = w_idx = empty
                else:
                    pairs = [self._indices_for(field, t) for t in tokens]
                    t_idx = np.unique(np.concatenate([p[0] for p in pairs]))
                    w_idx = np.unique(np.concatenate([p[1] for p in pairs]))
                tok_rows.append(t_idx)
                wt_rows.append(w_idx)
            out.append((ragged_from_rows(tok_rows), ragged_from_rows(wt_rows)))
        return out

    def forward_batch(self, encoded, rows):
        self._require_built()
        rows = np.asarray(rows, dtype=np.int64)
        B, F, l = rows.shape[0], len(encoded), self.embed_dim
        M = self.token_table.rows
        w = self.weight_table.values
        Z = np.empty((B, F, l), dtype=np.float64)
        cache = []
        for f, (tok, wt) in enumerate(encoded):
            t_flat, t_len = take_ragged(tok, rows)
            pooled = segment_sum(M[t_flat], t_len)
            if self.freeze_alpha:
                a = np.ones(B, dtype=np.float64)
                w_flat = np.empty(0, dtype=np.int64)
                w_len = np.zeros(B, dtype=np.int64)
            else:
                w_flat, w_len = take_ragged(wt, rows)
                a = segment_sum(w[w_flat], w_len)
            Z[:, f, :] = a[:, None] * pooled
            cache.append((t_flat, t_len, pooled, a, w_flat, w_len))
        return Z, cache

    def backward_batch(self, cache, dZ):
        t_idx_parts, t_val_parts = [], []
        w_idx_parts, w_val_parts = [], []
        for f, (t_flat, t_len, pooled, a, w_flat, w_len) in enumerate(cache):
            dZf = dZ[:, f, :]
            d_pooled = dZf if self.freeze_alpha else a[:, None] * dZf
            if t_flat.size:
                t_idx_parts.append(t_flat)
                t_val_parts.append(d_pooled[segment_ids(t_len)])
            if not self.freeze_alpha and w_flat.size:
                da = np.einsum("bl,bl->b", dZf, pooled)
                w_idx_parts.append(w_flat)
                w_val_parts.append(da[segment_ids(w_len)])
        grads = {}
        if t_idx_parts:
            grads["token_rows"] = (
                np.concatenate(t_idx_parts),
                np.concatenate(t_val_parts),
            )
        if w_idx_parts:
            grads["weight_values"] = (
                np.concatenate(w_idx_parts),
                np.concatenate(w_val_parts),
            )
        return grads

    def arrays(self):
        self._require_built()
        out = {"token_rows": self.token_table.rows}
        if not self.freeze_alpha:
            out["weight_values"] = self.weight_table.values
        return out

    def param_count(self) -> int:
        # Formula form (d*l + d_prime); equals the array walk when alpha is live.
        return self.cfg.d * self.cfg.l + self.cfg.d_prime

    def embed_feature(self, field, tokens):
        self._require_built()
        tsig = pool_signatures(
            [encode_token(self.cfg, field, t) for t in tokens], width=self.cfg.d
        )
        if self.freeze_alpha:
            if not tsig.popcount:
                return np.zeros(self.embed_dim, dtype=np.float64)
            return self.token_table.rows[tsig.indices].sum(axis=0)
        wsig = pool_signatures(
            [encode_weight(self.cfg, field, t) for t in tokens],
            width=self.cfg.d_prime,
        )
        return embed(self.token_table, self.weight_table, tsig, wsig)

    def meta(self):
        return {
            "scheme": self.name,
            "cfg": asdict(self.cfg),
            "init_seed": self.init_seed,
            "freeze_alpha": self.freeze_alpha,
        }


def _first_appearance_vocab(col) -> list[bytes]:
    seen = dict()
    for tokens in col:
        for t in tokens:
            if t not in seen:
                seen[t] = len(seen)
    return list(seen)


class FullTableScheme(EmbeddingScheme):
    """One dedicated row per distinct (field, token) seen at build time."""

    name = "full"

    def __init__(self, l: int, init_seed: int):
        super().__init__(l)
        self.init_seed = int(init_seed)
        self.table: FullTable | None = None

    def build(self, sparse_columns) -> None:
        vocabs = [_first_appearance_vocab(col) for col in sparse_columns]
        self.table = build_full_table(vocabs, self.embed_dim, self.init_seed)
        self.built = True

    def _build_from_state(self, vocabs, tables):
        self.table = FullTable(
            tables, [{t: i for i, t in enumerate(v)} for v in vocabs]
        )
        self.built = True

    def encode_dataset(self, sparse_columns) -> list:
        self._require_built()
        out = []
        for field, col in enumerate(sparse_columns):
            vocab = self.table.vocabs[field]
            rows = []
            for tokens in col:
                ids = [vocab[t] for t in tokens if t in vocab]
                rows.append(np.array(ids, dtype=np.int64))
            out.append(ragged_from_rows(rows))
        return out

    def forward_batch(self, encoded, rows):
        self._require_built()
        rows = np.asarray(rows, dtype=np.int64)
        B, F, l = rows.shape[0], len(encoded), self.embed_dim
        Z = np.empty((B, F, l), dtype=np.float64)
        cache = []
        for f, ragged in enumerate(encoded):
            flat, lengths = take_ragged(ragged, rows)
            Z[:, f, :] = segment_sum(self.table.field_tables[f][flat], lengths)
            cache.append((flat, lengths))
        return Z, cache

    def backward_batch(self, cache, dZ):
        grads = {}
        for f, (flat, lengths) in enumerate(cache):
            if flat.size:
                grads[f"field{f}"] = (flat, dZ[:, f, :][segment_ids(lengths)])
        return grads

    def arrays(self):
        self._require_built()
        return {
            f"field{f}": tbl for f, tbl in enumerate(self.table.field_tables)
        }

    def embed_feature(self, field, tokens):
        self._require_built()
        z = np.zeros(self.embed_dim, dtype=np.float64)
        for t in tokens:
            z += embed_full(self.table, field, t)
        return z

    def meta(self):
        return {
            "scheme": self.name,
            "l": self.embed_dim,
            "init_seed": self.init_seed,
            "num_fields": self.table.num_fields if self.table else 0,
        }

    def token_lists(self):
        self._require_built()
        out = {}
        for f, vocab in enumerate(self.table.vocabs):
            ordered = sorted(vocab, key=vocab.get)
            out[f"field{f}_vocab"] = ordered
        return out


class HashTrickScheme(EmbeddingScheme):
    """All fields share one matrix; one hash maps (field, token) to its row."""

    name = "hashtrick"

    def __init__(self, rows: int, l: int, hash_seed: int, init_seed: int):
        super().__init__(l)
        self.rows = int(rows)
        self.hash_seed = int(hash_seed)
        self.init_seed = int(init_seed)
        self.table: HashTrickTable | None = None
        self._row_cache: dict[tuple[int, bytes], int] = {}

    def build(self, sparse_columns=None) -> None:
        self.table = build_hashtrick(
            self.rows, self.embed_dim, self.hash_seed, self.init_seed
        )
        self.built = True

    def _row_for(self, field: int, token: bytes) -> int:
        key = (field, token)
        hit = self._row_cache.get(key)
        if hit is None:
            hit = self.table.row_index(field, token)
            self._row_cache[key] = hit
        return hit

    def encode_dataset(self, sparse_columns) -> list:
        self._require_built()
        out = []
        for field, col in enumerate(sparse_columns):
            rows = [
                np.array(
                    [self._row_for(field, t) for t in tokens], dtype=np.int64
                )
                for tokens in col
            ]
            out.append(ragged_from_rows(rows))
        return out

    def forward_batch(self, encoded, rows):
        self._require_built()
        rows = np.asarray(rows, dtype=np.int64)
        B, F, l = rows.shape[0], len(encoded), self.embed_dim
        Z = np.empty((B, F, l), dtype=np.float64)
        cache = []
        for f, ragged in enumerate(encoded):
            flat, lengths = take_ragged(ragged, rows)
            Z[:, f, :] = segment_sum(self.table.rows[flat], lengths)
            cache.append((flat, lengths))
        return Z, cache

    def backward_batch(self, cache, dZ):
        idx_parts, val_parts = [], []
        for f, (flat, lengths) in enumerate(cache):
            if flat.size:
                idx_parts.append(flat)
                val_parts.append(dZ[:, f, :][segment_ids(lengths)])
        if not idx_parts:
            return {}
        return {"rows": (np.concatenate(idx_parts), np.concatenate(val_parts))}

    def arrays(self):
        self._require_built()
        return {"rows": self.table.rows}

    def embed_feature(self, field, tokens):
        self._require_built()
        z = np.zeros(self.embed_dim, dtype=np.float64)
        for t in tokens:
            z += self.table.rows[self._row_for(field, t)]
        return z

    def meta(self):
        return {
            "scheme": self.name,
            "rows": self.rows,
            "l": self.embed_dim,
            "hash_seed": self.hash_seed,
            "init_seed": self.init_seed,
        }


class QRScheme(EmbeddingScheme):
    """Compositional embedding: quotient row times remainder row per token."""

    name = "qr"

    def __init__(self, l: int, buckets: int, init_seed: int):
        super().__init__(l)
        self.buckets = int(buckets)
        self.init_seed = int(init_seed)
        self.table: QRTable | None = None

    def build(self, sparse_columns) -> None:
        vocabs = [_first_appearance_vocab(col) for col in sparse_columns]
        self.table = build_qr_table(
            vocabs, self.embed_dim, self.buckets, self.init_seed
        )
        self.built = True

    def encode_dataset(self, sparse_columns) -> list:
        self._require_built()
        b = self.table.bucket_count
        out = []
        for field, col in enumerate(sparse_columns):
            vocab = self.table.vocabs[field]
            q_rows, r_rows = [], []
            for tokens in col:
                ids = np.array(
                    [vocab[t] for t in tokens if t in vocab], dtype=np.int64
                )
                q_rows.append(ids // b)
                r_rows.append(ids % b)
            q = ragged_from_rows(q_rows)
            r = ragged_from_rows(r_rows)
            out.append(RaggedPair(q.indices, r.indices, q.offsets))
        return out

    def forward_batch(self, encoded, rows):
        self._require_built()
        rows = np.asarray(rows, dtype=np.int64)
        B, F, l = rows.shape[0], len(encoded), self.embed_dim
        Z = np.empty((B, F, l), dtype=np.float64)
        cache = []
        for f, pair in enumerate(encoded):
            ragged_q = RaggedIndex(pair.a, pair.offsets)
            q_flat, lengths = take_ragged(ragged_q, rows)
            ragged_r = RaggedIndex(pair.b, pair.offsets)
            r_flat, _ = take_ragged(ragged_r, rows)
            qg = self.table.quotient[f][q_flat]
            rg = self.table.remainder[f][r_flat]
            Z[:, f, :] = segment_sum(qg * rg, lengths)
            cache.append((q_flat, r_flat, lengths, qg, rg))
        return Z, cache

    def backward_batch(self, cache, dZ):
        grads = {}
        for f, (q_flat, r_flat, lengths, qg, rg) in enumerate(cache):
            if q_flat.size:
                d = dZ[:, f, :][segment_ids(lengths)]
                grads[f"q{f}"] = (q_flat, d * rg)
                grads[f"r{f}"] = (r_flat, d * qg)
        return grads

    def arrays(self):
        self._require_built()
        out = {}
        for f in range(len(self.table.quotient)):
            out[f"q{f}"] = self.table.quotient[f]
            out[f"r{f}"] = self.table.remainder[f]
        return out

    def embed_feature(self, field, tokens):
        self._require_built()
        vocab = self.table.vocabs[field]
        z = np.zeros(self.embed_dim, dtype=np.float64)
        for t in tokens:
            tid = vocab.get(t)
            if tid is not None:
                z += embed_qr(self.table, field, tid)
        return z

    def meta(self):
        return {
            "scheme": self.name,
            "l": self.embed_dim,
            "buckets": self.buckets,
            "init_seed": self.init_seed,
            "num_fields": len(self.table.quotient) if self.table else 0,
        }

    def token_lists(self):
        self._require_built()
        out = {}
        for f, vocab in enumerate(self.table.vocabs):
            out[f"field{f}_vocab"] = sorted(vocab, key=vocab.get)
        return out


def make_scheme(
    scheme: str,
    *,
    l: int,
    cfg: EncoderConfig | None = None,
    init_seed: int = 0,
    hashtrick_rows: int = 65536,
    qr_buckets: int = 64,
    freeze_alpha: bool = False,
    hash_seed: int | None = None,
) -> EmbeddingScheme:
    if scheme == "memrec":
        if cfg is None:
            raise ConfigError("memrec scheme needs an encoder config")
        if cfg.l != l:
            raise ConfigError(f"embedding dim mismatch: cfg.l={cfg.l}, l={l}")
        return MemRecScheme(cfg, init_seed, freeze_alpha=freeze_alpha)
    if scheme == "full":
        return FullTableScheme(l, init_seed)
    if scheme == "hashtrick":
        if hash_seed is None:
            hash_seed = cfg.hash_seed if cfg is not None else 0
        return HashTrickScheme(hashtrick_rows, l, hash_seed, init_seed)
    if scheme == "qr":
        return QRScheme(l, qr_buckets, init_seed)
    raise ConfigError(
        f"unknown embedding_scheme {scheme!r}; expected one of {SCHEME_NAMES}"
    )


def scheme_from_state(
    meta: dict, arrays: dict[str, np.ndarray], token_lists: dict[str, list[bytes]]
) -> EmbeddingScheme:
    """Rebuild a scheme from checkpoint pieces, restoring its arrays."""
    name = meta["scheme"]
    if name == "memrec":
        sch = MemRecScheme(
            EncoderConfig(**meta["cfg"]),
            meta["init_seed"],
            freeze_alpha=meta.get("freeze_alpha", False),
        )
        sch.token_table = TokenTable(np.asarray(arrays["token_rows"], dtype=np.float64))
        wv = arrays.get("weight_values")
        if wv is None:
            wv = np.full(sch.cfg.d_prime, 1.0 / sch.cfg.k_prime)
        sch.weight_table = WeightTable(np.asarray(wv, dtype=np.float64))
        sch.built = True
        return sch
    if name == "full":
        sch = FullTableScheme(meta["l"], meta["init_seed"])
        n = meta["num_fields"]
        vocabs = [token_lists[f"field{f}_vocab"] for f in range(n)]
        tables = [
            np.asarray(arrays[f"field{f}"], dtype=np.float64) for f in range(n)
        ]
        sch._build_from_state(vocabs, tables)
        return sch
    if name == "hashtrick":
        sch = HashTrickScheme(
            meta["rows"], meta["l"], meta["hash_seed"], meta["init_seed"]
        )
        sch.build()
        sch.table.rows[:] = np.asarray(arrays["rows"], dtype=np.float64)
        return sch
    if name == "qr":
        sch = QRScheme(meta["l"], meta["buckets"], meta["init_seed"])
        n = meta["num_fields"]
        vocabs = [token_lists[f"field{f}_vocab"] for f in range(n)]
        sch.table = QRTable(
            [np.asarray(arrays[f"q{f}"], dtype=np.float64) for f in range(n)],
            [np.asarray(arrays[f"r{f}"], dtype=np.float64) for f in range(n)],
            meta["buckets"],
            [{t: i for i, t in enumerate(v)} for v in vocabs],
        )
        sch.built = True
        return sch
    raise ConfigError(f"unknown scheme in checkpoint: {name!r}")
