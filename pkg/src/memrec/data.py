"""Dataset ingestion and synthesis.

Two sources feed the trainer: Criteo-format TSV files (label, integer dense
columns, hex-token categorical columns) and a synthetic generator that plants
a known per-token signal so accuracy experiments have an oracle ceiling. The
generator persists in the same TSV dialect, so both paths share one parser.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError
from .validation import check_fraction, check_positive_int, check_seed64

logger = logging.getLogger(__name__)

NUM_DENSE_DEFAULT = 13

# Maximum tolerated fraction of malformed lines before parsing hard-fails.
MALFORMED_LIMIT = 0.01


@dataclass(frozen=True)
class Record:
    """One labelled example with transformed dense features.

    sparse holds, per categorical field, a tuple of raw token byte strings;
    an empty tuple marks a missing value.
    """

    label: int
    dense: np.ndarray
    sparse: tuple[tuple[bytes, ...], ...]


@dataclass(frozen=True)
class DatasetMeta:
    num_rows: int
    num_dense: int
    num_fields: int
    cardinalities: tuple[int, ...]  # distinct observed tokens per field, >= 1


class Dataset:
    """Column-oriented in-memory dataset.

    labels: (N,) int8; dense: (N, num_dense) float64 post-transform;
    sparse[f][i]: tuple of token byte strings for field f, row i.
    """

    def __init__(
        self,
        labels: np.ndarray,
        dense: np.ndarray,
        sparse: list[list[tuple[bytes, ...]]],
    ):
        self.labels = np.asarray(labels, dtype=np.int8)
        self.dense = np.asarray(dense, dtype=np.float64)
        self.sparse = sparse
        n = self.labels.shape[0]
        if self.dense.ndim != 2 or self.dense.shape[0] != n:
            raise ValueError("dense matrix shape disagrees with labels")
        for col in sparse:
            if len(col) != n:
                raise ValueError("sparse column length disagrees with labels")

    @property
    def num_rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_fields(self) -> int:
        return len(self.sparse)

    @property
    def num_dense(self) -> int:
        return int(self.dense.shape[1])

    def meta(self) -> DatasetMeta:
        cards = tuple(
            max(1, len({t for toks in col for t in toks})) for col in self.sparse
        )
        return DatasetMeta(self.num_rows, self.num_dense, self.num_fields, cards)

    def row(self, i: int) -> Record:
        return Record(
            int(self.labels[i]),
            self.dense[i],
            tuple(col[i] for col in self.sparse),
        )

    def iter_records(self) -> Iterator[Record]:
        for i in range(self.num_rows):
            yield self.row(i)

    def slice(self, start: int, stop: int) -> "Dataset":
        return Dataset(
            self.labels[start:stop],
            self.dense[start:stop],
            [col[start:stop] for col in self.sparse],
        )

    @classmethod
    def from_records(cls, records) -> "Dataset":
        labels, dense, rows = [], [], []
        for rec in records:
            labels.append(rec.label)
            dense.append(np.asarray(rec.dense, dtype=np.float64))
            rows.append(rec.sparse)
        if not labels:
            raise DataError("dataset is empty")
        num_fields = len(rows[0])
        for r in rows:
            if len(r) != num_fields:
                raise DataError("records disagree on categorical field count")
        sparse = [[r[f] for r in rows] for f in range(num_fields)]
        return cls(np.array(labels, dtype=np.int8), np.vstack(dense), sparse)


def transform_dense(raw) -> np.ndarray:
    """Criteo-standard dense transform: x -> ln(1 + max(x, 0))."""
    arr = np.asarray(raw, dtype=np.float64)
    return np.log1p(np.maximum(arr, 0.0))


def parse_criteo_tsv(
    path, num_dense: int = NUM_DENSE_DEFAULT, num_sparse: int | None = None
) -> Iterator[Record]:
    """Stream Records from a TSV file.

    Columns: label, ``num_dense`` integer cells, then categorical hex-token
    cells (count taken from the first well-formed line when ``num_sparse`` is
    None). Empty dense cells read as 0; empty categorical cells become
    missing values. Malformed lines are counted and skipped; if they exceed
    1% of the file a DataError is raised once the stream is exhausted.
    """
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    total = 0
    malformed = 0
    with fh:
        for raw in fh:
            line = raw.rstrip("\r\n")
            if not line:
                continue
            total += 1
            parts = line.split("\t")
            if num_sparse is None:
                if len(parts) <= 1 + num_dense:
                    malformed += 1
                    continue
                num_sparse = len(parts) - 1 - num_dense
            if len(parts) != 1 + num_dense + num_sparse:
                malformed += 1
                continue
            if parts[0] not in ("0", "1"):
                malformed += 1
                continue
            try:
                raw_dense = [int(c) if c else 0 for c in parts[1 : 1 + num_dense]]
            except ValueError:
                malformed += 1
                continue
            sparse = tuple(
                (c.encode("utf-8"),) if c else () for c in parts[1 + num_dense :]
            )
            yield Record(int(parts[0]), transform_dense(raw_dense), sparse)
    if total and malformed / total > MALFORMED_LIMIT:
        raise DataError(
            f"{path}: {malformed}/{total} malformed lines exceeds the "
            f"{MALFORMED_LIMIT:.0%} limit"
        )
    if malformed:
        logger.warning("%s: skipped %d/%d malformed lines", path, malformed, total)


def load_tsv(
    path, num_dense: int = NUM_DENSE_DEFAULT, num_sparse: int | None = None
) -> Dataset:
    return Dataset.from_records(parse_criteo_tsv(path, num_dense, num_sparse))


def split_temporal(
    dataset: Dataset, train_frac: float, val_frac: float
) -> tuple[Dataset, Dataset, Dataset]:
    """Order-preserving contiguous split; sizes are floor(n * frac)."""
    train_frac = check_fraction("train_frac", train_frac)
    val_frac = check_fraction("val_frac", val_frac)
    if train_frac + val_frac > 1.0 + 1e-12:
        raise ConfigError("train_frac + val_frac must not exceed 1")
    n = dataset.num_rows
    n_train = int(n * train_frac)
    n_val = int(n * val_frac)
    return (
        dataset.slice(0, n_train),
        dataset.slice(n_train, n_train + n_val),
        dataset.slice(n_train + n_val, n),
    )


# Synthetic generator constants. Dense raw values are uniform on {0..6}
# (variance 4 per column); the label logit uses
#   signal_strength * sum_f score[f, token_f] + beta . (dense - 3) + noise
# with per-token scores N(SCORE_SHIFT/fields, 1/fields) so the token term has
# unit variance and a small positive mean: label rate is exactly 1/2 at
# signal 0 and rises with signal_strength.
SCORE_SHIFT = 0.25
DENSE_LEVELS = 7


@dataclass
class SyntheticData:
    """Raw (pre-transform) synthetic table that serializes to the TSV dialect."""

    labels: np.ndarray  # (N,) int8
    dense_raw: np.ndarray  # (N, 13) int64
    token_ids: np.ndarray  # (N, F) int64
    logits: np.ndarray  # (N,) the generating logit, an oracle score
    vocab_per_field: int

    @staticmethod
    def token_bytes(token_id: int) -> bytes:
        return b"%08x" % token_id

    def lines(self) -> Iterator[str]:
        for i in range(self.labels.shape[0]):
            cells = [str(int(self.labels[i]))]
            cells += [str(int(v)) for v in self.dense_raw[i]]
            cells += ["%08x" % t for t in self.token_ids[i]]
            yield "\t".join(cells)

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def to_dataset(self) -> Dataset:
        n, f = self.token_ids.shape
        sparse = [
            [(self.token_bytes(int(t)),) for t in self.token_ids[:, j]]
            for j in range(f)
        ]
        return Dataset(
            self.labels.copy(), transform_dense(self.dense_raw), sparse
        )


def zipf_probs(vocab: int, exponent: float = 1.05) -> np.ndarray:
    ranks = np.arange(1, vocab + 1, dtype=np.float64)
    p = ranks ** (-exponent)
    return p / p.sum()


def synth_generate(
    seed: int,
    rows: int,
    fields: int,
    vocab_per_field: int,
    signal_strength: float,
) -> SyntheticData:
    """Generate a synthetic CTR table with planted per-token structure.

    Tokens are Zipf(1.05)-distributed over each field's vocab. Hidden
    per-(field, token) scores are fixed by the seed, so the generating logit
    is available as an oracle score ceiling. Draw order is fixed, making the
    output byte-identical for a given argument tuple.
    """
    check_seed64("seed", seed)
    rows = check_positive_int("rows", rows)
    fields = check_positive_int("fields", fields)
    vocab_per_field = check_positive_int("vocab_per_field", vocab_per_field)
    signal_strength = float(signal_strength)
    if signal_strength < 0:
        raise ConfigError("signal_strength must be nonnegative")

    rng = np.random.default_rng(seed)
    scores = rng.normal(
        loc=SCORE_SHIFT / fields,
        scale=1.0 / np.sqrt(fields),
        size=(fields, vocab_per_field),
    )
    token_ids = rng.choice(
        vocab_per_field, size=(rows, fields), p=zipf_probs(vocab_per_field)
    )
    dense_raw = rng.integers(0, DENSE_LEVELS, size=(rows, NUM_DENSE_DEFAULT))
    noise = rng.normal(size=rows)

    beta = 1.0 / (2.0 * np.sqrt(NUM_DENSE_DEFAULT))
    token_term = scores[np.arange(fields), token_ids].sum(axis=1)
    dense_term = beta * (dense_raw - (DENSE_LEVELS - 1) / 2.0).sum(axis=1)
    logits = signal_strength * token_term + dense_term + noise
    labels = (rng.random(rows) < expit(logits)).astype(np.int8)
    return SyntheticData(
        labels, dense_raw.astype(np.int64), token_ids.astype(np.int64),
        logits, vocab_per_field,
    )
