"""Bloom-style categorical encoders producing sparse binary signatures.

A categorical token is encoded twice, against two independent hash families:

* the token encoder sets up to ``k`` bits in a width-``d`` vector; pooled
  (multi-token) features take the union of per-token signatures, and the
  resulting index set selects which rows of the shared embedding matrix are
  summed;
* the weight encoder sets up to ``k_prime`` bits in a width-``d_prime``
  vector, selecting entries of a learned scalar table whose sum rescales the
  pooled embedding. Its purpose is to separate tokens whose token signatures
  fully collide.

Signatures are stored sparsely as sorted unique index arrays; ``densify`` and
``sparsify`` convert to and from explicit 0/1 vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .hashing import HashFamily, hash_token, make_family, mix64
from .validation import check_positive_int, check_seed64

# Derivation tags keep the two encoders' hash families independent even
# though they share one user-facing seed.
_TOKEN_TAG = 0x746F6B
_WEIGHT_TAG = 0x776774

DEFAULT_HASH_SEED = 0x5EED


@dataclass(frozen=True)
class EncoderConfig:
    """Hyperparameters of the dual-encoder embedding scheme.

    k / k_prime: hash functions per token in the token / weight encoder.
    d / d_prime: bit-vector widths, i.e. row count of the embedding matrix
        and entry count of the scalar weight table.
    l: embedding dimension (row length).
    hash_seed: master seed both hash families are derived from.
    """

    k: int = 2
    k_prime: int = 2
    d: int = 4096
    d_prime: int = 4096
    l: int = 16
    hash_seed: int = DEFAULT_HASH_SEED

    def __post_init__(self):
        for name in ("k", "k_prime", "d", "d_prime", "l"):
            check_positive_int(name, getattr(self, name))
        check_seed64("hash_seed", self.hash_seed)
        if self.k > self.d:
            raise ConfigError(f"k ({self.k}) must not exceed d ({self.d})")
        if self.k_prime > self.d_prime:
            raise ConfigError(
                f"k_prime ({self.k_prime}) must not exceed d_prime ({self.d_prime})"
            )

    @cached_property
    def token_family(self) -> HashFamily:
        return make_family(self.k, self.d, mix64(self.hash_seed ^ _TOKEN_TAG))

    @cached_property
    def weight_family(self) -> HashFamily:
        return make_family(
            self.k_prime, self.d_prime, mix64(self.hash_seed ^ _WEIGHT_TAG)
        )


@dataclass(frozen=True, eq=False)
class Signature:
    """A sparse binary vector: sorted unique set bit positions plus width."""

    indices: np.ndarray
    width: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("signature indices must be one-dimensional")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("signature indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.width:
                raise ValueError(
                    f"signature indices must lie in [0, {self.width})"
                )
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def popcount(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Signature):
            return NotImplemented
        return self.width == other.width and np.array_equal(
            self.indices, other.indices
        )

    def __hash__(self) -> int:
        return hash((self.width, self.indices.tobytes()))


# The two encoders produce structurally identical objects; distinct aliases
# keep call sites readable.
TokenSignature = Signature
WeightSignature = Signature


def empty_signature(width: int) -> Signature:
    return Signature(np.empty(0, dtype=np.int64), width)


def encode_token(cfg: EncoderConfig, field_id: int, token) -> Signature:
    """Token signature: up to k set bits in a width-d vector."""
    return Signature(hash_token(cfg.token_family, field_id, token), cfg.d)


def encode_weight(cfg: EncoderConfig, field_id: int, token) -> Signature:
    """Weight signature: up to k_prime set bits in a width-d_prime vector."""
    return Signature(hash_token(cfg.weight_family, field_id, token), cfg.d_prime)


def pool_signatures(
    sigs: Sequence[Signature], width: int | None = None
) -> Signature:
    """Union of signatures (bitwise OR of the dense views).

    All inputs must share one width. An empty sequence yields an empty
    signature; pass ``width`` to give it a definite width (defaults to 0).
    """
    if not sigs:
        return empty_signature(0 if width is None else width)
    w = sigs[0].width
    for s in sigs:
        if s.width != w:
            raise ValueError(f"mixed signature widths: {s.width} != {w}")
    if width is not None and width != w:
        raise ValueError(f"requested width {width} != signature width {w}")
    if len(sigs) == 1:
        return sigs[0]
    return Signature(np.unique(np.concatenate([s.indices for s in sigs])), w)


def densify(sig: Signature, width: int | None = None) -> np.ndarray:
    """Explicit 0/1 vector of length ``width`` (defaults to sig.width)."""
    if width is None:
        width = sig.width
    if sig.popcount and int(sig.indices[-1]) >= width:
        raise ValueError(f"signature index {sig.indices[-1]} >= width {width}")
    bits = np.zeros(width, dtype=np.uint8)
    bits[sig.indices] = 1
    return bits


def sparsify(bits: Iterable) -> Signature:
    """Inverse of densify: nonzero positions of a 0/1 vector."""
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError("bit vector must be one-dimensional")
    return Signature(np.flatnonzero(arr).astype(np.int64), int(arr.size))
