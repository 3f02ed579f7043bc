"""Seeded families of hash functions over (field id, token) keys.

A family bundles ``num_funcs`` independently keyed 64-bit hashes that all map
into the same integer range. Each function is a keyed blake2b digest truncated
to 64 bits and reduced modulo the range; per-function keys are derived from a
single master seed with an avalanche mixer, so a family is fully determined by
``(num_funcs, range_size, master_seed)``.

Tokens from different categorical fields must not collide systematically, so
the field id is prepended to the hashed payload as a fixed-width prefix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .validation import check_positive_int, check_seed64, check_token

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(value: int) -> int:
    """One 64-bit avalanche round (the splitmix64 output mixer).

    Bijective on [0, 2**64), so distinct inputs give distinct outputs.
    """
    z = (value + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seeds(master_seed: int, count: int) -> tuple[int, ...]:
    """Derive ``count`` pairwise-distinct per-function seeds from one master.

    Seed i depends only on (master_seed, i), so extending a family keeps the
    earlier seeds stable: derive_seeds(s, 2) is a prefix of derive_seeds(s, 4).
    """
    master_seed = check_seed64("master_seed", master_seed)
    base = mix64(master_seed)
    return tuple(mix64(base ^ ((i * _GOLDEN) & _MASK64)) for i in range(count))


@dataclass(frozen=True)
class HashFamily:
    """An ordered family of keyed hash functions with a common output range."""

    num_funcs: int
    range_size: int
    seeds: tuple[int, ...]

    def __post_init__(self):
        check_positive_int("num_funcs", self.num_funcs)
        check_positive_int("range_size", self.range_size)
        if len(self.seeds) != self.num_funcs:
            raise ConfigError(
                f"expected {self.num_funcs} seeds, got {len(self.seeds)}"
            )
        for s in self.seeds:
            check_seed64("seed", s)
        if len(set(self.seeds)) != self.num_funcs:
            raise ConfigError("per-function seeds must be pairwise distinct")


def make_family(num_funcs: int, range_size: int, master_seed: int) -> HashFamily:
    num_funcs = check_positive_int("num_funcs", num_funcs)
    range_size = check_positive_int("range_size", range_size)
    return HashFamily(num_funcs, range_size, derive_seeds(master_seed, num_funcs))


def hash_token(family: HashFamily, field_id: int, token) -> np.ndarray:
    """Map one token to its bucket set under every function in the family.

    Returns a sorted array of unique indices in [0, range_size); its length is
    at most num_funcs (less when functions agree on a bucket). The same
    (family, field_id, token) always yields the same array.
    """
    if not 0 <= int(field_id) < (1 << 16):
        raise ValueError(f"field_id must fit in 16 bits, got {field_id}")
    payload = int(field_id).to_bytes(2, "little") + check_token(token)
    buckets = {
        int.from_bytes(
            hashlib.blake2b(
                payload, digest_size=8, key=seed.to_bytes(8, "little")
            ).digest(),
            "little",
        )
        % family.range_size
        for seed in family.seeds
    }
    return np.array(sorted(buckets), dtype=np.int64)
