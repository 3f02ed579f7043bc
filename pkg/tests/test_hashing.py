"""Hash family behaviour: determinism, range, independence, uniformity."""

import numpy as np
import pytest
from scipy.stats import chisquare

from memrec.errors import ConfigError
from memrec.hashing import (
    HashFamily,
    derive_seeds,
    hash_token,
    make_family,
    mix64,
)


def test_mix64_distinct_on_consecutive_inputs():
    # bijective mixer: no collisions on any input sample
    outs = {mix64(i) for i in range(10_000)}
    assert len(outs) == 10_000
    for i in range(10_000):
        assert 0 <= mix64(i) < (1 << 64)


def test_mix64_avalanche_on_single_bit_flip():
    # flipping one input bit should flip roughly half the output bits
    rng = np.random.default_rng(0)
    flipped = []
    for _ in range(200):
        x = int(rng.integers(0, 1 << 63))
        bit = int(rng.integers(0, 64))
        diff = mix64(x) ^ mix64(x ^ (1 << bit))
        flipped.append(bin(diff).count("1"))
    assert 24 < np.mean(flipped) < 40


def test_derive_seeds_prefix_stable_and_distinct():
    short = derive_seeds(1234, 3)
    long = derive_seeds(1234, 8)
    assert long[:3] == short
    assert len(set(long)) == 8


def test_derive_seeds_depend_on_master():
    assert derive_seeds(1, 4) != derive_seeds(2, 4)


def test_derive_seeds_rejects_bad_master():
    with pytest.raises(ConfigError):
        derive_seeds(-1, 2)
    with pytest.raises(ConfigError):
        derive_seeds(1 << 64, 2)


def test_family_requires_distinct_seeds():
    with pytest.raises(ConfigError):
        HashFamily(2, 16, (7, 7))
    with pytest.raises(ConfigError):
        HashFamily(2, 16, (7,))


def test_make_family_validates_sizes():
    with pytest.raises(ConfigError):
        make_family(0, 16, 1)
    with pytest.raises(ConfigError):
        make_family(2, 0, 1)


def test_hash_token_deterministic():
    fam = make_family(4, 1024, 99)
    a = hash_token(fam, 3, b"hello")
    b = hash_token(fam, 3, b"hello")
    assert np.array_equal(a, b)
    assert a.dtype == np.int64


def test_hash_token_sorted_unique_in_range():
    fam = make_family(8, 64, 5)
    for t in range(200):
        idx = hash_token(fam, 0, b"%d" % t)
        assert 1 <= idx.size <= 8
        assert np.all(np.diff(idx) > 0)
        assert idx[0] >= 0 and idx[-1] < 64


def test_hash_token_range_one_pins_everything_to_zero():
    fam = make_family(3, 1, 5)
    assert hash_token(fam, 0, b"anything").tolist() == [0]


def test_hash_token_str_matches_utf8_bytes():
    fam = make_family(2, 512, 11)
    assert np.array_equal(hash_token(fam, 0, "caf\xe9"),
                          hash_token(fam, 0, "caf\xe9".encode("utf-8")))


def test_field_id_separates_identical_tokens():
    # same token, different field => different buckets almost always
    fam = make_family(2, 1 << 20, 42)
    same = sum(
        np.array_equal(hash_token(fam, 0, b"%d" % t), hash_token(fam, 1, b"%d" % t))
        for t in range(1000)
    )
    assert same < 10


def test_field_id_bounds():
    fam = make_family(1, 16, 0)
    with pytest.raises(ValueError):
        hash_token(fam, -1, b"x")
    with pytest.raises(ValueError):
        hash_token(fam, 1 << 16, b"x")


def test_seed_changes_buckets():
    a = make_family(4, 1 << 20, 1)
    b = make_family(4, 1 << 20, 2)
    same = sum(
        np.array_equal(hash_token(a, 0, b"%d" % t), hash_token(b, 0, b"%d" % t))
        for t in range(500)
    )
    assert same < 5


def test_bucket_uniformity_chi_square():
    # one function over 64 buckets, 64k tokens: chi-square should not reject
    fam = make_family(1, 64, 7)
    counts = np.zeros(64, dtype=np.int64)
    for t in range(64_000):
        counts[hash_token(fam, 0, b"%d" % t)[0]] += 1
    _, p = chisquare(counts)
    assert p > 1e-4, f"bucket histogram too skewed (p={p})"


def test_functions_within_family_disagree():
    # distinct keyed functions should rarely agree on a bucket
    fam = make_family(2, 1 << 16, 13)
    agree = 0
    for t in range(2000):
        idx = hash_token(fam, 0, b"%d" % t)
        agree += idx.size == 1
    assert agree < 2000 * 0.01
