"""TSV parsing, splitting, and the synthetic generator."""

import math

import numpy as np
import pytest
from scipy.special import expit

from memrec.data import (
    Dataset,
    Record,
    SyntheticData,
    load_tsv,
    parse_criteo_tsv,
    split_temporal,
    synth_generate,
    transform_dense,
    zipf_probs,
)
from memrec.errors import ConfigError, DataError


def _write(tmp_path, text, name="data.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_transform_dense_values():
    # ln(1 + max(x, 0)) spot checks
    out = transform_dense([3, 0, -5, 1])
    assert out[0] == pytest.approx(math.log(4))
    assert out[1] == 0.0
    assert out[2] == 0.0  # negatives clamp to zero before the log
    assert out[3] == pytest.approx(math.log(2))


def test_parse_basic_line(tmp_path):
    line = "1\t" + "\t".join(str(i) for i in range(13)) + "\tdeadbeef\tcafe"
    p = _write(tmp_path, line + "\n")
    recs = list(parse_criteo_tsv(p))
    assert len(recs) == 1
    r = recs[0]
    assert r.label == 1
    assert r.dense[0] == 0.0 and r.dense[3] == pytest.approx(math.log(4))
    assert r.sparse == ((b"deadbeef",), (b"cafe",))


def test_parse_empty_cells(tmp_path):
    # empty dense -> 0, empty categorical -> missing value
    line = "0\t" + "\t".join([""] * 13) + "\t\tabc"
    p = _write(tmp_path, line + "\n")
    (r,) = parse_criteo_tsv(p)
    assert np.all(r.dense == 0.0)
    assert r.sparse == ((), (b"abc",))


def test_parse_skips_blank_lines(tmp_path):
    line = "1\t" + "\t".join(["1"] * 13) + "\tx"
    p = _write(tmp_path, "\n" + line + "\n\n" + line + "\n")
    assert len(list(parse_criteo_tsv(p))) == 2


def test_parse_tolerates_rare_malformed(tmp_path, caplog):
    good = "1\t" + "\t".join(["2"] * 13) + "\taa"
    bad = "7\t" + "\t".join(["2"] * 13) + "\taa"  # label not in {0,1}
    lines = [good] * 199 + [bad]
    p = _write(tmp_path, "\n".join(lines) + "\n")
    recs = list(parse_criteo_tsv(p))
    assert len(recs) == 199


def test_parse_fails_above_malformed_limit(tmp_path):
    good = "1\t" + "\t".join(["2"] * 13) + "\taa"
    bad = "not\ta\tline"
    lines = [good] * 50 + [bad]
    p = _write(tmp_path, "\n".join(lines) + "\n")
    with pytest.raises(DataError):
        list(parse_criteo_tsv(p))


def test_parse_missing_file():
    with pytest.raises(DataError):
        list(parse_criteo_tsv("/nonexistent/file.tsv"))


def test_parse_non_integer_dense_is_malformed(tmp_path):
    good = "1\t" + "\t".join(["2"] * 13) + "\taa"
    bad = "1\t" + "\t".join(["x"] * 13) + "\taa"
    lines = [good] * 200 + [bad]
    p = _write(tmp_path, "\n".join(lines) + "\n")
    assert len(list(parse_criteo_tsv(p))) == 200


def test_load_tsv_column_layout(tmp_path):
    rows = ["%d\t%s\t%02x\t%02x" % (i % 2, "\t".join(["1"] * 13), i, i * 2)
            for i in range(10)]
    p = _write(tmp_path, "\n".join(rows) + "\n")
    ds = load_tsv(p)
    assert ds.num_rows == 10 and ds.num_fields == 2 and ds.num_dense == 13
    assert ds.labels.tolist() == [i % 2 for i in range(10)]
    assert ds.sparse[1][3] == (b"06",)
    meta = ds.meta()
    assert meta.cardinalities == (10, 10)


def test_dataset_round_trip_records(tmp_path):
    data = synth_generate(3, rows=50, fields=4, vocab_per_field=20,
                          signal_strength=1.0)
    p = tmp_path / "synth.tsv"
    data.write_tsv(p)
    ds_file = load_tsv(p)
    ds_mem = data.to_dataset()
    assert ds_file.num_rows == ds_mem.num_rows
    assert np.array_equal(ds_file.labels, ds_mem.labels)
    np.testing.assert_allclose(ds_file.dense, ds_mem.dense, atol=1e-15)
    assert ds_file.sparse == ds_mem.sparse


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros((2, 1)), [])
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros((3, 1)), [[(b"a",)] * 2])
    with pytest.raises(DataError):
        Dataset.from_records([])


def test_from_records_field_count_mismatch():
    a = Record(0, np.zeros(2), ((b"x",),))
    b = Record(1, np.zeros(2), ((b"x",), (b"y",)))
    with pytest.raises(DataError):
        Dataset.from_records([a, b])


def test_split_temporal_sizes_and_order():
    data = synth_generate(5, rows=103, fields=2, vocab_per_field=10,
                          signal_strength=0.0)
    ds = data.to_dataset()
    tr, va, te = split_temporal(ds, 0.8, 0.1)
    assert (tr.num_rows, va.num_rows, te.num_rows) == (82, 10, 11)
    assert np.array_equal(
        np.concatenate([tr.labels, va.labels, te.labels]), ds.labels)


def test_split_temporal_validation():
    ds = synth_generate(5, rows=10, fields=1, vocab_per_field=4,
                        signal_strength=0.0).to_dataset()
    with pytest.raises(ConfigError):
        split_temporal(ds, 0.9, 0.2)
    with pytest.raises(ConfigError):
        split_temporal(ds, -0.1, 0.2)


def test_zipf_probs_normalized_and_decreasing():
    p = zipf_probs(1000)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) < 0)
    assert p[0] / p[9] == pytest.approx(10 ** 1.05)


def test_synth_deterministic():
    a = synth_generate(7, rows=100, fields=3, vocab_per_field=50,
                       signal_strength=1.5)
    b = synth_generate(7, rows=100, fields=3, vocab_per_field=50,
                       signal_strength=1.5)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.token_ids, b.token_ids)
    assert np.array_equal(a.dense_raw, b.dense_raw)
    assert "\n".join(a.lines()) == "\n".join(b.lines())


def test_synth_shapes_and_ranges():
    d = synth_generate(1, rows=200, fields=5, vocab_per_field=30,
                       signal_strength=2.0)
    assert d.labels.shape == (200,) and set(d.labels) <= {0, 1}
    assert d.dense_raw.shape == (200, 13)
    assert d.dense_raw.min() >= 0 and d.dense_raw.max() <= 6
    assert d.token_ids.shape == (200, 5)
    assert d.token_ids.min() >= 0 and d.token_ids.max() < 30


def test_synth_label_rate_half_at_zero_signal():
    # at signal 0 the logit is symmetric around 0, so P(label) = 1/2
    d = synth_generate(11, rows=60_000, fields=4, vocab_per_field=100,
                       signal_strength=0.0)
    assert abs(d.labels.mean() - 0.5) < 0.01


def test_synth_label_rate_rises_with_signal():
    # per-token scores have positive mean, so signal pushes the rate up
    rates = [
        synth_generate(13, rows=30_000, fields=4, vocab_per_field=100,
                       signal_strength=s).labels.mean()
        for s in (0.0, 1.0, 3.0)
    ]
    assert rates[0] < rates[1] < rates[2]


def test_synth_logit_is_oracle_score():
    # the stored logit must predict labels better than chance by construction
    from memrec.metrics import roc_auc

    d = synth_generate(17, rows=20_000, fields=4, vocab_per_field=50,
                       signal_strength=2.0)
    auc = roc_auc(expit(d.logits), d.labels)
    assert auc > 0.75


def test_synth_zipf_skew():
    # token id 0 is the head of the distribution, so it dominates
    d = synth_generate(19, rows=50_000, fields=1, vocab_per_field=1000,
                       signal_strength=0.0)
    counts = np.bincount(d.token_ids[:, 0], minlength=1000)
    assert counts[0] > 20 * counts[500]


def test_synth_rejects_bad_args():
    with pytest.raises(ConfigError):
        synth_generate(1, rows=0, fields=2, vocab_per_field=5,
                       signal_strength=1.0)
    with pytest.raises(ConfigError):
        synth_generate(1, rows=5, fields=2, vocab_per_field=5,
                       signal_strength=-1.0)


def test_token_bytes_format():
    assert SyntheticData.token_bytes(255) == b"000000ff"
