import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semindex.io import (
    FeatureSet,
    FormatError,
    GroundTruth,
    GroundTruthEntry,
    LabelMatrix,
    features_from_bytes,
    features_to_bytes,
    format_ground_truth,
    labels_from_bytes,
    labels_to_bytes,
    parse_ground_truth,
    read_features,
    read_ground_truth,
    read_labels,
    write_features,
    write_ground_truth,
    write_labels,
)

FVEC_HEADER = 21  # magic, version, kind, u64 n, u32 d


def test_empty_feature_file_keeps_dimension(tmp_path):
    path = tmp_path / "empty.fvec"
    write_features(path, FeatureSet(np.zeros((0, 8), dtype=np.float32)))
    fs = read_features(path)
    assert fs.n == 0 and fs.d == 8


def test_features_round_trip_bit_identical(tmp_path, rng):
    fs = FeatureSet(rng.normal(size=(37, 12)).astype(np.float32))
    path = tmp_path / "x.fvec"
    write_features(path, fs)
    back = read_features(path)
    assert back == fs
    assert back.data.tobytes() == fs.data.tobytes()


def test_truncated_mid_row_reports_row_start(rng):
    fs = FeatureSet(rng.normal(size=(5, 4)).astype(np.float32))
    buf = features_to_bytes(fs)
    cut = FVEC_HEADER + 2 * 16 + 6  # two full rows, then part of the third
    with pytest.raises(FormatError) as err:
        features_from_bytes(buf[:cut])
    assert err.value.offset == FVEC_HEADER + 2 * 16
    assert "offset" in str(err.value)


def test_bad_magic_and_trailing_bytes(rng):
    buf = features_to_bytes(FeatureSet(rng.normal(size=(2, 3)).astype(np.float32)))
    with pytest.raises(FormatError) as err:
        features_from_bytes(b"XXXX" + buf[4:])
    assert err.value.offset == 0
    with pytest.raises(FormatError):
        features_from_bytes(buf + b"\0")


def test_non_finite_value_offset(rng):
    data = rng.normal(size=(3, 4)).astype(np.float32)
    buf = bytearray(features_to_bytes(FeatureSet(data)))
    struct.pack_into("<f", buf, FVEC_HEADER + 4 * 6, float("nan"))
    with pytest.raises(FormatError) as err:
        features_from_bytes(bytes(buf))
    assert err.value.offset == FVEC_HEADER + 24


def test_feature_set_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureSet(np.array([[1.0, np.inf]], dtype=np.float32))


def test_label_row_is_sorted_on_load():
    lm = LabelMatrix.from_rows([[(3, 0.2), (1, 0.7)]], n_labels=5)
    back = labels_from_bytes(labels_to_bytes(lm))
    assert back.rows() == [[(1, pytest.approx(0.7)), (3, pytest.approx(0.2))]]


def _raw_label_file(rows, n_labels):
    parts = [struct.pack("<4sIBQI", b"SIDX", 1, 2, len(rows), n_labels)]
    for row in rows:
        parts.append(struct.pack("<H", len(row)))
        for lab, conf in row:
            parts.append(struct.pack("<If", lab, conf))
    return b"".join(parts)


def test_unsorted_file_row_loads_sorted():
    back = labels_from_bytes(_raw_label_file([[(3, 0.2), (1, 0.7)]], 5))
    labels, conf = back.row(0)
    assert labels.tolist() == [1, 3]
    assert conf[0] > conf[1]


def test_label_out_of_range_is_format_error():
    with pytest.raises(FormatError):
        labels_from_bytes(_raw_label_file([[(5, 0.2)]], 5))
    with pytest.raises(ValueError):
        LabelMatrix.from_rows([[(5, 0.2)]], n_labels=5)


def test_duplicate_label_in_row_is_format_error():
    with pytest.raises(FormatError):
        labels_from_bytes(_raw_label_file([[(2, 0.5), (2, 0.3)]], 5))


def test_labels_round_trip(tmp_path, rng):
    probs = rng.dirichlet(np.ones(30), size=20)
    lm = LabelMatrix.from_dense(probs, k=7)
    path = tmp_path / "l.lbl"
    write_labels(path, lm)
    assert read_labels(path) == lm


def test_top_matrix_asks_for_regeneration():
    lm = LabelMatrix.from_rows([[(0, 0.5), (1, 0.3)]], n_labels=4)
    with pytest.raises(ValueError, match="regenerate"):
        lm.top_matrix(3)


def test_ground_truth_single_line():
    gt = parse_ground_truth("0: 4 7 9\n")
    assert gt.entries == (GroundTruthEntry(0, frozenset({4, 7, 9}), frozenset()),)


def test_ground_truth_duplicates_warn_and_dedupe():
    with pytest.warns(UserWarning, match="duplicate"):
        gt = parse_ground_truth("1: 3 3 5\n")
    assert gt.entries[0].relevant == frozenset({3, 5})


def test_ground_truth_overlap_and_empty_are_errors():
    with pytest.raises(FormatError):
        parse_ground_truth("0: 1 2\n0!: 2\n")
    with pytest.raises(FormatError):
        parse_ground_truth("0:\n")
    with pytest.raises(FormatError):
        parse_ground_truth("3!: 1\n")


def test_ground_truth_round_trip_with_junk(tmp_path):
    gt = GroundTruth((GroundTruthEntry(2, frozenset({1, 5}), frozenset({7})), GroundTruthEntry(0, frozenset({3}))))
    path = tmp_path / "gt.txt"
    write_ground_truth(path, gt)
    assert read_ground_truth(path) == gt
    assert format_ground_truth(gt).splitlines()[1] == "2!: 7"


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(0, 6),
    d=st.integers(1, 5),
    seed=st.integers(0, 2**31),
)
def test_feature_round_trip_property(n, d, seed):
    data = np.random.default_rng(seed).normal(size=(n, d)).astype(np.float32)
    fs = FeatureSet(data)
    assert features_from_bytes(features_to_bytes(fs)) == fs


@settings(max_examples=60, deadline=None)
@given(
    rows=st.lists(
        st.dictionaries(st.integers(0, 9), st.floats(0, 1, width=32), max_size=10),
        max_size=6,
    )
)
def test_label_round_trip_property(rows):
    lm = LabelMatrix.from_rows([list(r.items()) for r in rows], n_labels=10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert labels_from_bytes(labels_to_bytes(lm)) == lm
