from math import comb, sqrt

import numpy as np
import pytest

from semindex.io import features_to_bytes, format_ground_truth, labels_to_bytes
from semindex.synth import SyntheticConfig, group_label_windows, synth_dataset


def _top5(lm):
    return [set(row) for row in lm.top_matrix(5).tolist()]


def test_zero_noise_every_relevant_pair_shares_a_label():
    ds = synth_dataset(SyntheticConfig(n_db=2000, n_queries=50, label_noise=0.0, seed=4))
    db_top, q_top = _top5(ds.db_labels), _top5(ds.query_labels)
    for e in ds.ground_truth:
        assert all(q_top[e.query_id] & db_top[i] for i in e.relevant)


def test_same_seed_gives_identical_bytes():
    cfg = SyntheticConfig(n_db=800, n_queries=20, seed=9)
    a, b = synth_dataset(cfg), synth_dataset(cfg)
    assert features_to_bytes(a.db) == features_to_bytes(b.db)
    assert features_to_bytes(a.queries) == features_to_bytes(b.queries)
    assert labels_to_bytes(a.db_labels) == labels_to_bytes(b.db_labels)
    assert labels_to_bytes(a.query_labels) == labels_to_bytes(b.query_labels)
    assert format_ground_truth(a.ground_truth) == format_ground_truth(b.ground_truth)


def test_different_seeds_differ():
    a = synth_dataset(SyntheticConfig(n_db=500, n_queries=5, seed=1))
    b = synth_dataset(SyntheticConfig(n_db=500, n_queries=5, seed=2))
    assert features_to_bytes(a.db) != features_to_bytes(b.db)


def test_full_noise_overlap_matches_uniform_rate():
    # With every top slot corrupted, top-5 sets are uniform random 5-subsets and
    # rows are independent, so pairing query i with item i gives iid trials.
    N, n = 100, 5000
    ds = synth_dataset(SyntheticConfig(n_db=n, n_queries=n, n_labels=N, label_noise=1.0, seed=11))
    db_top, q_top = _top5(ds.db_labels), _top5(ds.query_labels)
    rate = np.mean([bool(q_top[i] & db_top[i]) for i in range(n)])
    p = 1 - comb(N - 5, 5) / comb(N, 5)
    assert abs(rate - p) <= 3 * sqrt(p * (1 - p) / n)


def test_clusters_above_labels_is_config_error():
    with pytest.raises(ValueError):
        SyntheticConfig(n_labels=10, clusters=11)


def test_rows_have_top_k_strictly_decreasing_confidences():
    ds = synth_dataset(SyntheticConfig(n_db=300, n_queries=10, top_k=8, seed=5))
    assert ds.db_labels.min_row_length() == 8
    for i in range(0, 300, 37):
        labels, conf = ds.db_labels.row(i)
        assert np.all(np.diff(conf) < 0)
        assert len(set(labels.tolist())) == 8
        assert conf.sum() <= 1.0


def test_ground_truth_is_the_query_group():
    ds = synth_dataset(SyntheticConfig(n_db=600, n_queries=12, seed=6))
    for e in ds.ground_truth:
        g = ds.query_groups[e.query_id]
        assert e.relevant == frozenset(np.flatnonzero(ds.db_groups == g).tolist())


def test_label_windows_cover_vocabulary_and_overlap():
    w = group_label_windows(100, 50, 5)
    assert w.shape == (50, 5)
    assert w[0, 0] == 0 and w[-1, -1] == 99
    assert all(set(w[g]) & set(w[g + 1]) for g in range(49))
