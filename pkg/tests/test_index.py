import numpy as np
import pytest

from semindex.index import (
    CooccurrenceMatrix,
    IndexParams,
    LabelMapping,
    build_index,
    candidate_list,
    cooccurrence_matrix,
    label_similarity,
    merge_labels,
    merged_index,
    pruned_candidate_list,
    similarity_matrix,
    split_index,
    top_labels,
)
from semindex.io import FeatureSet, LabelMatrix
from semindex.synth import SyntheticConfig, synth_dataset


@pytest.mark.parametrize(
    "row, k, expected",
    [
        ([(0, 0.5), (1, 0.3), (2, 0.2)], 2, [0, 1]),
        ([(2, 0.6), (0, 0.2), (1, 0.2)], 1, [2]),
        ([(0, 0.4), (1, 0.4)], 1, [0]),
        ([(1, 0.4), (0, 0.4)], 1, [0]),
    ],
)
def test_top_labels_examples(row, k, expected):
    assert top_labels(row, k) == expected


def test_top_labels_too_short_row():
    with pytest.raises(ValueError, match="regenerate"):
        top_labels([(0, 0.5)], 2)


def _two_item_index():
    lm = LabelMatrix.from_rows([[(1, 0.6), (3, 0.4)], [(3, 0.7), (4, 0.3)]], n_labels=5)
    return build_index(lm, IndexParams(2, 5))


def test_build_small_example():
    idx = _two_item_index()
    lists = {c: ids.tolist() for c, ids in enumerate(idx.posting_lists) if ids.size}
    assert lists == {1: [0], 3: [0, 1], 4: [1]}


def test_candidate_list_small_example():
    cand = candidate_list(_two_item_index(), [(3, 0.9), (4, 0.1)], 2)
    assert cand.ids.tolist() == [0, 1]
    assert cand.source_cells == (3, 4)


def test_dense_alpha_puts_every_item_everywhere(rng):
    lm = LabelMatrix.from_dense(rng.dirichlet(np.ones(6), size=9))
    idx = build_index(lm, IndexParams(6, 6))
    assert all(ids.tolist() == list(range(9)) for ids in idx.posting_lists)


def test_alpha5_over_1000_labels_multiplicity(rng):
    lm = LabelMatrix.from_dense(rng.dirichlet(np.ones(1000), size=200), k=10)
    idx = build_index(lm, IndexParams(5, 1000))
    per_item = np.bincount(np.concatenate(idx.posting_lists), minlength=200)
    assert idx.n_cells == 1000
    assert np.all(per_item == 5)
    assert idx.list_lengths().sum() == 5 * 200


def test_full_beta_reclaims_everything(small_ds):
    idx = build_index(small_ds.db_labels, IndexParams(5, 100))
    dense_q = LabelMatrix.from_rows([[(i, 1.0 - i / 200) for i in range(100)]], 100)
    assert candidate_list(idx, dense_q.row(0), 100).ids.tolist() == list(range(small_ds.db.n))


def test_beta3_reclaims_three_cells(small_ds):
    idx = build_index(small_ds.db_labels, IndexParams(5, 100))
    cand = candidate_list(idx, small_ds.query_labels.row(0), 3)
    assert len(cand.source_cells) == 3
    expected = np.unique(np.concatenate([idx.posting_lists[c] for c in cand.source_cells]))
    assert np.array_equal(cand.ids, expected)


def test_alpha_and_beta_bounds(small_ds):
    with pytest.raises(ValueError):
        IndexParams(101, 100)
    idx = build_index(small_ds.db_labels, IndexParams(5, 100))
    with pytest.raises(ValueError):
        candidate_list(idx, small_ds.query_labels.row(0), 101)


def test_cooccurrence_counts_pairs():
    lm = LabelMatrix.from_rows(
        [[(0, 0.3), (1, 0.25), (2, 0.2), (3, 0.15), (4, 0.1)], [(0, 0.3), (1, 0.25), (5, 0.2), (6, 0.15), (7, 0.1)]], 8
    )
    C = cooccurrence_matrix(lm)
    assert C.counts[0, 1] == 2
    assert C.counts[2, 5] == 0
    assert C.counts.trace() == 2 * 5


def test_cooccurrence_symmetric_trace_and_dominant(small_ds):
    C = cooccurrence_matrix(small_ds.db_labels)
    t = C.counts
    assert np.array_equal(t, t.T)
    assert t.trace() == small_ds.db.n * 5
    assert np.all(np.diag(t)[:, None] >= t)


def test_similarity_examples():
    C = CooccurrenceMatrix(np.array([[1, 2, 3], [3, 2, 1], [4, 4, 4]]), k=1)
    assert label_similarity(C, 0, 1) == pytest.approx(-1.0)
    assert label_similarity(C, 0, 0) == pytest.approx(1.0)
    assert label_similarity(C, 2, 0) == 0.0
    S = similarity_matrix(C)
    assert S[0, 1] == pytest.approx(-1.0) and S[2, 2] == 0.0


def test_similarity_matrix_agrees_with_pairwise(small_ds):
    C = cooccurrence_matrix(small_ds.db_labels)
    S = similarity_matrix(C)
    for i, j in [(0, 1), (3, 40), (10, 10), (99, 2)]:
        assert S[i, j] == pytest.approx(label_similarity(C, i, j), abs=1e-12)


def test_merge_identity_and_full(small_ds):
    C = cooccurrence_matrix(small_ds.db_labels)
    assert merge_labels(C, 100) == LabelMapping.identity(100)
    full = merge_labels(C, 1)
    assert full.n_cells == 1 and np.all(full.cell_of == 0)


def test_merge_to_581_of_1000():
    ds = synth_dataset(SyntheticConfig(n_db=4000, n_queries=1, n_labels=1000, clusters=200, seed=2))
    mapping = merge_labels(cooccurrence_matrix(ds.db_labels), 581)
    assert mapping.n_cells == 581
    assert sorted(set(mapping.cell_of.tolist())) == list(range(581))


def test_merge_joins_correlated_labels_first():
    # labels 0 and 1 always co-occur; so do 2 and 3
    rows = [[(0, 0.5), (1, 0.4)]] * 5 + [[(2, 0.5), (3, 0.4)]] * 5 + [[(4, 0.9), (0, 0.05)]]
    C = cooccurrence_matrix(LabelMatrix.from_rows(rows, 5), k=2)
    m = merge_labels(C, 3)
    assert m.cell_of[0] == m.cell_of[1]
    assert m.cell_of[2] == m.cell_of[3]
    assert len({m.cell_of[0], m.cell_of[2], m.cell_of[4]}) == 3


def test_merged_candidates_contain_unmerged(small_ds):
    plain = build_index(small_ds.db_labels, IndexParams(5, 100))
    merged = merged_index(small_ds.db_labels, 5, 40)
    for q in range(small_ds.queries.n):
        row = small_ds.query_labels.row(q)
        a = candidate_list(plain, row, 5).ids
        b = candidate_list(merged, row, 5).ids
        assert np.isin(a, b).all()


def test_merged_cell_is_union_of_label_lists(small_ds):
    plain = build_index(small_ds.db_labels, IndexParams(5, 100))
    merged = merged_index(small_ds.db_labels, 5, 40)
    for cell in (0, 17, 39):
        labels = merged.mapping.members(cell)
        union = np.unique(np.concatenate([plain.posting_lists[l] for l in labels]))
        assert np.array_equal(merged.posting_lists[cell], union)


def test_split_L1_is_the_partition(small_ds):
    idx = split_index(build_index(small_ds.db_labels, IndexParams(5, 100)), small_ds.db, 1)
    for ids, subs in zip(idx.posting_lists, idx.split.sub_lists):
        if ids.size:
            assert len(subs) == 1 and np.array_equal(subs[0], ids)


def test_split_of_size_two_partition_gives_singletons():
    lm = LabelMatrix.from_rows([[(0, 0.9)], [(0, 0.8)], [(1, 0.7)]], 2)
    idx = build_index(lm, IndexParams(1, 2))
    feats = FeatureSet(np.array([[0.0, 0.0], [5.0, 5.0], [1.0, 1.0]], dtype=np.float32))
    sp = split_index(idx, feats, 10).split
    assert sorted(s.tolist() for s in sp.sub_lists[0]) == [[0], [1]]
    assert sp.sub_centroids[0].shape == (2, 2)


def test_split_L10_enlarges_1k_codebook_to_10k(rng):
    n, N = 30000, 1000
    probs = rng.dirichlet(np.ones(N) * 0.05, size=n)
    lm = LabelMatrix.from_dense(probs, k=5)
    idx = build_index(lm, IndexParams(5, N))
    feats = FeatureSet(rng.normal(size=(n, 4)).astype(np.float32))
    assert idx.list_lengths().min() >= 10
    split = split_index(idx, feats, 10).split
    assert split.n_subcells == 10 * N


def test_split_sub_lists_partition_each_list(small_ds):
    idx = split_index(build_index(small_ds.db_labels, IndexParams(5, 100)), small_ds.db, 10)
    for ids, subs in zip(idx.posting_lists, idx.split.sub_lists):
        if ids.size:
            joined = np.sort(np.concatenate(subs))
            assert np.array_equal(joined, ids)
            assert 1 <= len(subs) <= 10


@pytest.fixture(scope="module")
def split_small(small_ds):
    return split_index(build_index(small_ds.db_labels, IndexParams(5, 100)), small_ds.db, 10, seed=1)


def test_tau_one_reproduces_unpruned(small_ds, split_small):
    for q in range(small_ds.queries.n):
        row = small_ds.query_labels.row(q)
        a = candidate_list(split_small, row, 5).ids
        b = pruned_candidate_list(split_small, small_ds.queries.data[q], row, 5, 1.0).ids
        assert np.array_equal(a, b)


def test_tau_tenth_keeps_one_subcell_per_partition(small_ds, split_small):
    q = small_ds.queries.data[0]
    row = small_ds.query_labels.row(0)
    cand = pruned_candidate_list(split_small, q, row, 5, 0.1)
    expected = []
    for c in cand.source_cells:
        cents = split_small.split.sub_centroids[c].astype(np.float64)
        assert cents.shape[0] == 10
        nearest = int(np.argmin(((cents - q) ** 2).sum(1)))
        expected.append(split_small.split.sub_lists[c][nearest])
    assert np.array_equal(cand.ids, np.unique(np.concatenate(expected)))


def test_query_at_subcentroid_keeps_its_members(small_ds, split_small):
    row = small_ds.query_labels.row(2)
    c = candidate_list(split_small, row, 5).source_cells[0]
    q = split_small.split.sub_centroids[c][3]
    cand = pruned_candidate_list(split_small, q, row, 5, 0.1)
    assert np.isin(split_small.split.sub_lists[c][3], cand.ids).all()


def test_pruning_needs_split(small_ds):
    idx = build_index(small_ds.db_labels, IndexParams(5, 100))
    with pytest.raises(ValueError, match="split"):
        pruned_candidate_list(idx, small_ds.queries.data[0], small_ds.query_labels.row(0), 5, 0.1)


def test_empty_index_splits_to_empty(rng):
    lm = LabelMatrix.from_rows([], 3)
    idx = build_index(lm, IndexParams(1, 3))
    sp = split_index(idx, FeatureSet(np.zeros((0, 2), dtype=np.float32)), 4).split
    assert sp.n_subcells == 0


def test_full_scope_identity(rng):
    lm = LabelMatrix.from_dense(rng.dirichlet(np.ones(7), size=25))
    idx = build_index(lm, IndexParams(7, 7))
    cand = candidate_list(idx, lm.row(3), 7)
    assert cand.ids.size == 25
