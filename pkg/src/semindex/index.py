"""Label-partitioned inverted index.

Each database item is stored in the posting lists of its ``alpha`` most
confident labels. A query reclaims the lists of its own ``beta`` most
confident labels and the union of those lists is its candidate list.
Labels can be merged into coarser cells (by co-occurrence correlation) and
each list can be split into k-means sub-cells that are pruned per query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .io import FeatureSet, LabelMatrix
from .quantizer import ResidualQuantizer, kmeans_fit, nearest, sq_distances, train_residual_quantizer
from .seeding import sub_seed


@dataclass(frozen=True)
class IndexParams:
    alpha: int
    n_labels: int

    def __post_init__(self):
        if self.n_labels < 1:
            raise ValueError("n_labels must be >= 1")
        if not 1 <= self.alpha <= self.n_labels:
            raise ValueError(f"alpha={self.alpha} must lie in 1..n_labels={self.n_labels}")


@dataclass(frozen=True, eq=False)
class LabelMapping:
    """Original label id -> merged cell id."""

    cell_of: np.ndarray
    n_cells: int

    def __post_init__(self):
        cell_of = np.asarray(self.cell_of, dtype=np.int64)
        if cell_of.ndim != 1 or cell_of.size == 0:
            raise ValueError("cell_of must be a non-empty 1-D array")
        if cell_of.min() < 0 or cell_of.max() >= self.n_cells:
            raise ValueError("cell ids out of range")
        if np.unique(cell_of).size != self.n_cells:
            raise ValueError("mapping is not surjective onto 0..n_cells-1")
        cell_of.setflags(write=False)
        object.__setattr__(self, "cell_of", cell_of)

    @classmethod
    def identity(cls, n_labels: int) -> "LabelMapping":
        return cls(np.arange(n_labels), n_labels)

    @property
    def n_labels(self) -> int:
        return self.cell_of.size

    def members(self, cell: int) -> np.ndarray:
        return np.flatnonzero(self.cell_of == cell)

    def __eq__(self, other):
        if not isinstance(other, LabelMapping):
            return NotImplemented
        return self.n_cells == other.n_cells and np.array_equal(self.cell_of, other.cell_of)


@dataclass(frozen=True, eq=False)
class SplitStructure:
    """Per partition: sub-centroids ``(k_i, d)`` and the matching sub-lists.

    Only nonempty sub-cells are kept, so ``k_i <= L``.
    """

    L: int
    sub_centroids: tuple
    sub_lists: tuple

    @property
    def n_subcells(self) -> int:
        return sum(c.shape[0] for c in self.sub_centroids)


@dataclass(frozen=True, eq=False)
class SemanticPQ:
    """Residual PQ storage aligned with the posting lists.

    ``codes[i][j]`` encodes ``x - c^i`` for the ``j``-th id of list ``i``, so an
    item stored in several lists carries one code per list.
    """

    quantizer: ResidualQuantizer
    codes: tuple


@dataclass(frozen=True, eq=False)
class SemanticIndex:
    params: IndexParams
    posting_lists: tuple
    n_items: int
    mapping: LabelMapping | None = None
    split: SplitStructure | None = None
    pq: SemanticPQ | None = None

    @property
    def n_cells(self) -> int:
        return len(self.posting_lists)

    def list_lengths(self) -> np.ndarray:
        return np.array([ids.size for ids in self.posting_lists], dtype=np.int64)

    def cells_for_labels(self, labels) -> list[int]:
        """Map label ids to cells, keeping first occurrences in order."""
        labels = [int(lab) for lab in labels]
        if self.mapping is None:
            return labels
        seen = []
        for c in self.mapping.cell_of[labels].tolist():
            if c not in seen:
                seen.append(c)
        return seen


@dataclass(frozen=True, eq=False)
class CandidateList:
    ids: np.ndarray
    source_cells: tuple

    def __len__(self):
        return self.ids.size


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    counts: np.ndarray
    k: int = 5

    @property
    def n_labels(self) -> int:
        return self.counts.shape[0]


def _as_row(row) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(row, tuple) and len(row) == 2 and isinstance(row[0], np.ndarray):
        return row
    pairs = sorted(((int(lab), float(c)) for lab, c in row), key=lambda e: (-e[1], e[0]))
    return np.array([p[0] for p in pairs], dtype=np.int64), np.array([p[1] for p in pairs])


def top_labels(row, k: int) -> list[int]:
    """The ``k`` most confident label ids of one row (ties: lower id first).

    ``row`` is either a ``LabelMatrix.row`` tuple or an iterable of
    ``(label_id, confidence)`` pairs in any order.
    """
    labels, conf = _as_row(row)
    if k > labels.size:
        raise ValueError(
            f"requested top-{k} labels but the row stores only {labels.size}; "
            "regenerate the label file with a larger top-k"
        )
    order = np.lexsort((labels, -np.asarray(conf, dtype=np.float64)))
    return labels[order[:k]].tolist()


def _group_lists(cells: np.ndarray, items: np.ndarray, n_cells: int) -> tuple:
    """Sorted, deduplicated id lists per cell from parallel (cell, item) arrays."""
    if items.size == 0:
        return tuple(np.empty(0, dtype=np.int64) for _ in range(n_cells))
    stride = int(items.max()) + 1
    c, i = np.divmod(np.unique(cells * stride + items), stride)
    bounds = np.searchsorted(c, np.arange(n_cells + 1))
    lists = []
    for j in range(n_cells):
        ids = i[bounds[j] : bounds[j + 1]].astype(np.int64)
        ids.setflags(write=False)
        lists.append(ids)
    return tuple(lists)


def build_index(db_labels: LabelMatrix, params: IndexParams, mapping: LabelMapping | None = None) -> SemanticIndex:
    """Store every item under its top-``alpha`` labels (or their merged cells)."""
    if db_labels.n_labels != params.n_labels:
        raise ValueError(f"label file has {db_labels.n_labels} labels, params say {params.n_labels}")
    if mapping is not None and mapping.n_labels != params.n_labels:
        raise ValueError("mapping does not cover the label vocabulary")
    tops = db_labels.top_matrix(params.alpha)
    items = np.repeat(np.arange(db_labels.n, dtype=np.int64), params.alpha)
    cells = tops.reshape(-1)
    n_cells = params.n_labels
    if mapping is not None:
        cells = mapping.cell_of[cells]
        n_cells = mapping.n_cells
    lists = _group_lists(cells.astype(np.int64), items, n_cells)
    return SemanticIndex(params, lists, db_labels.n, mapping)


def candidate_list(index: SemanticIndex, query_row, beta: int) -> CandidateList:
    if not 1 <= beta <= index.params.n_labels:
        raise ValueError(f"beta={beta} must lie in 1..n_labels={index.params.n_labels}")
    cells = index.cells_for_labels(top_labels(query_row, beta))
    parts = [index.posting_lists[c] for c in cells]
    ids = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    return CandidateList(ids, tuple(cells))


def cooccurrence_matrix(labels: LabelMatrix, k: int = 5) -> CooccurrenceMatrix:
    """Counts of rows whose top-``k`` holds both labels (diagonal: holds the label)."""
    tops = labels.top_matrix(k)
    n = labels.n
    indicator = sparse.csr_matrix(
        (np.ones(n * k, dtype=np.int64), (np.repeat(np.arange(n), k), tops.reshape(-1))),
        shape=(n, labels.n_labels),
    )
    counts = np.asarray((indicator.T @ indicator).todense(), dtype=np.int64)
    return CooccurrenceMatrix(counts, k)


def label_similarity(C: CooccurrenceMatrix, i: int, j: int) -> float:
    """Pearson correlation of co-occurrence rows ``i`` and ``j``; 0 if either is constant."""
    a = C.counts[i].astype(np.float64)
    b = C.counts[j].astype(np.float64)
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def similarity_matrix(C: CooccurrenceMatrix) -> np.ndarray:
    """All pairwise label similarities at once."""
    x = C.counts.astype(np.float64)
    x = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((x * x).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    s = (x @ x.T) / np.outer(safe, safe)
    dead = norms == 0
    s[dead, :] = 0.0
    s[:, dead] = 0.0
    return np.clip(s, -1.0, 1.0)


def merge_labels(C: CooccurrenceMatrix, target_cells: int) -> LabelMapping:
    """Average-linkage agglomeration on ``1 - similarity`` down to ``target_cells``.

    Clusters are named by their smallest label id; among equally close pairs
    the lexicographically smallest pair of names merges first. Cells are
    numbered in order of their smallest label id.
    """
    n = C.n_labels
    if not 1 <= target_cells <= n:
        raise ValueError(f"target_cells={target_cells} must lie in 1..{n}")
    dist = 1.0 - similarity_matrix(C)
    np.fill_diagonal(dist, np.inf)
    size = np.ones(n)
    rep = np.arange(n)
    for _ in range(n - target_cells):
        # row-major argmin over a symmetric matrix yields the smallest (a, b), a < b
        a, b = divmod(int(np.argmin(dist)), n)
        merged = (size[a] * dist[a] + size[b] * dist[b]) / (size[a] + size[b])
        dist[a, :] = merged
        dist[:, a] = merged
        dist[a, a] = np.inf
        dist[b, :] = np.inf
        dist[:, b] = np.inf
        size[a] += size[b]
        rep[rep == b] = a
    _, cell_of = np.unique(rep, return_inverse=True)
    return LabelMapping(cell_of, target_cells)


def merged_index(db_labels: LabelMatrix, alpha: int, target_cells: int, k: int = 5) -> SemanticIndex:
    """Convenience: co-occurrence from ``db_labels``, merge, then build."""
    mapping = merge_labels(cooccurrence_matrix(db_labels, k), target_cells)
    return build_index(db_labels, IndexParams(alpha, db_labels.n_labels), mapping)


def split_index(index: SemanticIndex, features: FeatureSet, L: int, seed: int = 0) -> SemanticIndex:
    """k-means each posting list into at most ``L`` sub-cells."""
    if L < 1:
        raise ValueError("L must be >= 1")
    x = features.data if isinstance(features, FeatureSet) else np.asarray(features, dtype=np.float32)
    if x.shape[0] < index.n_items:
        raise ValueError("features do not cover every indexed item")
    cents, subs = [], []
    for p, ids in enumerate(index.posting_lists):
        if ids.size == 0:
            cents.append(np.zeros((0, x.shape[1]), dtype=np.float32))
            subs.append(())
            continue
        vecs = x[ids]
        fit = kmeans_fit(vecs, min(L, ids.size), seed=sub_seed(seed, "split", p))
        c = fit.centroids.data
        owner = nearest(vecs, c)[0]
        keep = np.flatnonzero(np.bincount(owner, minlength=c.shape[0]) > 0)
        remap = np.full(c.shape[0], -1)
        remap[keep] = np.arange(keep.size)
        owner = remap[owner]
        cents.append(np.ascontiguousarray(c[keep]))
        sub_lists = []
        for s in range(keep.size):
            sl = ids[owner == s]
            sl.setflags(write=False)
            sub_lists.append(sl)
        subs.append(tuple(sub_lists))
    return replace(index, split=SplitStructure(L, tuple(cents), tuple(subs)))


def _keep_count(tau: float, k: int) -> int:
    return min(k, max(1, math.ceil(tau * k - 1e-9)))


def pruned_candidate_list(index: SemanticIndex, query_vec, query_row, beta: int, tau: float) -> CandidateList:
    """Candidates from only the ``ceil(tau * k)`` nearest sub-cells of each reclaimed list."""
    if index.split is None:
        raise ValueError("index has no split structure; run split_index first")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if not 1 <= beta <= index.params.n_labels:
        raise ValueError(f"beta={beta} must lie in 1..n_labels={index.params.n_labels}")
    q = np.asarray(query_vec, dtype=np.float64)[None, :]
    cells = index.cells_for_labels(top_labels(query_row, beta))
    parts = []
    for c in cells:
        cents = index.split.sub_centroids[c]
        if cents.shape[0] == 0:
            continue
        d2 = sq_distances(q, cents)[0]
        order = np.argsort(d2, kind="stable")
        for s in order[: _keep_count(tau, cents.shape[0])]:
            parts.append(index.split.sub_lists[c][s])
    ids = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
    return CandidateList(ids, tuple(cells))


def attach_pq(index: SemanticIndex, features: FeatureSet, M: int = 8, k_bits: int = 8, seed: int = 0,
              sample: int | None = 16384) -> SemanticIndex:
    """Residual-encode every posting-list entry against its list centroid."""
    x = features.data if isinstance(features, FeatureSet) else np.asarray(features, dtype=np.float32)
    quantizer, codes = train_residual_quantizer(x, index.posting_lists, M, k_bits, seed=seed, sample=sample)
    for c in codes:
        c.setflags(write=False)
    return replace(index, pq=SemanticPQ(quantizer, tuple(codes)))
