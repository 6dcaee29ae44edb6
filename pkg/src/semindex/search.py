"""Retrieval strategies that all return a :class:`Ranking`.

Exact strategies rank candidates with the stored vectors; the ADC variants
rank PQ reconstructions through lookup tables. L2 rankings are ascending,
cosine rankings descending, and equal scores are ordered by ascending id.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .index import SemanticIndex, candidate_list, pruned_candidate_list
from .io import FeatureSet
from .quantizer import (
    PQCodebook,
    ResidualQuantizer,
    adc_tables,
    decode,
    encode,
    kmeans_fit,
    semantic_adc_cosine,
    semantic_adc_l2,
    nearest,
    sq_distances,
    train_pq,
)
from .seeding import sub_seed

METRICS = ("l2", "cosine")


@dataclass(frozen=True, eq=False)
class Ranking:
    query_id: int
    ids: np.ndarray
    scores: np.ndarray
    metric: str = "l2"

    def __len__(self):
        return self.ids.size

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.scores.tolist()))


def _check_metric(metric):
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")


def rank(ids, scores, metric: str = "l2", R: int | None = None, query_id: int = -1) -> Ranking:
    """Sort ``(id, score)`` pairs under the ranking contract and cut to ``R``."""
    _check_metric(metric)
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    key = scores if metric == "l2" else -scores
    order = np.lexsort((ids, key))
    if R is not None:
        order = order[: max(R, 0)]
    return Ranking(query_id, ids[order], scores[order], metric)


def best_per_id(ids, scores, metric: str = "l2") -> tuple[np.ndarray, np.ndarray]:
    """Collapse repeated ids, keeping the best score of each."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    key = scores if metric == "l2" else -scores
    order = np.lexsort((key, ids))
    ids, scores = ids[order], scores[order]
    first = np.ones(ids.size, dtype=bool)
    first[1:] = ids[1:] != ids[:-1]
    return ids[first], scores[first]


def exact_scores(vectors: np.ndarray, query, metric: str = "l2") -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != q.shape[-1]:
        raise ValueError(f"dimension mismatch: vectors {x.shape}, query {q.shape}")
    if metric == "l2":
        diff = x - q
        return np.einsum("ij,ij->i", diff, diff)
    _check_metric(metric)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x)) * np.sqrt(q @ q)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(norms > 0, (x @ q) / np.where(norms > 0, norms, 1.0), -np.inf)


def _vectors(db) -> np.ndarray:
    return db.data if isinstance(db, FeatureSet) else np.asarray(db, dtype=np.float32)


def rank_candidates(db, ids, query, metric: str = "l2", R: int | None = None, query_id: int = -1) -> Ranking:
    ids = np.asarray(ids, dtype=np.int64)
    return rank(ids, exact_scores(_vectors(db)[ids], query, metric), metric, R, query_id)


def exhaustive_search(db, query, R: int | None = None, metric: str = "l2", query_id: int = -1) -> Ranking:
    x = _vectors(db)
    return rank(np.arange(x.shape[0]), exact_scores(x, query, metric), metric, R, query_id)


# -- IVF ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IvfIndex:
    """k-means coarse quantizer; each item sits in the list of its nearest centroid."""

    centroids: np.ndarray
    posting_lists: tuple
    assignment: np.ndarray
    residual: ResidualQuantizer | None = None
    codes: tuple | None = None

    @property
    def k_coarse(self) -> int:
        return self.centroids.shape[0]


def ivf_build(db, k_coarse: int, seed: int = 0, max_iters: int = 25) -> IvfIndex:
    x = _vectors(db)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = kmeans_fit(x, k_coarse, seed=sub_seed(seed, "ivf"), max_iters=max_iters)
    cents = fit.centroids.data
    assign = nearest(x, cents)[0]
    order = np.argsort(assign, kind="stable")
    bounds = np.searchsorted(assign[order], np.arange(cents.shape[0] + 1))
    lists = tuple(order[bounds[i] : bounds[i + 1]].astype(np.int64) for i in range(cents.shape[0]))
    return IvfIndex(cents, lists, assign)


def ivf_attach_pq(index: IvfIndex, db, M: int = 8, k_bits: int = 8, seed: int = 0, sample: int | None = 16384) -> IvfIndex:
    """Encode ``x - c`` for each item against its single coarse centroid."""
    x = _vectors(db).astype(np.float64)
    residuals = x - index.centroids.astype(np.float64)[index.assignment]
    codebook = train_pq(residuals, M, k_bits, seed=sub_seed(seed, "pq", 1), sample=sample)
    codes_all = encode(codebook, residuals)
    codes = tuple(codes_all[ids] for ids in index.posting_lists)
    return IvfIndex(index.centroids, index.posting_lists, index.assignment, ResidualQuantizer(codebook, index.centroids), codes)


def ivf_probe(index: IvfIndex, query, nprobe: int) -> np.ndarray:
    if nprobe < 1:
        raise ValueError("nprobe must be >= 1")
    if nprobe > index.k_coarse:
        warnings.warn(f"nprobe={nprobe} clamped to k_coarse={index.k_coarse}", stacklevel=3)
        nprobe = index.k_coarse
    d2 = sq_distances(np.asarray(query, dtype=np.float64)[None, :], index.centroids)[0]
    return np.argsort(d2, kind="stable")[:nprobe]


def ivf_candidates(index: IvfIndex, query, nprobe: int) -> np.ndarray:
    cells = ivf_probe(index, query, nprobe)
    return np.sort(np.concatenate([index.posting_lists[c] for c in cells]))


def ivf_search(index: IvfIndex, db, query, nprobe: int, R: int | None = None, metric: str = "l2",
               query_id: int = -1) -> Ranking:
    return rank_candidates(db, ivf_candidates(index, query, nprobe), query, metric, R, query_id)


def _residual_scores(quantizer: ResidualQuantizer, cells, lists, codes, query, metric):
    tables = quantizer.prepare(query, cells)
    score = semantic_adc_l2 if metric == "l2" else semantic_adc_cosine
    all_ids, all_scores = [], []
    for c in cells:
        if lists[c].size == 0:
            continue
        all_ids.append(lists[c])
        all_scores.append(np.atleast_1d(score(tables, int(c), codes[c])))
    if not all_ids:
        return np.empty(0, dtype=np.int64), np.empty(0)
    return best_per_id(np.concatenate(all_ids), np.concatenate(all_scores), metric)


def ivf_adc_search(index: IvfIndex, query, nprobe: int, R: int | None = None, metric: str = "l2",
                   query_id: int = -1) -> Ranking:
    if index.residual is None:
        raise ValueError("IVF index carries no PQ codes; call ivf_attach_pq first")
    _check_metric(metric)
    cells = ivf_probe(index, query, nprobe)
    ids, scores = _residual_scores(index.residual, cells, index.posting_lists, index.codes, query, metric)
    return rank(ids, scores, metric, R, query_id)


# -- flat ADC ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlatPQ:
    codebook: PQCodebook
    codes: np.ndarray
    recon_norms: np.ndarray = None

    def __post_init__(self):
        if self.recon_norms is None:
            x = decode(self.codebook, self.codes).astype(np.float64)
            object.__setattr__(self, "recon_norms", np.sqrt(np.einsum("ij,ij->i", x, x)))


def flat_pq_build(db, M: int = 8, k_bits: int = 8, seed: int = 0, sample: int | None = 16384) -> FlatPQ:
    x = _vectors(db)
    codebook = train_pq(x, M, k_bits, seed=sub_seed(seed, "pq", 0), sample=sample)
    return FlatPQ(codebook, encode(codebook, x))


def flat_adc_search(pq: FlatPQ, query, R: int | None = None, metric: str = "l2", query_id: int = -1) -> Ranking:
    _check_metric(metric)
    ids = np.arange(pq.codes.shape[0])
    if metric == "l2":
        scores = adc_tables(pq.codebook, query, "l2").lookup(pq.codes)
    else:
        q = np.asarray(query, dtype=np.float64)
        ip = adc_tables(pq.codebook, q, "ip").lookup(pq.codes)
        den = pq.recon_norms * np.sqrt(q @ q)
        with np.errstate(divide="ignore", invalid="ignore"):
            scores = np.where(den > 0, ip / np.where(den > 0, den, 1.0), -np.inf)
    return rank(ids, scores, metric, R, query_id)


# -- semantic ----------------------------------------------------------------


def semantic_candidates(index: SemanticIndex, query_vec, query_row, beta: int, tau: float | None = None):
    if tau is None:
        return candidate_list(index, query_row, beta)
    return pruned_candidate_list(index, query_vec, query_row, beta, tau)


def semantic_search(index: SemanticIndex, db, query_vec, query_row, beta: int, R: int | None = None,
                    metric: str = "l2", tau: float | None = None, query_id: int = -1) -> Ranking:
    cand = semantic_candidates(index, query_vec, query_row, beta, tau)
    return rank_candidates(db, cand.ids, query_vec, metric, R, query_id)


def semantic_adc_search(index: SemanticIndex, query_vec, query_row, beta: int, R: int | None = None,
                        metric: str = "l2", query_id: int = -1) -> Ranking:
    """Score every reclaimed (list, code) pair from tables; an id keeps its best score."""
    if index.pq is None:
        raise ValueError("index has no PQ block; call attach_pq first")
    _check_metric(metric)
    cells = candidate_list(index, query_row, beta).source_cells
    ids, scores = _residual_scores(index.pq.quantizer, list(cells), index.posting_lists, index.pq.codes, query_vec, metric)
    return rank(ids, scores, metric, R, query_id)
