"""Seeded synthetic retrieval datasets with label structure tied to geometry.

Latent groups are laid out along a chain. Each group owns a window of
consecutive label ids, so neighbouring groups share labels, and its feature
center is one random-walk step away from the previous group's, so
neighbouring groups are also close in feature space. Items of a group scatter
around its center and draw their top labels from the group's window; each of
those top slots is independently replaced by a random label with probability
``label_noise``. A query's relevant set is every database item of its group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import FeatureSet, GroundTruth, GroundTruthEntry, LabelMatrix


@dataclass(frozen=True)
class SyntheticConfig:
    n_db: int = 20000
    n_queries: int = 200
    d: int = 64
    n_labels: int = 100
    clusters: int = 50
    label_noise: float = 0.1
    seed: int = 0
    labels_per_group: int = 5
    top_k: int = 10
    center_step: float = 2.0
    spread: float = 1.0
    elongation: float = 1.5

    def __post_init__(self):
        if self.clusters < 1 or self.clusters > self.n_labels:
            raise ValueError(f"clusters={self.clusters} must lie in 1..n_labels={self.n_labels}")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")
        if self.n_db < self.clusters:
            raise ValueError("n_db must be at least the number of clusters")
        if self.n_queries < 0 or self.d < 1:
            raise ValueError("n_queries must be >= 0 and d >= 1")
        if not 1 <= self.labels_per_group <= self.top_k <= self.n_labels:
            raise ValueError("need 1 <= labels_per_group <= top_k <= n_labels")


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    db: FeatureSet
    queries: FeatureSet
    db_labels: LabelMatrix
    query_labels: LabelMatrix
    ground_truth: GroundTruth
    db_groups: np.ndarray
    query_groups: np.ndarray
    group_labels: np.ndarray

    def __iter__(self):
        # unpacks as (db, queries, db_labels, query_labels, ground_truth)
        return iter((self.db, self.queries, self.db_labels, self.query_labels, self.ground_truth))


def group_label_windows(n_labels: int, clusters: int, width: int) -> np.ndarray:
    """``(clusters, width)`` label ids; consecutive windows spread over the vocabulary."""
    if clusters == 1:
        starts = np.zeros(1, dtype=np.int64)
    else:
        starts = np.round(np.arange(clusters) * (n_labels - width) / (clusters - 1)).astype(np.int64)
    return starts[:, None] + np.arange(width)[None, :]


def _label_rows(groups, windows, cfg: SyntheticConfig, rng: np.random.Generator, chunk: int = 2048):
    n = groups.size
    w, k = cfg.labels_per_group, cfg.top_k
    top = rng.permuted(windows[groups], axis=1)
    corrupt = rng.random((n, w)) < cfg.label_noise
    out = np.empty((n, k), dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        t, cm = top[lo:hi], corrupt[lo:hi]
        keys = rng.random((hi - lo, cfg.n_labels), dtype=np.float32)
        rows = np.arange(hi - lo)[:, None]
        keys[np.broadcast_to(rows, t.shape)[~cm], t[~cm]] = np.inf
        # uniform random order over the labels not kept from the group window
        fresh = np.argsort(keys, axis=1, kind="stable")[:, : k]
        slot_rank = np.cumsum(cm, axis=1) - 1
        block = np.where(cm, np.take_along_axis(fresh, np.maximum(slot_rank, 0), axis=1), t)
        n_used = cm.sum(axis=1)
        tail_idx = n_used[:, None] + np.arange(k - w)[None, :]
        out[lo:hi, :w] = block
        out[lo:hi, w:] = np.take_along_axis(fresh, tail_idx, axis=1)
    return out


def _confidences(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # ratio between consecutive weights is at most exp(-0.5)/0.8 < 1, so rows strictly decrease
    w = np.exp(-0.5 * np.arange(k))[None, :] * rng.uniform(0.8, 1.0, size=(n, k))
    mass = rng.uniform(0.8, 0.95, size=(n, 1))
    return (w / w.sum(axis=1, keepdims=True) * mass).astype(np.float32)


def _label_matrix(ids: np.ndarray, conf: np.ndarray, n_labels: int) -> LabelMatrix:
    n, k = ids.shape
    return LabelMatrix(np.arange(n + 1) * k, ids.reshape(-1), conf.reshape(-1), n_labels)


def synth_dataset(cfg: SyntheticConfig) -> SyntheticDataset:
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    geo, assign, db_lab, q_lab, db_conf, q_conf = streams
    G = cfg.clusters

    # consecutive centers are ~center_step apart; item offsets have norm ~spread
    centers = np.cumsum(geo.normal(size=(G, cfg.d)) * (cfg.center_step / np.sqrt(cfg.d)), axis=0)
    windows = group_label_windows(cfg.n_labels, G, cfg.labels_per_group)

    db_groups = assign.permutation(np.arange(cfg.n_db) % G)
    query_groups = assign.integers(0, G, size=cfg.n_queries)
    noise_scale = cfg.spread / np.sqrt(cfg.d)
    axes = geo.normal(size=(G, cfg.d))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)

    def draw(groups):
        along = geo.normal(size=(groups.size, 1)) * cfg.elongation
        return centers[groups] + along * axes[groups] + geo.normal(size=(groups.size, cfg.d)) * noise_scale

    db = draw(db_groups)
    queries = draw(query_groups)

    db_labels = _label_matrix(
        _label_rows(db_groups, windows, cfg, db_lab), _confidences(cfg.n_db, cfg.top_k, db_conf), cfg.n_labels
    )
    query_labels = _label_matrix(
        _label_rows(query_groups, windows, cfg, q_lab), _confidences(cfg.n_queries, cfg.top_k, q_conf), cfg.n_labels
    )

    members = [np.flatnonzero(db_groups == g) for g in range(G)]
    gt = GroundTruth(
        tuple(GroundTruthEntry(q, frozenset(members[g].tolist())) for q, g in enumerate(query_groups.tolist()))
    )
    return SyntheticDataset(
        FeatureSet(db.astype(np.float32)),
        FeatureSet(queries.astype(np.float32)),
        db_labels,
        query_labels,
        gt,
        db_groups,
        query_groups,
        windows,
    )
