"""Retrieval metrics and the evaluation harness shared by every strategy."""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .index import IndexParams, attach_pq, build_index, cooccurrence_matrix, merge_labels, split_index
from .io import FeatureSet, GroundTruth, LabelMatrix
from .search import (
    flat_adc_search,
    flat_pq_build,
    ivf_adc_search,
    ivf_attach_pq,
    ivf_build,
    ivf_candidates,
    rank,
    rank_candidates,
    exact_scores,
    semantic_adc_search,
    semantic_candidates,
)
from .seeding import sub_seed

STRATEGIES = ("exhaustive", "ivf", "ivf-adc", "adc", "semantic", "semantic-adc")


def _ids(ranking) -> np.ndarray:
    return np.asarray(getattr(ranking, "ids", ranking), dtype=np.int64)


def _drop_junk(ids: np.ndarray, junk) -> np.ndarray:
    if not junk:
        return ids
    return ids[~np.isin(ids, np.fromiter(junk, dtype=np.int64))]


def average_precision(ranking, relevant, junk=()) -> float:
    """Uninterpolated AP; relevant items never retrieved contribute zero."""
    if not relevant:
        raise ValueError("relevant set is empty")
    ids = _drop_junk(_ids(ranking), junk)
    hits = np.isin(ids, np.fromiter(relevant, dtype=np.int64))
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    return float((np.arange(1, ranks.size + 1) / ranks).sum() / len(relevant))


def recall_at(ranking, relevant, R: int, junk=()) -> float:
    if not relevant:
        raise ValueError("relevant set is empty")
    ids = _drop_junk(_ids(ranking), junk)[: max(R, 0)]
    return float(np.isin(ids, np.fromiter(relevant, dtype=np.int64)).sum() / len(relevant))


def candidate_recall(candidates, relevant) -> float:
    if not relevant:
        raise ValueError("relevant set is empty")
    return float(np.isin(np.fromiter(relevant, dtype=np.int64), _ids(candidates)).sum() / len(relevant))


def scope_ratio(candidates, n: int) -> float:
    return float(np.unique(_ids(candidates)).size / n) if n else 0.0


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str = "semantic"
    alpha: int = 5
    beta: int = 5
    tau: float | None = None
    L: int = 10
    target_cells: int | None = None
    M: int = 8
    K: int = 8
    metric: str = "l2"
    nprobe: int = 5
    k_coarse: int | None = None
    R: tuple = (1, 10, 100)
    seed: int = 0
    pq_sample: int | None = 16384

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy == "semantic-adc" and self.tau is not None:
            raise ValueError("pruning (tau) applies to the exact semantic strategy only")
        object.__setattr__(self, "R", tuple(sorted(int(r) for r in self.R)))

    def echo(self) -> dict:
        out = asdict(self)
        out["R"] = list(self.R)
        return out


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """Inputs of an evaluation run.

    ``db`` may be ``None`` only when a stored index with a PQ block answers
    queries; ``n_db`` then carries the database size.
    """

    db: FeatureSet | None
    queries: FeatureSet
    db_labels: LabelMatrix | None
    query_labels: LabelMatrix | None
    ground_truth: GroundTruth
    n_db: int | None = None

    def __post_init__(self):
        if self.db is not None:
            if self.n_db is not None and self.n_db != self.db.n:
                raise ValueError(f"n_db={self.n_db} but the feature file holds {self.db.n} vectors")
            object.__setattr__(self, "n_db", self.db.n)
        elif self.n_db is None:
            raise ValueError("need database features or an explicit n_db")

    @classmethod
    def from_synthetic(cls, ds) -> "DatasetBundle":
        return cls(ds.db, ds.queries, ds.db_labels, ds.query_labels, ds.ground_truth)

    def check(self, needs_labels: bool, needs_db: bool = True, needs_db_labels: bool | None = None):
        if needs_db_labels is None:
            needs_db_labels = needs_labels
        if self.db is None:
            if needs_db:
                raise ValueError("this strategy needs the database feature file")
        elif self.db.d != self.queries.d:
            raise ValueError(f"database dimension {self.db.d} != query dimension {self.queries.d}")
        if needs_labels:
            if self.query_labels is None:
                raise ValueError("this strategy needs a query label file")
            if self.query_labels.n != self.queries.n:
                raise ValueError("query label rows do not match the query feature rows")
        if needs_db_labels:
            if self.db_labels is None:
                raise ValueError("this strategy needs a database label file")
            if self.db_labels.n != self.n_db:
                raise ValueError("database label rows do not match the feature rows")
        if needs_labels and self.db_labels is not None and self.db_labels.n_labels != self.query_labels.n_labels:
            raise ValueError("database and query label vocabularies differ")
        for e in self.ground_truth:
            if not 0 <= e.query_id < self.queries.n:
                raise ValueError(f"ground truth names query {e.query_id}, but there are {self.queries.n} queries")
            if max(e.relevant) >= self.n_db or min(e.relevant) < 0:
                raise ValueError(f"ground truth for query {e.query_id} names ids outside the database")


@dataclass
class MetricsReport:
    map: float
    recall_candidates: float
    recall_candidates_pooled: float
    r_at: dict
    r_at_pooled: dict
    scope_ratio: float
    wall_time_s: float
    n_queries: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "recall_candidates": self.recall_candidates,
            "recall_candidates_pooled": self.recall_candidates_pooled,
            "r_at": {str(k): v for k, v in sorted(self.r_at.items())},
            "r_at_pooled": {str(k): v for k, v in sorted(self.r_at_pooled.items())},
            "scope_ratio": self.scope_ratio,
            "wall_time_s": self.wall_time_s,
            "n_queries": self.n_queries,
            "config": self.config,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def csv_fields(self) -> list[str]:
        cfg_keys = ["strategy", "alpha", "beta", "tau", "L", "target_cells", "M", "K", "metric", "nprobe", "k_coarse", "seed"]
        r_keys = [f"R@{r}" for r in sorted(self.r_at)]
        return cfg_keys + ["map", "recall_candidates", "recall_candidates_pooled", "scope_ratio"] + r_keys + ["wall_time_s", "n_queries"]

    def csv_row(self) -> dict:
        row = {k: self.config.get(k) for k in self.csv_fields() if k in self.config}
        row.update(
            map=self.map,
            recall_candidates=self.recall_candidates,
            recall_candidates_pooled=self.recall_candidates_pooled,
            scope_ratio=self.scope_ratio,
            wall_time_s=self.wall_time_s,
            n_queries=self.n_queries,
        )
        row.update({f"R@{r}": v for r, v in self.r_at.items()})
        return row


def reports_to_csv(reports) -> str:
    reports = list(reports)
    buf = io.StringIO()
    if not reports:
        return ""
    writer = csv.DictWriter(buf, fieldnames=reports[0].csv_fields(), lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


class Engine:
    """A built strategy: produces ``(candidate ids, ranking)`` per query."""

    def __init__(self, cfg: StrategyConfig, bundle: DatasetBundle, semantic_index=None):
        self.cfg = cfg
        self.bundle = bundle
        s = cfg.strategy
        self.index = semantic_index
        stored_pq = s == "semantic-adc" and semantic_index is not None and semantic_index.pq is not None
        sem = s.startswith("semantic")
        bundle.check(needs_labels=sem, needs_db=not stored_pq, needs_db_labels=sem and self.index is None)
        if self.index is not None:
            if self.index.n_items != bundle.n_db:
                raise ValueError(f"index covers {self.index.n_items} items, database has {bundle.n_db}")
            if sem and self.index.params.n_labels != bundle.query_labels.n_labels:
                raise ValueError("index and query label vocabularies differ")
        if s.startswith("semantic") and self.index is None:
            self.index = build_semantic(cfg, bundle)
        if s == "semantic" and cfg.tau is not None and self.index.split is None:
            self.index = split_index(self.index, bundle.db, cfg.L, seed=sub_seed(cfg.seed, "kmeans"))
        if s == "semantic-adc" and self.index.pq is None:
            self.index = attach_pq(self.index, bundle.db, cfg.M, cfg.K, seed=sub_seed(cfg.seed, "pq"), sample=cfg.pq_sample)
        if s in ("ivf", "ivf-adc"):
            k = cfg.k_coarse or (bundle.db_labels.n_labels if bundle.db_labels is not None else 1000)
            self.ivf = ivf_build(bundle.db, min(k, bundle.db.n), seed=cfg.seed)
            if s == "ivf-adc":
                self.ivf = ivf_attach_pq(self.ivf, bundle.db, cfg.M, cfg.K, seed=cfg.seed, sample=cfg.pq_sample)
        if s == "adc":
            self.flat = flat_pq_build(bundle.db, cfg.M, cfg.K, seed=cfg.seed, sample=cfg.pq_sample)

    def search(self, qi: int, R: int | None = None):
        cfg, b = self.cfg, self.bundle
        q = b.queries.data[qi]
        s = cfg.strategy
        if s == "exhaustive":
            ids = np.arange(b.n_db)
            return ids, rank(ids, exact_scores(b.db.data, q, cfg.metric), cfg.metric, R, qi)
        if s == "adc":
            return np.arange(b.n_db), flat_adc_search(self.flat, q, R, cfg.metric, qi)
        if s in ("ivf", "ivf-adc"):
            ids = ivf_candidates(self.ivf, q, cfg.nprobe)
            if s == "ivf":
                return ids, rank_candidates(b.db, ids, q, cfg.metric, R, qi)
            return ids, ivf_adc_search(self.ivf, q, cfg.nprobe, R, cfg.metric, qi)
        row = b.query_labels.row(qi)
        if s == "semantic":
            cand = semantic_candidates(self.index, q, row, cfg.beta, cfg.tau)
            return cand.ids, rank_candidates(b.db, cand.ids, q, cfg.metric, R, qi)
        ranking = semantic_adc_search(self.index, q, row, cfg.beta, R, cfg.metric, qi)
        return ranking.ids, ranking


def build_semantic(cfg: StrategyConfig, bundle: DatasetBundle):
    labels = bundle.db_labels
    mapping = None
    if cfg.target_cells is not None and cfg.target_cells != labels.n_labels:
        mapping = merge_labels(cooccurrence_matrix(labels), cfg.target_cells)
    return build_index(labels, IndexParams(cfg.alpha, labels.n_labels), mapping)


def evaluate(cfg: StrategyConfig, bundle: DatasetBundle, engine: Engine | None = None) -> MetricsReport:
    """Average per-query metrics over the ground-truth entries, in file order.

    Index construction is excluded from ``wall_time_s``; only the query loop is timed.
    """
    engine = engine or Engine(cfg, bundle)
    entries = list(bundle.ground_truth)
    if not entries:
        raise ValueError("ground truth is empty")
    results = []
    t0 = time.perf_counter()
    for e in entries:
        results.append(engine.search(e.query_id))
    wall = time.perf_counter() - t0

    aps, cand_rec, scopes = [], [], []
    r_at = {r: [] for r in cfg.R}
    hit_r = {r: 0 for r in cfg.R}
    hit_cand, total_rel = 0, 0
    n = bundle.n_db
    for e, (cand, ranking) in zip(entries, results):
        rel = np.fromiter(e.relevant, dtype=np.int64)
        aps.append(average_precision(ranking, e.relevant, e.junk))
        cand_rec.append(candidate_recall(cand, e.relevant))
        scopes.append(scope_ratio(cand, n))
        total_rel += rel.size
        hit_cand += int(np.isin(rel, cand).sum())
        ranked = _drop_junk(ranking.ids, e.junk)
        for r in cfg.R:
            found = int(np.isin(ranked[:r], rel).sum())
            r_at[r].append(found / rel.size)
            hit_r[r] += found
    return MetricsReport(
        map=float(np.mean(aps)),
        recall_candidates=float(np.mean(cand_rec)),
        recall_candidates_pooled=hit_cand / total_rel,
        r_at={r: float(np.mean(v)) for r, v in r_at.items()},
        r_at_pooled={r: hit_r[r] / total_rel for r in cfg.R},
        scope_ratio=float(np.mean(scopes)),
        wall_time_s=wall,
        n_queries=len(entries),
        config=cfg.echo(),
    )


_QUERY_ONLY = ("beta", "tau", "nprobe", "metric", "R")


def sweep(base: StrategyConfig, bundle: DatasetBundle, grid: dict) -> list[MetricsReport]:
    """Evaluate the Cartesian product of ``grid`` (field -> values) around ``base``.

    Engines are reused across settings that only change query-time fields.
    """
    keys = list(grid)
    engines = {}
    reports = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = replace(base, **dict(zip(keys, values)))
        build_key = tuple(v for k, v in asdict(cfg).items() if k not in _QUERY_ONLY) + (cfg.tau is not None,)
        if build_key not in engines:
            engines[build_key] = Engine(cfg, bundle)
        engine = engines[build_key]
        engine.cfg = cfg
        reports.append(evaluate(cfg, bundle, engine))
    return reports
