"""k-means, product quantization and the table-driven distance evaluators.

Codebooks and centroids are stored as float32 (that is what goes to disk);
every distance or inner product is accumulated in float64.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


def sq_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared L2 distances, shape ``(len(points), len(centers))``."""
    x = np.asarray(points, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    d2 = (x * x).sum(1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def nearest(points, centers, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest center per point (lowest index on ties) and its squared distance."""
    x = np.asarray(points, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    neg2ct = -2.0 * c.T
    cn = (c * c).sum(1)
    labels = np.empty(x.shape[0], dtype=np.int64)
    best = np.empty(x.shape[0], dtype=np.float64)
    for lo in range(0, x.shape[0], chunk):
        s = x[lo : lo + chunk] @ neg2ct
        s += cn
        a = s.argmin(axis=1)
        labels[lo : lo + chunk] = a
        best[lo : lo + chunk] = s[np.arange(a.size), a]
    best += (x * x).sum(1)
    np.maximum(best, 0.0, out=best)
    return labels, best


@dataclass(frozen=True, eq=False)
class Centroids:
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("centroids must be a non-empty (k, d) array")
        if not np.isfinite(data).all():
            raise ValueError("centroids must be finite")
        object.__setattr__(self, "data", data)

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: Centroids
    assignment: np.ndarray
    distortion_history: list = field(default_factory=list)
    n_iter: int = 0
    k_requested: int = 0

    @property
    def distortion(self) -> float:
        return self.distortion_history[-1]


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than requested; callers cap k beforehand
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        np.minimum(closest, ((x - centers[j]) ** 2).sum(1), out=closest)
    return centers


def _repair_empty(x, centers, assign, dist, k):
    counts = np.bincount(assign, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        distortion = np.bincount(assign, weights=dist, minlength=k)
        donor = int(np.argmax(distortion))
        members = np.flatnonzero(assign == donor)
        far = members[int(np.argmax(dist[members]))]
        assign[far] = empty
        dist[far] = 0.0
        centers[empty] = x[far]
    return assign


def kmeans_fit(points, k: int, seed: int = 0, max_iters: int = 25) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations.

    Stops at an assignment fixpoint or after ``max_iters`` updates. A cluster
    left empty by the assignment step takes the point farthest from its
    centroid in the cluster with the largest distortion. If ``k`` exceeds the
    number of distinct points it is lowered to that count with a warning.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("kmeans needs a non-empty (n, d) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    k_requested = k
    n_distinct = np.unique(x, axis=0).shape[0] if k > 1 else 1
    if k > n_distinct:
        warnings.warn(f"kmeans: k={k} exceeds {n_distinct} distinct points; using k={n_distinct}", stacklevel=2)
        k = n_distinct

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    assign = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        new, dist = nearest(x, centers)
        new = _repair_empty(x, centers, new, dist, k)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        sums = np.stack([np.bincount(assign, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)
        centers = sums / counts[:, None]
        diff = x - centers[assign]
        history.append(float(np.einsum("ij,ij->", diff, diff)))
    if assign is None:
        assign = nearest(x, centers)[0]
    return KMeansResult(Centroids(centers), assign, history, it, k_requested)


def kmeans(points, k: int, seed: int = 0, max_iters: int = 25) -> Centroids:
    return kmeans_fit(points, k, seed, max_iters).centroids


@dataclass(frozen=True, eq=False)
class PQCodebook:
    """``M`` sub-codebooks of ``2**k_bits`` codewords each."""

    codebooks: np.ndarray
    k_bits: int

    def __post_init__(self):
        cb = np.ascontiguousarray(self.codebooks, dtype=np.float32)
        if cb.ndim != 3:
            raise ValueError("codebooks must have shape (M, 2**k_bits, sub_dim)")
        if not 1 <= self.k_bits <= 16 or cb.shape[1] != 2**self.k_bits:
            raise ValueError(f"expected {2 ** self.k_bits} codewords per sub-codebook, got {cb.shape[1]}")
        object.__setattr__(self, "codebooks", cb)

    @property
    def M(self) -> int:
        return self.codebooks.shape[0]

    @property
    def ksub(self) -> int:
        return self.codebooks.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.codebooks.shape[2]

    @property
    def d(self) -> int:
        return self.M * self.sub_dim

    @property
    def code_dtype(self):
        return np.uint8 if self.k_bits <= 8 else np.uint16

    def split(self, x: np.ndarray) -> np.ndarray:
        """View ``(..., d)`` vectors as ``(..., M, sub_dim)``."""
        x = np.asarray(x)
        if x.shape[-1] != self.d:
            raise ValueError(f"dimension mismatch: expected {self.d}, got {x.shape[-1]}")
        return x.reshape(x.shape[:-1] + (self.M, self.sub_dim))


def train_pq(points, M: int, k_bits: int, seed: int = 0, max_iters: int = 25, sample: int | None = None) -> PQCodebook:
    """Independent k-means in each of the ``M`` subspaces.

    ``sample`` caps the number of training rows (drawn without replacement).
    When a subspace has fewer than ``2**k_bits`` distinct sub-vectors the
    learned codewords are repeated to fill the sub-codebook.
    """
    x = np.asarray(points, dtype=np.float64)
    n, d = x.shape
    if d % M:
        raise ValueError(f"dimension {d} is not divisible by M={M}")
    ss = np.random.SeedSequence(seed)
    sample_rng, *sub_seeds = [np.random.default_rng(s) for s in ss.spawn(M + 1)]
    if sample is not None and n > sample:
        x = x[np.sort(sample_rng.choice(n, size=sample, replace=False))]
    ksub = 2**k_bits
    sub_dim = d // M
    books = np.empty((M, ksub, sub_dim), dtype=np.float32)
    for m in range(M):
        sub = x[:, m * sub_dim : (m + 1) * sub_dim]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cents = kmeans(sub, ksub, seed=int(sub_seeds[m].integers(2**63)), max_iters=max_iters).data
        reps = -(-ksub // cents.shape[0])
        books[m] = np.tile(cents, (reps, 1))[:ksub]
    return PQCodebook(books, k_bits)


def encode(codebook: PQCodebook, points) -> np.ndarray:
    """Nearest codeword index per subspace; ties go to the lowest index.

    A single vector gives an ``(M,)`` code, a matrix an ``(n, M)`` array.
    """
    x = np.asarray(points, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    sub = codebook.split(x)
    codes = np.empty((x.shape[0], codebook.M), dtype=codebook.code_dtype)
    for m in range(codebook.M):
        codes[:, m] = nearest(sub[:, m], codebook.codebooks[m])[0]
    return codes[0] if single else codes


def decode(codebook: PQCodebook, codes) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.shape[-1] != codebook.M:
        raise ValueError(f"code length {codes.shape[-1]} != M={codebook.M}")
    parts = codebook.codebooks[np.arange(codebook.M), codes]
    return parts.reshape(codes.shape[:-1] + (codebook.d,))


@dataclass(frozen=True, eq=False)
class ADCTables:
    """Per-query lookup tables, ``(M, 2**K)``.

    ``kind`` is ``"l2"`` for squared sub-distances or ``"ip"`` for
    sub-inner-products.
    """

    table: np.ndarray
    kind: str = "l2"

    def lookup(self, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        M = self.table.shape[0]
        if codes.shape[-1] != M:
            raise ValueError(f"code length {codes.shape[-1]} != M={M}")
        return self.table[np.arange(M), codes].sum(axis=-1)


def adc_tables(codebook: PQCodebook, query, kind: str = "l2") -> ADCTables:
    q = codebook.split(np.asarray(query, dtype=np.float64))
    cb = codebook.codebooks.astype(np.float64)
    if kind == "l2":
        diff = cb - q[:, None, :]
        table = np.einsum("mks,mks->mk", diff, diff)
    elif kind == "ip":
        table = np.einsum("mks,ms->mk", cb, q)
    else:
        raise ValueError(f"unknown table kind {kind!r}")
    return ADCTables(table, kind)


def adc_distance(tables: ADCTables, code):
    """Sum of per-subspace table entries for one code or an ``(n, M)`` batch."""
    out = tables.lookup(code)
    return float(out) if np.ndim(out) == 0 else out


def partition_centroid(member_vectors) -> Centroids:
    x = np.asarray(member_vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("partition is empty; it has no centroid")
    return Centroids(x.mean(axis=0, keepdims=True))


def partition_centroids(features: np.ndarray, posting_lists) -> tuple[np.ndarray, np.ndarray]:
    """Means of every posting list, plus a mask of nonempty lists.

    Empty lists get a zero centroid and ``False`` in the mask.
    """
    x = np.asarray(features, dtype=np.float64)
    out = np.zeros((len(posting_lists), x.shape[1]), dtype=np.float64)
    nonempty = np.zeros(len(posting_lists), dtype=bool)
    for i, ids in enumerate(posting_lists):
        if len(ids):
            out[i] = x[ids].mean(axis=0)
            nonempty[i] = True
    return out.astype(np.float32), nonempty


def encode_residual(centroid, codebook: PQCodebook, point) -> np.ndarray:
    c = np.asarray(centroid.data[0] if isinstance(centroid, Centroids) else centroid, dtype=np.float64)
    x = np.asarray(point, dtype=np.float64)
    if x.shape[-1] != c.shape[-1]:
        raise ValueError(f"dimension mismatch: centroid {c.shape[-1]}, point {x.shape[-1]}")
    return encode(codebook, x - c)


@dataclass(frozen=True, eq=False)
class ResidualNormTable:
    """``table[i, m, j] = ||c^i_m + r^m_j||^2`` for every partition ``i``."""

    table: np.ndarray

    def lookup(self, partition: int, codes) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        t = self.table[partition]
        return t[np.arange(t.shape[0]), codes].sum(axis=-1)


def residual_norm_table(centroids, codebook: PQCodebook) -> ResidualNormTable:
    c = codebook.split(np.asarray(centroids, dtype=np.float64))
    cb = codebook.codebooks.astype(np.float64)
    table = (
        np.einsum("pms,pms->pm", c, c)[:, :, None]
        + 2.0 * np.einsum("pms,mks->pmk", c, cb)
        + np.einsum("mks,mks->mk", cb, cb)[None, :, :]
    )
    np.maximum(table, 0.0, out=table)
    return ResidualNormTable(table)


@dataclass(frozen=True, eq=False)
class ResidualQueryTables:
    """Query-side terms for residual scoring against partition centroids."""

    query_norm2: float
    query_norm: float
    centroid_ip: np.ndarray  # <q, c^i>, NaN where not prepared
    ip: ADCTables  # <q_m, r^m_j>
    norms: ResidualNormTable

    def _check(self, partition: int):
        if not 0 <= partition < self.centroid_ip.size or np.isnan(self.centroid_ip[partition]):
            raise KeyError(f"tables were not prepared for partition {partition}")

    def inner(self, partition: int, codes) -> np.ndarray:
        """``<q, c^i + decode(code)>``."""
        self._check(partition)
        return self.centroid_ip[partition] + self.ip.lookup(codes)

    def recon_norm2(self, partition: int, codes) -> np.ndarray:
        self._check(partition)
        return self.norms.lookup(partition, codes)


@dataclass(frozen=True, eq=False)
class ResidualQuantizer:
    """Shared residual PQ codebook with one centroid per partition."""

    codebook: PQCodebook
    centroids: np.ndarray
    norms: ResidualNormTable = None

    def __post_init__(self):
        cents = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if cents.ndim != 2 or cents.shape[1] != self.codebook.d:
            raise ValueError("centroid dimension does not match the codebook")
        object.__setattr__(self, "centroids", cents)
        if self.norms is None:
            object.__setattr__(self, "norms", residual_norm_table(cents, self.codebook))

    def encode(self, partition: int, points) -> np.ndarray:
        return encode_residual(self.centroids[partition], self.codebook, points)

    def reconstruct(self, partition: int, codes) -> np.ndarray:
        return self.centroids[partition].astype(np.float64) + decode(self.codebook, codes)

    def prepare(self, query, partitions=None) -> ResidualQueryTables:
        q = np.asarray(query, dtype=np.float64)
        cip = np.full(self.centroids.shape[0], np.nan)
        sel = np.arange(self.centroids.shape[0]) if partitions is None else np.asarray(partitions, dtype=np.int64)
        if sel.size:
            cip[sel] = self.centroids[sel].astype(np.float64) @ q
        qn2 = float(q @ q)
        return ResidualQueryTables(qn2, float(np.sqrt(qn2)), cip, adc_tables(self.codebook, q, "ip"), self.norms)


def train_residual_quantizer(
    features, posting_lists, M: int, k_bits: int, seed: int = 0, sample: int | None = 16384
) -> tuple[ResidualQuantizer, list]:
    """Fit centroids per list and one PQ codebook on the pooled residuals.

    Returns the quantizer and, per posting list, the ``(len, M)`` residual codes.
    """
    x = np.asarray(features, dtype=np.float64)
    centroids, _ = partition_centroids(x, posting_lists)
    cents64 = centroids.astype(np.float64)
    lists = [np.asarray(ids, dtype=np.int64) for ids in posting_lists]
    owner = np.repeat(np.arange(len(lists)), [ids.size for ids in lists])
    members = np.concatenate(lists) if lists else np.empty(0, dtype=np.int64)
    residuals = x[members] - cents64[owner]
    codebook = train_pq(residuals, M, k_bits, seed=seed, sample=sample)
    codes_all = encode(codebook, residuals)
    bounds = np.cumsum([0] + [ids.size for ids in lists])
    codes = [codes_all[bounds[i] : bounds[i + 1]] for i in range(len(lists))]
    return ResidualQuantizer(codebook, centroids), codes


def semantic_adc_l2(tables: ResidualQueryTables, partition: int, codes):
    """``||q||^2 - 2<q,c^i> - 2 sum_m <q_m,r_m> + sum_m ||c^i_m + r_m||^2``."""
    out = tables.query_norm2 - 2.0 * tables.inner(partition, codes) + tables.recon_norm2(partition, codes)
    return float(out) if np.ndim(out) == 0 else out


def semantic_adc_cosine(tables: ResidualQueryTables, partition: int, codes):
    """Cosine between the query and ``c^i + decode(code)``.

    A zero-norm reconstruction scores ``-inf`` so it ranks last.
    """
    if tables.query_norm <= 0:
        raise ValueError("query has zero norm")
    num = tables.inner(partition, codes)
    den = tables.query_norm * np.sqrt(tables.recon_norm2(partition, codes))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), -np.inf)
    return float(out) if np.ndim(out) == 0 else out
