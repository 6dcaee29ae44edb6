"""Binary and text formats for features, label confidences and ground truth.

Every binary file starts with the same 9-byte preamble: the magic ``b"SIDX"``,
a little-endian ``u32`` format version and a ``u8`` kind tag. Multi-byte
values are little-endian throughout.
"""

from __future__ import annotations

import os
import struct
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"SIDX"
VERSION = 1

KIND_FEATURES = 1
KIND_LABELS = 2
KIND_INDEX = 3
KIND_PQ = 4

_PREAMBLE = struct.Struct("<4sIB")
_FVEC_HEADER = struct.Struct("<4sIBQI")
_LBL_HEADER = struct.Struct("<4sIBQI")
_LBL_ENTRY = np.dtype([("label", "<u4"), ("conf", "<f4")])


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """``n`` dense vectors of dimension ``d``; item ids are the row numbers."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ValueError("feature dimension must be >= 1")
        if not np.isfinite(data).all():
            raise ValueError("features contain non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()


class LabelMatrix:
    """Sparse top-k classifier confidences, one row per item.

    Rows are held in CSR layout (``indptr``, ``labels``, ``conf``). Within a
    row, entries are ordered by confidence descending with ties broken by
    ascending label id; the constructor enforces that order.
    """

    def __init__(self, indptr, labels, conf, n_labels: int):
        indptr = np.asarray(indptr, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        conf = np.asarray(conf, dtype=np.float32)
        if n_labels < 1:
            raise ValueError("n_labels must be >= 1")
        if indptr.ndim != 1 or indptr.size < 1 or indptr[0] != 0:
            raise ValueError("indptr must start at 0")
        if np.any(np.diff(indptr) < 0) or indptr[-1] != labels.size or labels.size != conf.size:
            raise ValueError("inconsistent CSR arrays")
        if labels.size and (labels.min() < 0 or labels.max() >= n_labels):
            raise ValueError(f"label id out of range 0..{n_labels - 1}")
        if not np.isfinite(conf).all() or (conf.size and (conf.min() < 0 or conf.max() > 1)):
            raise ValueError("confidences must lie in [0, 1]")

        row_of = np.repeat(np.arange(indptr.size - 1), np.diff(indptr))
        by_label = np.lexsort((labels, row_of))
        dup = (row_of[by_label][1:] == row_of[by_label][:-1]) & (
            labels[by_label][1:] == labels[by_label][:-1]
        )
        if dup.any():
            raise ValueError(f"duplicate label id in row {row_of[by_label][1:][dup][0]}")
        order = np.lexsort((labels, -conf.astype(np.float64), row_of))
        labels = labels[order]
        conf = conf[order]

        for arr in (indptr, labels, conf):
            arr.setflags(write=False)
        self.indptr = indptr
        self.labels = labels
        self.conf = conf
        self.n_labels = int(n_labels)

    @classmethod
    def from_rows(cls, rows: Sequence[Iterable[tuple[int, float]]], n_labels: int) -> "LabelMatrix":
        """Build from per-item lists of ``(label_id, confidence)`` pairs."""
        rows = [list(r) for r in rows]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        flat = [e for r in rows for e in r]
        labels = np.array([e[0] for e in flat], dtype=np.int64)
        conf = np.array([e[1] for e in flat], dtype=np.float32)
        return cls(indptr, labels, conf, n_labels)

    @classmethod
    def from_dense(cls, probs: np.ndarray, k: int | None = None) -> "LabelMatrix":
        """Keep the top-``k`` entries of each row of a dense confidence matrix."""
        probs = np.asarray(probs, dtype=np.float32)
        n, n_labels = probs.shape
        k = n_labels if k is None else min(k, n_labels)
        label_ids = np.broadcast_to(np.arange(n_labels), probs.shape)
        order = np.lexsort((label_ids, -probs.astype(np.float64)), axis=1)[:, :k]
        labels = order.reshape(-1)
        conf = np.take_along_axis(probs, order, axis=1).reshape(-1)
        indptr = np.arange(n + 1, dtype=np.int64) * k
        return cls(indptr, labels, conf, n_labels)

    @property
    def n(self) -> int:
        return self.indptr.size - 1

    def __len__(self):
        return self.n

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    def min_row_length(self) -> int:
        return int(self.row_lengths().min()) if self.n else 0

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(label_ids, confidences)`` of row ``i``, already sorted."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.labels[lo:hi], self.conf[lo:hi]

    def rows(self) -> list[list[tuple[int, float]]]:
        return [
            list(zip(lab.tolist(), conf.tolist()))
            for lab, conf in (self.row(i) for i in range(self.n))
        ]

    def top_matrix(self, k: int) -> np.ndarray:
        """``(n, k)`` array of every row's top-``k`` label ids."""
        lengths = self.row_lengths()
        if self.n and lengths.min() < k:
            short = int(np.argmin(lengths))
            raise ValueError(
                f"row {short} stores only {lengths[short]} labels but {k} were requested; "
                "regenerate the label file with a larger top-k"
            )
        cols = self.indptr[:-1, None] + np.arange(k)[None, :]
        return self.labels[cols]

    def __eq__(self, other):
        if not isinstance(other, LabelMatrix):
            return NotImplemented
        return (
            self.n_labels == other.n_labels
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.labels, other.labels)
            and self.conf.tobytes() == other.conf.tobytes()
        )


@dataclass(frozen=True)
class GroundTruthEntry:
    query_id: int
    relevant: frozenset
    junk: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.relevant:
            raise ValueError(f"query {self.query_id} has an empty relevant set")
        if self.relevant & self.junk:
            raise ValueError(f"query {self.query_id}: relevant and junk sets overlap")


@dataclass(frozen=True)
class GroundTruth:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_query(self) -> dict:
        return {e.query_id: e for e in self.entries}


def _atomic_write(path, payload: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def check_preamble(buf: bytes, kind: int, offset: int = 0) -> int:
    """Validate the magic/version/kind preamble and return the offset after it."""
    if len(buf) < offset + _PREAMBLE.size:
        raise FormatError("truncated header", offset)
    magic, version, got_kind = _PREAMBLE.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", offset + 4)
    if got_kind != kind:
        raise FormatError(f"expected kind {kind}, found {got_kind}", offset + 8)
    return offset + _PREAMBLE.size


def features_to_bytes(features: FeatureSet) -> bytes:
    header = _FVEC_HEADER.pack(MAGIC, VERSION, KIND_FEATURES, features.n, features.d)
    return header + features.data.astype("<f4", copy=False).tobytes()


def features_from_bytes(buf: bytes) -> FeatureSet:
    check_preamble(buf, KIND_FEATURES)
    if len(buf) < _FVEC_HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, _, _, n, d = _FVEC_HEADER.unpack_from(buf)
    if d < 1:
        raise FormatError("dimension must be >= 1", 17)
    expected = _FVEC_HEADER.size + 4 * n * d
    if len(buf) < expected:
        # report where the first incomplete row starts
        full_rows = (len(buf) - _FVEC_HEADER.size) // (4 * d)
        raise FormatError(
            f"truncated payload: header declares {n}x{d} floats", _FVEC_HEADER.size + 4 * d * full_rows
        )
    if len(buf) > expected:
        raise FormatError("trailing bytes after payload", expected)
    data = np.frombuffer(buf, dtype="<f4", count=n * d, offset=_FVEC_HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(data.reshape(-1)))
    if bad.size:
        raise FormatError("non-finite value", _FVEC_HEADER.size + 4 * int(bad[0]))
    return FeatureSet(data.astype(np.float32))


def write_features(path, features: FeatureSet):
    if not isinstance(features, FeatureSet):
        features = FeatureSet(features)
    _atomic_write(path, features_to_bytes(features))


def read_features(path) -> FeatureSet:
    return features_from_bytes(Path(path).read_bytes())


def labels_to_bytes(labels: LabelMatrix) -> bytes:
    parts = [_LBL_HEADER.pack(MAGIC, VERSION, KIND_LABELS, labels.n, labels.n_labels)]
    for i in range(labels.n):
        lab, conf = labels.row(i)
        if lab.size > 0xFFFF:
            raise ValueError(f"row {i} has more than 65535 entries")
        entries = np.empty(lab.size, dtype=_LBL_ENTRY)
        entries["label"] = lab
        entries["conf"] = conf
        parts.append(struct.pack("<H", lab.size))
        parts.append(entries.tobytes())
    return b"".join(parts)


def labels_from_bytes(buf: bytes) -> LabelMatrix:
    check_preamble(buf, KIND_LABELS)
    if len(buf) < _LBL_HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, _, _, n, n_labels = _LBL_HEADER.unpack_from(buf)
    if n_labels < 1:
        raise FormatError("n_labels must be >= 1", 17)
    pos = _LBL_HEADER.size
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    for i in range(n):
        if pos + 2 > len(buf):
            raise FormatError(f"truncated row {i}", pos)
        (k,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + k * _LBL_ENTRY.itemsize > len(buf):
            raise FormatError(f"truncated row {i}", pos)
        row = np.frombuffer(buf, dtype=_LBL_ENTRY, count=k, offset=pos)
        if k and int(row["label"].max()) >= n_labels:
            j = int(np.argmax(row["label"] >= n_labels))
            raise FormatError(f"row {i}: label id {int(row['label'][j])} >= n_labels {n_labels}", pos + 8 * j)
        if np.unique(row["label"]).size != k:
            raise FormatError(f"row {i}: duplicate label id", pos)
        conf = row["conf"]
        if not np.isfinite(conf).all() or (k and (conf.min() < 0 or conf.max() > 1)):
            raise FormatError(f"row {i}: confidence outside [0, 1]", pos)
        chunks.append(row)
        pos += k * _LBL_ENTRY.itemsize
        indptr[i + 1] = indptr[i] + k
    if pos != len(buf):
        raise FormatError("trailing bytes after payload", pos)
    entries = np.concatenate(chunks) if chunks else np.empty(0, dtype=_LBL_ENTRY)
    return LabelMatrix(indptr, entries["label"], entries["conf"], n_labels)


def write_labels(path, labels: LabelMatrix):
    _atomic_write(path, labels_to_bytes(labels))


def read_labels(path) -> LabelMatrix:
    return labels_from_bytes(Path(path).read_bytes())


def _parse_ids(text: str, lineno: int, what: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split()]
    except ValueError:
        raise FormatError(f"line {lineno}: non-integer id in {what} list") from None


def parse_ground_truth(text: str) -> GroundTruth:
    """Parse ``"<qid>: ids..."`` lines plus optional ``"<qid>!: ids..."`` junk lines."""
    relevant: dict[int, set] = {}
    junk: dict[int, set] = {}
    order: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, rest = line.partition(":")
        if not sep:
            raise FormatError(f"line {lineno}: missing ':'")
        head = head.strip()
        is_junk = head.endswith("!")
        try:
            qid = int(head[:-1] if is_junk else head)
        except ValueError:
            raise FormatError(f"line {lineno}: bad query id {head!r}") from None
        ids = _parse_ids(rest, lineno, "junk" if is_junk else "relevant")
        if len(set(ids)) != len(ids):
            warnings.warn(f"ground truth line {lineno}: duplicate ids for query {qid} removed", stacklevel=2)
        target = junk if is_junk else relevant
        if qid in target:
            raise FormatError(f"line {lineno}: query {qid} listed twice")
        target[qid] = set(ids)
        if not is_junk:
            order.append(qid)
    for qid in junk:
        if qid not in relevant:
            raise FormatError(f"junk line for query {qid} without a relevant line")
    entries = []
    for qid in order:
        if not relevant[qid]:
            raise FormatError(f"query {qid} has an empty relevant set")
        if relevant[qid] & junk.get(qid, set()):
            raise FormatError(f"query {qid}: relevant and junk sets overlap")
        entries.append(GroundTruthEntry(qid, frozenset(relevant[qid]), frozenset(junk.get(qid, ()))))
    return GroundTruth(tuple(entries))


def format_ground_truth(gt: GroundTruth) -> str:
    lines = []
    for e in gt:
        lines.append(f"{e.query_id}: " + " ".join(str(i) for i in sorted(e.relevant)))
        if e.junk:
            lines.append(f"{e.query_id}!: " + " ".join(str(i) for i in sorted(e.junk)))
    return "\n".join(lines) + "\n"


def read_ground_truth(path) -> GroundTruth:
    return parse_ground_truth(Path(path).read_text(encoding="utf-8"))


def write_ground_truth(path, gt: GroundTruth):
    _atomic_write(path, format_ground_truth(gt).encode("utf-8"))
