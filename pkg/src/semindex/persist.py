"""On-disk form of a :class:`SemanticIndex`.

Layout after the shared preamble (kind 3), all little-endian::

    u32 alpha | u32 n_labels | u64 n_items | u32 n_cells | u8 flags
    [flags & 1]  mapping:  n_labels x u32 cell id
    posting lists:         per cell, u64 length then that many u64 ids
    [flags & 2]  split:    u32 L | u32 d | per cell: u32 k, k*d f32 sub-centroids,
                           then k x (u64 length, u64 ids)
    [flags & 4]  PQ block: u8 kind=4 | u32 M | u32 K | u32 d | codebooks f32 |
                           n_cells*d f32 centroids | per posting-list entry:
                           u64 id then M codes (u8, or u16 when K > 8)

Writing is atomic and byte-deterministic: equal indexes give equal files.
"""

from __future__ import annotations

import struct

import numpy as np

from .index import IndexParams, LabelMapping, SemanticIndex, SemanticPQ, SplitStructure
from .io import KIND_INDEX, KIND_PQ, MAGIC, VERSION, FormatError, _atomic_write, check_preamble
from .quantizer import PQCodebook, ResidualQuantizer

_HEAD = struct.Struct("<IIQIB")
_FLAG_MAPPING, _FLAG_SPLIT, _FLAG_PQ = 1, 2, 4


def index_to_bytes(index: SemanticIndex) -> bytes:
    flags = (
        (_FLAG_MAPPING if index.mapping is not None else 0)
        | (_FLAG_SPLIT if index.split is not None else 0)
        | (_FLAG_PQ if index.pq is not None else 0)
    )
    out = [
        struct.pack("<4sIB", MAGIC, VERSION, KIND_INDEX),
        _HEAD.pack(index.params.alpha, index.params.n_labels, index.n_items, index.n_cells, flags),
    ]
    if index.mapping is not None:
        out.append(index.mapping.cell_of.astype("<u4").tobytes())
    for ids in index.posting_lists:
        out.append(struct.pack("<Q", ids.size))
        out.append(np.asarray(ids, dtype="<u8").tobytes())
    if index.split is not None:
        sp = index.split
        d = next((c.shape[1] for c in sp.sub_centroids if c.ndim == 2), 0)
        out.append(struct.pack("<II", sp.L, d))
        for cents, subs in zip(sp.sub_centroids, sp.sub_lists):
            out.append(struct.pack("<I", cents.shape[0]))
            out.append(np.asarray(cents, dtype="<f4").tobytes())
            for ids in subs:
                out.append(struct.pack("<Q", ids.size))
                out.append(np.asarray(ids, dtype="<u8").tobytes())
    if index.pq is not None:
        q = index.pq.quantizer
        cb = q.codebook
        out.append(struct.pack("<BIII", KIND_PQ, cb.M, cb.k_bits, cb.d))
        out.append(cb.codebooks.astype("<f4").tobytes())
        out.append(q.centroids.astype("<f4").tobytes())
        entry = _entry_dtype(cb.M, cb.k_bits)
        for ids, codes in zip(index.posting_lists, index.pq.codes):
            rec = np.empty(ids.size, dtype=entry)
            rec["id"] = ids
            rec["code"] = codes
            out.append(rec.tobytes())
    return b"".join(out)


def _entry_dtype(M: int, k_bits: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("code", "<u1" if k_bits <= 8 else "<u2", (M,))])


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf = buf
        self.pos = pos

    def need(self, size: int, what: str):
        if self.pos + size > len(self.buf):
            raise FormatError(f"truncated {what}", self.pos)

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        self.need(s.size, what)
        vals = s.unpack_from(self.buf, self.pos)
        self.pos += s.size
        return vals

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        dtype = np.dtype(dtype)
        self.need(dtype.itemsize * count, what)
        arr = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos)
        self.pos += dtype.itemsize * count
        return arr

    def id_list(self, n_items: int, what: str) -> np.ndarray:
        start = self.pos
        (length,) = self.unpack("<Q", what)
        ids = self.array("<u8", length, what).astype(np.int64)
        if ids.size and (ids.max() >= n_items or np.any(np.diff(ids) <= 0)):
            raise FormatError(f"{what} ids must be ascending and below {n_items}", start)
        ids.setflags(write=False)
        return ids


def index_from_bytes(buf: bytes) -> SemanticIndex:
    r = _Reader(buf, check_preamble(buf, KIND_INDEX))
    head_at = r.pos
    alpha, n_labels, n_items, n_cells, flags = r.unpack(_HEAD.format, "index header")
    try:
        params = IndexParams(alpha, n_labels)
    except ValueError as exc:
        raise FormatError(str(exc), head_at) from None

    mapping = None
    if flags & _FLAG_MAPPING:
        at = r.pos
        cell_of = r.array("<u4", n_labels, "mapping block").astype(np.int64)
        try:
            mapping = LabelMapping(cell_of, n_cells)
        except ValueError as exc:
            raise FormatError(f"mapping block: {exc}", at) from None
    elif n_cells != n_labels:
        raise FormatError(f"{n_cells} cells without a mapping for {n_labels} labels", head_at)

    lists = tuple(r.id_list(n_items, f"posting list {c}") for c in range(n_cells))

    split = None
    if flags & _FLAG_SPLIT:
        L, d = r.unpack("<II", "split header")
        cents, subs = [], []
        for c in range(n_cells):
            (k,) = r.unpack("<I", f"split block of cell {c}")
            cents.append(r.array("<f4", k * d, f"sub-centroids of cell {c}").astype(np.float32).reshape(k, d))
            subs.append(tuple(r.id_list(n_items, f"sub-list {s} of cell {c}") for s in range(k)))
        split = SplitStructure(L, tuple(cents), tuple(subs))

    pq = None
    if flags & _FLAG_PQ:
        at = r.pos
        kind, M, k_bits, d = r.unpack("<BIII", "PQ header")
        if kind != KIND_PQ:
            raise FormatError(f"expected PQ block kind {KIND_PQ}, found {kind}", at)
        if M < 1 or d % M or not 1 <= k_bits <= 16:
            raise FormatError(f"invalid PQ shape M={M} K={k_bits} d={d}", at)
        books = r.array("<f4", M * (2**k_bits) * (d // M), "PQ codebooks").reshape(M, 2**k_bits, d // M)
        centroids = r.array("<f4", n_cells * d, "PQ centroids").reshape(n_cells, d)
        entry = _entry_dtype(M, k_bits)
        codes = []
        for c, ids in enumerate(lists):
            at = r.pos
            rec = r.array(entry, ids.size, f"PQ codes of list {c}")
            if not np.array_equal(rec["id"].astype(np.int64), ids):
                raise FormatError(f"PQ entries of list {c} do not match its posting list", at)
            code = rec["code"].astype(np.uint8 if k_bits <= 8 else np.uint16)
            code.setflags(write=False)
            codes.append(code)
        quantizer = ResidualQuantizer(PQCodebook(books.copy(), k_bits), centroids.copy())
        pq = SemanticPQ(quantizer, tuple(codes))

    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return SemanticIndex(params, lists, n_items, mapping, split, pq)


def save_index(path, index: SemanticIndex):
    _atomic_write(path, index_to_bytes(index))


def load_index(path) -> SemanticIndex:
    with open(path, "rb") as fh:
        return index_from_bytes(fh.read())
