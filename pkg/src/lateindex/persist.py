"""Single-file index persistence.

Little-endian layout:

    magic    "LIDX" (4 bytes)
    version  u16 (= 1)
    flags    u16 (bit 0: store normalized at ingest)
    dim      u32
    rows     u64
    pages    u64
    page table, per page in row order:
        doc_id length u16, doc_id UTF-8 bytes, page_number u32,
        first row u64, patch count u32
    vector payload: rows * dim float32, row-major
    graph section:
        entry point u64, max level u8,
        per node in row order: level u8,
        then per layer 0..level: neighbor count u16, neighbor ids u64 each
    trailing CRC-32C (u32) over all preceding bytes

load(save(x)) reproduces bit-identical vectors and adjacency, hence
identical search results for any query.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import PageKey
from .errors import CorruptIndexError, IoFailureError, VersionMismatchError
from .hnsw import HnswGraph
from .store import PatchStore

MAGIC = b"LIDX"
VERSION = 1
FLAG_NORMALIZED = 1

_HEADER = struct.Struct("<4sHHIQQ")


def _crc32c_tables() -> list[list[int]]:
    poly = 0x82F63B78
    base = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        base.append(crc)
    tables = [base]
    for _ in range(7):
        prev = tables[-1]
        tables.append([(prev[i] >> 8) ^ base[prev[i] & 0xFF] for i in range(256)])
    return tables


_CRC = _crc32c_tables()


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC-32C (Castagnoli), slice-by-8. crc32c(b"123456789") == 0xE3069283."""
    crc ^= 0xFFFFFFFF
    t0, t1, t2, t3, t4, t5, t6, t7 = _CRC
    n8 = len(data) // 8
    if n8:
        for word in struct.unpack_from(f"<{n8}Q", data):
            v = word ^ crc
            crc = (
                t7[v & 0xFF]
                ^ t6[(v >> 8) & 0xFF]
                ^ t5[(v >> 16) & 0xFF]
                ^ t4[(v >> 24) & 0xFF]
                ^ t3[(v >> 32) & 0xFF]
                ^ t2[(v >> 40) & 0xFF]
                ^ t1[(v >> 48) & 0xFF]
                ^ t0[v >> 56]
            )
    for b in data[n8 * 8 :]:
        crc = t0[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def save_index(store: PatchStore, graph: HnswGraph, path: str | Path) -> None:
    """Write store plus graph; identical inputs produce identical bytes."""
    parts: list[bytes] = []
    flags = FLAG_NORMALIZED if store.normalized else 0
    parts.append(_HEADER.pack(MAGIC, VERSION, flags, store.dim, store.row_count, store.page_count))
    for key in store.page_keys():
        doc = key.doc_id.encode("utf-8")
        if len(doc) > 0xFFFF:
            raise ValueError(f"doc_id too long to serialize: {key.doc_id[:32]!r}...")
        first, count = store.page_range(key)
        parts.append(struct.pack("<H", len(doc)))
        parts.append(doc)
        parts.append(struct.pack("<IQI", key.page_number, first, count))
    parts.append(np.ascontiguousarray(store.matrix, dtype="<f4").tobytes())
    parts.append(struct.pack("<QB", graph.entry_point, graph.max_level))
    for node in range(store.row_count):
        level = graph.level_of(node)
        parts.append(struct.pack("<B", level))
        for layer in range(level + 1):
            nbrs = graph.neighbors(node, layer)
            parts.append(struct.pack("<H", len(nbrs)))
            parts.append(np.asarray(nbrs, dtype="<u8").tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", crc32c(blob))
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptIndexError(f"{self.path}: truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))


def load_index(path: str | Path) -> tuple[PatchStore, HnswGraph]:
    """Read an index written by :func:`save_index`, validating the CRC."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size + 4:
        raise CorruptIndexError(f"{path}: file too small ({len(raw)} bytes)")
    body, (stored_crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if crc32c(body) != stored_crc:
        raise CorruptIndexError(f"{path}: CRC mismatch")
    rd = _Reader(body, path)
    magic, version, flags, dim, rows, pages = rd.unpack(_HEADER)
    if magic != MAGIC:
        raise CorruptIndexError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported index version {version}")
    if rows == 0 or pages == 0:
        raise CorruptIndexError(f"{path}: empty index (rows={rows}, pages={pages})")

    u16 = struct.Struct("<H")
    page_tail = struct.Struct("<IQI")
    page_keys: list[PageKey] = []
    first_rows = np.empty(pages, dtype=np.int64)
    counts = np.empty(pages, dtype=np.int64)
    for i in range(pages):
        (doc_len,) = rd.unpack(u16)
        doc_id = rd.take(doc_len).decode("utf-8")
        page_number, first, count = rd.unpack(page_tail)
        page_keys.append(PageKey(doc_id, page_number))
        first_rows[i] = first
        counts[i] = count
    if int(counts.sum()) != rows:
        raise CorruptIndexError(f"{path}: page table rows disagree with header")

    payload = rd.take(rows * dim * 4)
    matrix = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    store = PatchStore(matrix, page_keys, first_rows, counts, normalized=bool(flags & FLAG_NORMALIZED))

    entry_fmt = struct.Struct("<QB")
    entry_point, max_level = rd.unpack(entry_fmt)
    u8 = struct.Struct("<B")
    levels = np.empty(rows, dtype=np.int32)
    adjacency: list[list[list[int]]] = []
    for node in range(rows):
        (level,) = rd.unpack(u8)
        levels[node] = level
        per_layer = []
        for _ in range(level + 1):
            (n_nbrs,) = rd.unpack(u16)
            ids = np.frombuffer(rd.take(n_nbrs * 8), dtype="<u8")
            if n_nbrs and int(ids.max()) >= rows:
                raise CorruptIndexError(f"{path}: neighbor id out of range at node {node}")
            per_layer.append(ids.astype(np.int64).tolist())
        adjacency.append(per_layer)
    if rd.pos != len(body):
        raise CorruptIndexError(f"{path}: {len(body) - rd.pos} trailing bytes")
    if entry_point >= rows or max_level != int(levels.max()):
        raise CorruptIndexError(f"{path}: inconsistent graph header")

    m = _infer_m(levels, adjacency)
    graph = HnswGraph(store, m, levels)
    graph.entry_point = int(entry_point)
    graph.max_level = int(max_level)
    graph._ensure_layers(int(levels.max()))
    for node, per_layer in enumerate(adjacency):
        for layer, nbrs in enumerate(per_layer):
            if nbrs or layer == 0:
                graph._set_neighbors(node, layer, nbrs)
    return store, graph


def _infer_m(levels: np.ndarray, adjacency: list[list[list[int]]]) -> int:
    """The layout does not carry M; recover a capacity bound from observed
    degrees so layer-0 storage is wide enough (degree <= 2M by contract)."""
    max0 = max((len(a[0]) for a in adjacency), default=0)
    max_up = max(
        (len(nbrs) for a in adjacency for nbrs in a[1:]),
        default=0,
    )
    return max(2, (max0 + 1) // 2, max_up)
