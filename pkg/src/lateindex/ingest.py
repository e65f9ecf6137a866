"""Corpus manifests, embedding-file ingestion, and the seeded synthetic
corpus/query generator with known relevance.

Manifest: JSON lines, one page per line, fields exactly
{"doc_id", "page", "patches", "file", "offset_vectors"}. Vector files are
MVEC; `file` paths resolve relative to the manifest's directory.

Queries file: JSON lines {"query_id", "file", "offset_vectors", "tokens"}
referencing MVEC rows. Qrels: tab-separated
`query_id<TAB>doc_id<TAB>page<TAB>relevance`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import PageKey, PatchKey, PatchRecord, QueryEmbedding, l2_normalize
from .errors import (
    BadSpecError,
    CorruptFileError,
    DimensionMismatchError,
    DuplicatePageError,
    IoFailureError,
)
from .mvec import read_mvec, write_mvec


@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    page: int
    patches: int
    file: str
    offset_vectors: int


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    base_dir: Path

    def __len__(self) -> int:
        return len(self.entries)


_MANIFEST_FIELDS = {"doc_id", "page", "patches", "file", "offset_vectors"}


def write_manifest(entries, path: str | Path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for e in entries:
                fh.write(
                    json.dumps(
                        {
                            "doc_id": e.doc_id,
                            "page": e.page,
                            "patches": e.patches,
                            "file": e.file,
                            "offset_vectors": e.offset_vectors,
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    entries = []
    seen: set[tuple[str, int]] = set()
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptFileError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if set(obj) != _MANIFEST_FIELDS:
            raise CorruptFileError(
                f"{path}:{lineno}: fields {sorted(obj)} != {sorted(_MANIFEST_FIELDS)}"
            )
        key = (obj["doc_id"], obj["page"])
        if key in seen:
            raise DuplicatePageError(f"{path}:{lineno}: duplicate page {key}")
        seen.add(key)
        entries.append(ManifestEntry(**obj))
    return CorpusManifest(tuple(entries), path.parent)


def ingest_corpus(manifest: CorpusManifest, normalize: bool = False) -> Iterator[PatchRecord]:
    """Yield one PatchRecord per (page, patch j), patch numbers assigned by
    row order within each entry's MVEC slice."""
    cache: dict[str, np.ndarray] = {}
    dim: int | None = None
    for entry in manifest.entries:
        matrix = cache.get(entry.file)
        if matrix is None:
            matrix = cache[entry.file] = read_mvec(manifest.base_dir / entry.file)
        if dim is None:
            dim = matrix.shape[1]
        elif matrix.shape[1] != dim:
            raise DimensionMismatchError(
                f"{entry.file}: dim {matrix.shape[1]} != corpus dim {dim}"
            )
        end = entry.offset_vectors + entry.patches
        if entry.offset_vectors < 0 or end > matrix.shape[0]:
            raise CorruptFileError(
                f"{entry.file}: rows [{entry.offset_vectors}, {end}) out of bounds "
                f"({matrix.shape[0]} rows)"
            )
        page = PageKey(entry.doc_id, entry.page)
        for j in range(entry.patches):
            vec = matrix[entry.offset_vectors + j]
            if normalize:
                vec = l2_normalize(vec)
            yield PatchRecord(PatchKey(page, j), vec)


# -- queries and qrels ------------------------------------------------------


def write_queries(queries: list[QueryEmbedding], mvec_path: Path, jsonl_path: Path) -> None:
    """Stack all query matrices into one MVEC file plus a JSONL directory."""
    stacked = np.concatenate([q.matrix for q in queries])
    write_mvec(stacked, mvec_path)
    offset = 0
    try:
        with open(jsonl_path, "w", encoding="utf-8") as fh:
            for q in queries:
                fh.write(
                    json.dumps(
                        {
                            "query_id": q.query_id,
                            "file": mvec_path.name,
                            "offset_vectors": offset,
                            "tokens": q.token_count,
                        },
                        separators=(",", ":"),
                    )
                    + "\n"
                )
                offset += q.token_count
    except OSError as exc:
        raise IoFailureError(f"cannot write {jsonl_path}: {exc}") from exc


def read_queries(jsonl_path: str | Path) -> list[QueryEmbedding]:
    jsonl_path = Path(jsonl_path)
    cache: dict[str, np.ndarray] = {}
    queries = []
    try:
        with open(jsonl_path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read {jsonl_path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptFileError(f"{jsonl_path}:{lineno}: invalid JSON") from exc
        matrix = cache.get(obj["file"])
        if matrix is None:
            matrix = cache[obj["file"]] = read_mvec(jsonl_path.parent / obj["file"])
        start = obj["offset_vectors"]
        end = start + obj["tokens"]
        if start < 0 or end > matrix.shape[0]:
            raise CorruptFileError(
                f"{jsonl_path}:{lineno}: rows [{start}, {end}) out of bounds"
            )
        queries.append(QueryEmbedding(obj["query_id"], matrix[start:end]))
    return queries


def write_qrels(qrels: dict[str, set[PageKey]], path: str | Path, relevance: int = 1) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for qid in qrels:
                for page in sorted(qrels[qid]):
                    fh.write(f"{qid}\t{page.doc_id}\t{page.page_number}\t{relevance}\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_qrels(path: str | Path) -> dict[str, set[PageKey]]:
    """Relevant pages per query id (entries with relevance >= 1)."""
    qrels: dict[str, set[PageKey]] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorruptFileError(f"{path}:{lineno}: expected 4 tab-separated fields")
        qid, doc_id, page, rel = parts
        if int(rel) >= 1:
            qrels.setdefault(qid, set()).add(PageKey(doc_id, int(page)))
    return qrels


# -- synthetic corpus ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale corpus with planted relevance: every query is a noisy
    sample of q patches from one uniformly chosen target page."""

    pages: int
    patches_per_page: int
    dim: int
    queries: int
    tokens_per_query: int
    noise_sigma: float = 0.1
    seed: int = 42

    def __post_init__(self):
        for name in ("pages", "patches_per_page", "dim", "queries", "tokens_per_query"):
            if getattr(self, name) < 1:
                raise BadSpecError(f"{name} must be >= 1")
        if self.noise_sigma < 0:
            raise BadSpecError("noise_sigma must be >= 0")
        if self.tokens_per_query > self.patches_per_page:
            raise BadSpecError("tokens_per_query cannot exceed patches_per_page")


@dataclass(frozen=True)
class SyntheticPaths:
    manifest: Path
    queries: Path
    qrels: Path


_PAGES_PER_DOC = 100


def synthetic_page_key(index: int) -> PageKey:
    return PageKey(f"doc{index // _PAGES_PER_DOC:04d}", index % _PAGES_PER_DOC)


def gen_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> SyntheticPaths:
    """Write corpus.mvec + manifest.jsonl, queries.mvec + queries.jsonl, and
    qrels.tsv under out_dir. Byte-identical across runs for a fixed spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    n_rows = spec.pages * spec.patches_per_page
    corpus = rng.standard_normal((n_rows, spec.dim)).astype(np.float32)
    corpus /= np.linalg.norm(corpus.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    write_mvec(corpus, out_dir / "corpus.mvec")
    entries = [
        ManifestEntry(
            doc_id=synthetic_page_key(p).doc_id,
            page=synthetic_page_key(p).page_number,
            patches=spec.patches_per_page,
            file="corpus.mvec",
            offset_vectors=p * spec.patches_per_page,
        )
        for p in range(spec.pages)
    ]
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(entries, manifest_path)

    queries: list[QueryEmbedding] = []
    qrels: dict[str, set[PageKey]] = {}
    for qi in range(spec.queries):
        target = int(rng.integers(0, spec.pages))
        patch_rows = rng.choice(spec.patches_per_page, size=spec.tokens_per_query, replace=False)
        base = corpus[target * spec.patches_per_page + patch_rows]
        noise = rng.standard_normal(base.shape).astype(np.float32)
        if spec.noise_sigma == 0.0:
            tokens = base.copy()  # exact patch copies; keeps the rng stream aligned across sigmas
        else:
            noisy = base + np.float32(spec.noise_sigma) * noise
            tokens = np.stack([l2_normalize(row) for row in noisy])
        qid = f"q{qi:04d}"
        queries.append(QueryEmbedding(qid, tokens))
        qrels[qid] = {synthetic_page_key(target)}
    queries_jsonl = out_dir / "queries.jsonl"
    write_queries(queries, out_dir / "queries.mvec", queries_jsonl)
    qrels_path = out_dir / "qrels.tsv"
    write_qrels(qrels, qrels_path)
    return SyntheticPaths(manifest_path, queries_jsonl, qrels_path)
