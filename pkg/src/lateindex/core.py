"""Domain types shared by all modules, elementary vector math, and the
memory model for flattened patch storage.

Vectors are stored as float32; all reported similarity scores are computed
in float64 through :func:`dot` so that every score in the system refers to
one canonical scalar definition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyQueryError,
    NonFiniteError,
    OverflowLimitError,
    ZeroVectorError,
)

_I64_MAX = 2**63 - 1

TAU_MODES = ("absolute", "relative_to_top")
FIRST_PASS_KINDS = ("hnsw", "exact", "pooled")


@dataclass(frozen=True, order=True)
class PageKey:
    """Identity of one page: opaque document id plus page number.

    Ordering is lexicographic on (doc_id, page_number) and is the global
    tie-breaker for every ranking in the system.
    """

    doc_id: str
    page_number: int

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be a non-empty string")
        if self.page_number < 0:
            raise ValueError("page_number must be non-negative")

    def __str__(self) -> str:
        return f"{self.doc_id}#{self.page_number}"


@dataclass(frozen=True, order=True)
class PatchKey:
    """Identity of one patch within a page."""

    page: PageKey
    patch_number: int

    def __post_init__(self):
        if self.patch_number < 0:
            raise ValueError("patch_number must be non-negative")


@dataclass(frozen=True)
class PatchRecord:
    """One d-dimensional patch vector plus its identity; the unit of indexing."""

    key: PatchKey
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float32)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("patch vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"patch {self.key} contains non-finite entries")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class PageEmbedding:
    """Ordered m x d matrix reconstructed from a page's patches; row j is
    patch j's vector. The unit of re-ranking."""

    page: PageKey
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float32)
        if m.ndim != 2 or m.shape[0] < 1:
            raise ValueError("page matrix must be 2-D with at least one row")
        object.__setattr__(self, "matrix", m)

    @property
    def patch_count(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class QueryEmbedding:
    """q x d matrix of query-token vectors; the unit of search."""

    query_id: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float32)
        if m.ndim != 2:
            raise ValueError("query matrix must be 2-D")
        if m.shape[0] < 1:
            raise EmptyQueryError(f"query {self.query_id!r} has no token rows")
        if not np.all(np.isfinite(m)):
            raise NonFiniteError(f"query {self.query_id!r} contains non-finite entries")
        object.__setattr__(self, "matrix", m)

    @property
    def token_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class RetrievalConfig:
    """Tunables of the two-pass search.

    tau is the first-pass shortlist threshold (None disables it); in
    "absolute" mode a hit contributes its page when score >= tau, in
    "relative_to_top" mode when score >= tau * top_hit_score. The top hit
    of every token always contributes regardless of tau.
    """

    k_token: int = 10
    tau: float | None = 0.9
    tau_mode: str = "absolute"
    first_pass: str = "hnsw"
    ef_search: int = 64
    top_k: int = 10
    normalize_on_ingest: bool = True
    candidate_cap: int = 1024

    def __post_init__(self):
        if self.k_token < 1:
            raise ValueError("k_token must be >= 1")
        if self.tau is not None and not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1] or None")
        if self.tau_mode not in TAU_MODES:
            raise ValueError(f"tau_mode must be one of {TAU_MODES}")
        if self.first_pass not in FIRST_PASS_KINDS:
            raise ValueError(f"first_pass must be one of {FIRST_PASS_KINDS}")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.candidate_cap < 1:
            raise ValueError("candidate_cap must be >= 1")

    @property
    def effective_ef(self) -> int:
        """Graph beam width actually used: never below k_token."""
        return max(self.ef_search, self.k_token)


@dataclass(frozen=True)
class RankedEntry:
    page: PageKey
    score: float
    rank: int


@dataclass(frozen=True)
class RankedResult:
    """Final ranking plus candidate-set statistics from the first pass."""

    entries: tuple[RankedEntry, ...]
    candidates_examined: int
    per_token_hits: int = 0

    def top_page(self) -> PageKey | None:
        return self.entries[0].page if self.entries else None

    def pages(self) -> list[PageKey]:
        return [e.page for e in self.entries]


def l2_normalize(v: Iterable[float] | np.ndarray) -> np.ndarray:
    """Scale v to unit L2 norm, preserving direction. Returns float32.

    The norm is accumulated in float64 so the result's norm is 1 within
    ~1e-7 regardless of dimension.
    """
    arr = np.asarray(v, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("vector contains NaN or Inf")
    norm = float(np.linalg.norm(arr.astype(np.float64)))
    if norm < 1e-12:
        raise ZeroVectorError(f"vector norm {norm:.3e} below 1e-12")
    return (arr.astype(np.float64) / norm).astype(np.float32)


def dot(u: np.ndarray, v: np.ndarray) -> float:
    """Canonical similarity scalar: float64 inner product of two vectors.

    On unit vectors this equals cosine similarity. Every reported hit or
    page score in the package is produced by this function so scores are
    comparable across the approximate and exact paths.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatchError(f"dot: shapes {u.shape} vs {v.shape}")
    return float(np.dot(u.astype(np.float64), v.astype(np.float64)))


def batch_scores(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Float64 inner products of each row of `rows` against `query`.

    Used for bulk scoring; final reported scores are recomputed per hit via
    :func:`dot` (BLAS accumulates batched products differently from the
    single-pair path, so bulk values can differ in the last bits).
    """
    if rows.shape[1] != query.shape[0]:
        raise DimensionMismatchError(
            f"batch_scores: rows d={rows.shape[1]} vs query d={query.shape[0]}"
        )
    return rows.astype(np.float64) @ query.astype(np.float64)


def estimate_memory(pages: int, patches_per_page: int, dim: int, bytes_per_scalar: int) -> int:
    """Bytes required to hold a corpus of flattened patch embeddings:
    pages * patches_per_page * dim * bytes_per_scalar, exactly."""
    for name, value in (
        ("pages", pages),
        ("patches_per_page", patches_per_page),
        ("dim", dim),
        ("bytes_per_scalar", bytes_per_scalar),
    ):
        if value < 0:
            raise ValueError(f"{name} must be non-negative")
    total = pages * patches_per_page * dim * bytes_per_scalar
    if total > _I64_MAX:
        raise OverflowLimitError(f"byte count {total} exceeds 64-bit range")
    return total
