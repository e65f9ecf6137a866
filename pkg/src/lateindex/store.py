"""Flat patch-level vector store with page metadata, an exact-scan oracle,
and an optional mean-pooled per-page index.

The store is sealed at construction and immutable afterwards: rows are laid
out page by page (pages in PageKey order, patches in patch-number order),
so row order is also the global tie-break order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import PageKey, PatchKey, PatchRecord, batch_scores, dot, l2_normalize
from .errors import (
    BadParamsError,
    DimensionMismatchError,
    DuplicatePatchError,
    EmptyStoreError,
    MissingPatchError,
    UnknownPageError,
    ZeroVectorError,
)


@dataclass(frozen=True)
class Hit:
    """One first-pass match: a patch and its similarity to the query token."""

    patch: PatchKey
    score: float


class PatchStore:
    """Sealed, immutable store of all patch vectors plus page lookup maps.

    Construct via :func:`build_store`; direct construction assumes the
    arrays are already validated and ordered.
    """

    def __init__(
        self,
        matrix: np.ndarray,
        page_keys: list[PageKey],
        page_first_row: np.ndarray,
        page_patch_count: np.ndarray,
        normalized: bool,
    ):
        self.matrix = matrix  # (n, d) float32, row-major
        self.normalized = normalized
        self._page_keys = page_keys
        self._page_first_row = page_first_row
        self._page_patch_count = page_patch_count
        self._page_index = {key: i for i, key in enumerate(page_keys)}
        self._row_page = np.repeat(
            np.arange(len(page_keys), dtype=np.int32), page_patch_count
        )
        self._matrix64: np.ndarray | None = None
        self.matrix.setflags(write=False)

    # -- shape ------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def row_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def page_count(self) -> int:
        return len(self._page_keys)

    @property
    def matrix64(self) -> np.ndarray:
        """Float64 copy of the vector matrix, built lazily for exact scans."""
        if self._matrix64 is None:
            self._matrix64 = self.matrix.astype(np.float64)
        return self._matrix64

    # -- lookups ------------------------------------------------------------

    def page_keys(self) -> list[PageKey]:
        return list(self._page_keys)

    def page_key(self, page_index: int) -> PageKey:
        return self._page_keys[page_index]

    def page_index(self, page: PageKey) -> int:
        try:
            return self._page_index[page]
        except KeyError:
            raise UnknownPageError(f"page {page} not in store") from None

    def page_range(self, page: PageKey) -> tuple[int, int]:
        """(first row, patch count) of a page's contiguous row block."""
        i = self.page_index(page)
        return int(self._page_first_row[i]), int(self._page_patch_count[i])

    def page_matrix(self, page: PageKey) -> np.ndarray:
        """View of the page's m x d block, rows ordered by patch number."""
        first, count = self.page_range(page)
        return self.matrix[first : first + count]

    def patch_key_of_row(self, row: int) -> PatchKey:
        page_idx = int(self._row_page[row])
        first = int(self._page_first_row[page_idx])
        return PatchKey(self._page_keys[page_idx], row - first)

    def pages_of_rows(self, rows: np.ndarray) -> np.ndarray:
        """Page indices of the given row ids (vectorized)."""
        return self._row_page[rows]


def build_store(records: Iterable[PatchRecord], normalize: bool = True) -> PatchStore:
    """Seal a stream of patch records into an immutable store.

    Records may arrive in any order; the result is identical to sorted
    delivery. Each page's patch numbers must form a gap-free 0..m-1 range.
    """
    by_page: dict[PageKey, dict[int, np.ndarray]] = {}
    dim: int | None = None
    for rec in records:
        v = rec.vector
        if dim is None:
            dim = v.shape[0]
        elif v.shape[0] != dim:
            raise DimensionMismatchError(
                f"patch {rec.key} has dim {v.shape[0]}, corpus dim {dim}"
            )
        patches = by_page.setdefault(rec.key.page, {})
        if rec.key.patch_number in patches:
            raise DuplicatePatchError(f"duplicate patch {rec.key}")
        patches[rec.key.patch_number] = v
    if not by_page:
        raise EmptyStoreError("no records to index")

    page_keys = sorted(by_page)
    counts = np.empty(len(page_keys), dtype=np.int64)
    blocks = []
    for i, key in enumerate(page_keys):
        patches = by_page[key]
        m = len(patches)
        expected = set(range(m))
        got = set(patches)
        if got != expected:
            missing = sorted(expected - got) or sorted(got - expected)
            raise MissingPatchError(
                f"page {key}: patch numbers not contiguous 0..{m - 1} "
                f"(offending: {missing[:5]})"
            )
        counts[i] = m
        blocks.append(np.stack([patches[j] for j in range(m)]))
    matrix = np.ascontiguousarray(np.concatenate(blocks), dtype=np.float32)
    if normalize:
        rows = []
        for row in matrix:
            try:
                rows.append(l2_normalize(row))
            except ZeroVectorError as exc:
                raise ZeroVectorError(f"cannot normalize zero patch vector: {exc}") from exc
        matrix = np.ascontiguousarray(np.stack(rows), dtype=np.float32)
    first_rows = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return PatchStore(matrix, page_keys, first_rows, counts, normalized=normalize)


def exact_search_rows(store: PatchStore, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k rows by inner product; returns (row ids, float64 scores).

    Full stable sort on descending score, so ties fall back to row order,
    which equals PatchKey order by store layout.
    """
    if k < 1:
        raise BadParamsError("k must be >= 1")
    if store.row_count == 0:
        raise EmptyStoreError("store has no rows")
    q = np.asarray(query, dtype=np.float32)
    if q.shape != (store.dim,):
        raise DimensionMismatchError(f"query shape {q.shape}, store dim {store.dim}")
    scores = batch_scores(store.matrix64, q)
    order = np.argsort(-scores, kind="stable")[:k]
    return order, scores[order]


def exact_search(store: PatchStore, query: np.ndarray, k: int) -> list[Hit]:
    """Ground-truth oracle: exact top-k patches by dot product.

    Reported scores are recomputed per hit through the canonical
    :func:`lateindex.core.dot`, and the final order is (score desc,
    PatchKey asc) under those canonical scores.
    """
    rows, _ = exact_search_rows(store, query, k)
    q = np.asarray(query, dtype=np.float32)
    hits = [Hit(store.patch_key_of_row(int(r)), dot(store.matrix[int(r)], q)) for r in rows]
    hits.sort(key=lambda h: (-h.score, h.patch))
    return hits


def fetch_page_patches(store: PatchStore, page: PageKey) -> list[PatchRecord]:
    """All patch records of a page, ascending patch number, bit-exact."""
    first, count = store.page_range(page)
    return [
        PatchRecord(PatchKey(page, j), store.matrix[first + j].copy())
        for j in range(count)
    ]


class PooledIndex:
    """One re-normalized mean vector per page, searched by exact scan."""

    def __init__(self, page_keys: list[PageKey], matrix: np.ndarray):
        self.page_keys = page_keys
        self.matrix = matrix  # (p, d) float32
        self._matrix64 = matrix.astype(np.float64)

    @property
    def page_count(self) -> int:
        return len(self.page_keys)

    def search_pages(self, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Top-k page indices and float64 scores by pooled-vector similarity."""
        if k < 1:
            raise BadParamsError("k must be >= 1")
        q = np.asarray(query, dtype=np.float32)
        if q.shape != (self.matrix.shape[1],):
            raise DimensionMismatchError(
                f"query shape {q.shape}, pooled dim {self.matrix.shape[1]}"
            )
        scores = batch_scores(self._matrix64, q)
        order = np.argsort(-scores, kind="stable")[:k]
        return order, scores[order]


def build_pooled_index(store: PatchStore) -> PooledIndex:
    """Mean-pool each page's patches and re-normalize.

    A page whose patches cancel to (near-)zero mean cannot be pooled and
    surfaces a ZeroVectorError naming the page.
    """
    if store.row_count == 0:
        raise EmptyStoreError("store has no rows")
    pooled = []
    for key in store.page_keys():
        mean = store.page_matrix(key).astype(np.float64).mean(axis=0)
        try:
            pooled.append(l2_normalize(mean.astype(np.float32)))
        except ZeroVectorError:
            raise ZeroVectorError(f"page {key}: patch mean is zero, cannot pool") from None
    return PooledIndex(store.page_keys(), np.ascontiguousarray(np.stack(pooled), dtype=np.float32))
