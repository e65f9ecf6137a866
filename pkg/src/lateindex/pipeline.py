"""Two-pass search: per-token first-pass retrieval over flattened patches,
candidate page set with the top-patch/threshold shortlist rule, page
reconstruction, and exact late-interaction (MaxSim) re-ranking. Also the
exhaustive oracle ranker used as ground truth.

rerank() and oracle_rank() score pages through the same maxsim_score call
in the same order, so an exhaustive two-pass run (exact first pass, tau
disabled, k_token >= total patches) reproduces the oracle ranking bitwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from .core import (
    PageEmbedding,
    PageKey,
    QueryEmbedding,
    RankedEntry,
    RankedResult,
    RetrievalConfig,
)
from .errors import (
    CandidateOverflowError,
    DimensionMismatchError,
    EmptyCandidatesError,
    EmptyPageError,
    EmptyStoreError,
)
from .hnsw import HnswGraph
from .store import PatchStore, PooledIndex, exact_search_rows


@dataclass(frozen=True)
class CandidateSet:
    """Deduplicated pages surviving the first pass, plus which tokens
    contributed which pages."""

    pages: tuple[PageKey, ...]
    per_token_contributions: dict[int, tuple[PageKey, ...]]
    total_hits: int

    def __len__(self) -> int:
        return len(self.pages)


@dataclass(frozen=True)
class PipelineTrace:
    candidates_examined: int
    first_pass_hits: int
    first_pass_ms: float
    rerank_ms: float


class TokenSearcher(Protocol):
    """First-pass backend: top-k page hits for one query-token vector."""

    def token_hits(self, qvec: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (page indices, scores), best first, at most k entries."""
        ...

    def page_key(self, page_index: int) -> PageKey:
        ...


class ExactTokenSearcher:
    def __init__(self, store: PatchStore):
        self.store = store

    def token_hits(self, qvec: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        rows, scores = exact_search_rows(self.store, qvec, min(k, self.store.row_count))
        return self.store.pages_of_rows(rows), scores

    def page_key(self, page_index: int) -> PageKey:
        return self.store.page_key(page_index)


class HnswTokenSearcher:
    def __init__(self, graph: HnswGraph, ef: int):
        self.graph = graph
        self.ef = ef

    def token_hits(self, qvec: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        k = min(k, self.graph.store.row_count)
        rows, scores = self.graph.search_rows(qvec, k, max(self.ef, k))
        return self.graph.store.pages_of_rows(rows), scores

    def page_key(self, page_index: int) -> PageKey:
        return self.graph.store.page_key(page_index)


class PooledTokenSearcher:
    def __init__(self, pooled: PooledIndex):
        self.pooled = pooled

    def token_hits(self, qvec: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.pooled.search_pages(qvec, min(k, self.pooled.page_count))

    def page_key(self, page_index: int) -> PageKey:
        return self.pooled.page_keys[page_index]


def first_pass_candidates(
    query: QueryEmbedding, searcher: TokenSearcher, cfg: RetrievalConfig
) -> CandidateSet:
    """Union of per-token page shortlists.

    For each token, the page of the best hit is always shortlisted; further
    hits contribute their page when their score passes tau (absolute, or
    relative to the token's top score). With tau disabled every hit
    contributes. Hits are thresholded first, then pages deduplicated.
    """
    contributions: dict[int, tuple[PageKey, ...]] = {}
    seen: set[int] = set()
    page_keys: dict[int, PageKey] = {}
    total_hits = 0
    for i in range(query.token_count):
        pidx, scores = searcher.token_hits(query.matrix[i], cfg.k_token)
        if len(pidx) == 0:
            continue
        total_hits += len(pidx)
        if cfg.tau is None:
            keep = np.ones(len(pidx), dtype=bool)
        elif cfg.tau_mode == "absolute":
            keep = scores >= cfg.tau
        else:
            keep = scores >= cfg.tau * scores[0]
        keep[0] = True  # the top hit's page is always shortlisted
        token_pages: list[PageKey] = []
        token_seen: set[int] = set()
        for p in pidx[keep].tolist():
            if p not in token_seen:
                token_seen.add(p)
                key = page_keys.get(p)
                if key is None:
                    key = page_keys[p] = searcher.page_key(p)
                token_pages.append(key)
            seen.add(p)
        contributions[i] = tuple(token_pages)
    pages = tuple(sorted(page_keys[p] for p in seen))
    if len(pages) > cfg.candidate_cap:
        raise CandidateOverflowError(
            f"{len(pages)} candidate pages exceed cap {cfg.candidate_cap}"
        )
    return CandidateSet(pages, contributions, total_hits)


def reconstruct_page(store: PatchStore, page: PageKey) -> PageEmbedding:
    """Assemble the page's m x d matrix, rows ascending by patch number,
    bit-identical to the ingested vectors."""
    return PageEmbedding(page, store.page_matrix(page).copy())


def maxsim_score(query: QueryEmbedding, page: PageEmbedding | np.ndarray) -> float:
    """Late-interaction score: for each query token take the maximum dot
    product over the page's patches, then sum over tokens.

    Token-patch products go through einsum rather than BLAS matmul: each
    (token, patch) entry is then bit-identical regardless of how many other
    patches sit in the matrix, which makes permutation invariance and
    monotonicity under patch addition hold exactly, not just to rounding.
    Accumulation is float64, ascending token index.
    """
    pm = page.matrix if isinstance(page, PageEmbedding) else np.asarray(page)
    if pm.ndim != 2 or pm.shape[0] < 1:
        raise EmptyPageError("page embedding has no patch rows")
    if pm.shape[1] != query.dim:
        raise DimensionMismatchError(
            f"query dim {query.dim} vs page dim {pm.shape[1]}"
        )
    sims = np.einsum("qd,md->qm", query.matrix.astype(np.float64), pm.astype(np.float64))
    return float(sims.max(axis=1).sum())


def rerank(
    query: QueryEmbedding, pages: Sequence[PageEmbedding], top_k: int
) -> RankedResult:
    """Score every candidate page with maxsim_score and rank descending,
    PageKey ascending on ties."""
    if not pages:
        raise EmptyCandidatesError("no candidate pages to rerank")
    scored = [(maxsim_score(query, p), p.page) for p in pages]
    scored.sort(key=lambda t: (-t[0], t[1]))
    entries = tuple(
        RankedEntry(page, score, rank)
        for rank, (score, page) in enumerate(scored[:top_k], start=1)
    )
    return RankedResult(entries, candidates_examined=len(pages))


def oracle_rank(query: QueryEmbedding, store: PatchStore, top_k: int | None = None) -> RankedResult:
    """Exhaustive in-memory baseline: late-interaction score against every
    page of the store, full exact ranking."""
    if store.page_count == 0:
        raise EmptyStoreError("store has no pages")
    pages = [reconstruct_page(store, key) for key in store.page_keys()]
    return rerank(query, pages, top_k if top_k is not None else store.page_count)


def make_searcher(
    cfg: RetrievalConfig,
    store: PatchStore,
    graph: HnswGraph | None = None,
    pooled: PooledIndex | None = None,
) -> TokenSearcher:
    if cfg.first_pass == "hnsw":
        if graph is None:
            raise ValueError("first_pass=hnsw requires a built graph")
        return HnswTokenSearcher(graph, cfg.effective_ef)
    if cfg.first_pass == "pooled":
        if pooled is None:
            raise ValueError("first_pass=pooled requires a pooled index")
        return PooledTokenSearcher(pooled)
    return ExactTokenSearcher(store)


def search(
    query: QueryEmbedding,
    store: PatchStore,
    graph: HnswGraph | None,
    cfg: RetrievalConfig,
    pooled: PooledIndex | None = None,
) -> tuple[RankedResult, PipelineTrace]:
    """The full two-pass flow: first-pass candidates, page reconstruction,
    MaxSim re-rank. Returns the ranking plus candidate/timing trace."""
    searcher = make_searcher(cfg, store, graph, pooled)
    t0 = time.perf_counter()
    candidates = first_pass_candidates(query, searcher, cfg)
    t1 = time.perf_counter()
    pages = [reconstruct_page(store, key) for key in candidates.pages]
    result = rerank(query, pages, cfg.top_k)
    t2 = time.perf_counter()
    result = replace(result, per_token_hits=candidates.total_hits // query.token_count)
    trace = PipelineTrace(
        candidates_examined=len(candidates),
        first_pass_hits=candidates.total_hits,
        first_pass_ms=(t1 - t0) * 1e3,
        rerank_ms=(t2 - t1) * 1e3,
    )
    return result, trace
