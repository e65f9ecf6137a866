"""Recall against qrels, candidate-set statistics, latency benchmarking of
the two-pass search against the exhaustive oracle, and run-file I/O.

Run files use the common six-column retrieval-run convention:

    query_id Q0 doc_id#page rank score tag

(space-separated; the page identity is doc_id and page number joined by
'#'). Ranks are contiguous from 1 per query and scores non-increasing.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import PageKey, QueryEmbedding, RankedResult, RetrievalConfig
from .errors import (
    EmptyInputError,
    EmptyRunError,
    IoFailureError,
    MalformedLineError,
    MissingQrelsError,
)
from .hnsw import HnswGraph
from .pipeline import PipelineTrace, oracle_rank, search
from .store import PatchStore, PooledIndex


@dataclass(frozen=True)
class RunEntry:
    page: PageKey
    score: float
    rank: int


@dataclass
class RunFile:
    """Ordered per-query rankings plus a run tag."""

    tag: str
    queries: dict[str, list[RunEntry]] = field(default_factory=dict)

    def add(self, query_id: str, result: RankedResult) -> None:
        self.queries[query_id] = [
            RunEntry(e.page, e.score, e.rank) for e in result.entries
        ]


def write_run(run: RunFile, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for qid, entries in run.queries.items():
                for e in entries:
                    # '#' inside doc_id stays parseable (the page separator is
                    # the last '#'), but spaces would break the 6-field line
                    if " " in qid or " " in e.page.doc_id:
                        raise ValueError(
                            f"run identifiers may not contain spaces: {qid!r}, {e.page.doc_id!r}"
                        )
                    fh.write(
                        f"{qid} Q0 {e.page.doc_id}#{e.page.page_number} {e.rank} {e.score!r} {run.tag}\n"
                    )
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_run(path: str | Path) -> RunFile:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    run = RunFile(tag="")
    last_rank: dict[str, int] = {}
    last_score: dict[str, float] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 6:
            raise MalformedLineError(lineno, f"expected 6 space-separated fields, got {len(parts)}")
        qid, q0, pageref, rank_s, score_s, tag = parts
        if q0 != "Q0":
            raise MalformedLineError(lineno, f"second field must be 'Q0', got {q0!r}")
        doc_id, sep, page_s = pageref.rpartition("#")
        if not sep or not doc_id:
            raise MalformedLineError(lineno, f"page identity {pageref!r} is not doc_id#page")
        try:
            page = PageKey(doc_id, int(page_s))
            rank = int(rank_s)
            score = float(score_s)
        except ValueError as exc:
            raise MalformedLineError(lineno, str(exc)) from exc
        if rank != last_rank.get(qid, 0) + 1:
            raise MalformedLineError(
                lineno, f"rank {rank} breaks contiguity (previous was {last_rank.get(qid, 0)})"
            )
        if qid in last_score and score > last_score[qid]:
            raise MalformedLineError(lineno, f"score {score} increases over previous {last_score[qid]}")
        last_rank[qid] = rank
        last_score[qid] = score
        if run.tag == "":
            run.tag = tag
        run.queries.setdefault(qid, []).append(RunEntry(page, score, rank))
    return run


def recall_at_k(run: RunFile, qrels: dict[str, set[PageKey]], k: int) -> float:
    """Fraction of run queries whose top-k entries contain a relevant page."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not run.queries:
        raise EmptyRunError("run has no queries")
    hits = 0
    for qid, entries in run.queries.items():
        if qid not in qrels or not qrels[qid]:
            raise MissingQrelsError(f"no relevance judgments for query {qid!r}")
        top = {e.page for e in entries[:k]}
        hits += bool(top & qrels[qid])
    return hits / len(run.queries)


@dataclass(frozen=True)
class CandidateStats:
    mean: float
    median: float
    max: int
    fraction_mean: float


def candidate_stats(traces: list[PipelineTrace], corpus_pages: int) -> CandidateStats:
    """Aggregate candidates_examined over traces, plus its mean fraction of
    the corpus page count."""
    if not traces:
        raise EmptyInputError("no traces to aggregate")
    counts = [t.candidates_examined for t in traces]
    mean = statistics.fmean(counts)
    return CandidateStats(
        mean=mean,
        median=float(statistics.median(counts)),
        max=max(counts),
        fraction_mean=mean / corpus_pages,
    )


@dataclass
class EvalReport:
    """Serializable evaluation summary; absent sections stay None/null."""

    recall: dict[str, float] | None = None
    candidates: CandidateStats | None = None
    two_pass_median_ms: float | None = None
    oracle_median_ms: float | None = None
    speedup: float | None = None
    agreement_top1: float | None = None

    def to_dict(self) -> dict:
        return {
            "recall": self.recall,
            "candidates": None
            if self.candidates is None
            else {
                "mean": self.candidates.mean,
                "median": self.candidates.median,
                "max": self.candidates.max,
                "fraction_mean": self.candidates.fraction_mean,
            },
            "latency_ms": None
            if self.two_pass_median_ms is None
            else {
                "two_pass_median": self.two_pass_median_ms,
                "oracle_median": self.oracle_median_ms,
                "speedup": self.speedup,
            },
            "agreement_top1": self.agreement_top1,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        cand = obj.get("candidates")
        lat = obj.get("latency_ms")
        return cls(
            recall=obj.get("recall"),
            candidates=None
            if cand is None
            else CandidateStats(cand["mean"], cand["median"], cand["max"], cand["fraction_mean"]),
            two_pass_median_ms=None if lat is None else lat["two_pass_median"],
            oracle_median_ms=None if lat is None else lat["oracle_median"],
            speedup=None if lat is None else lat["speedup"],
            agreement_top1=obj.get("agreement_top1"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


RECALL_KS = (1, 5, 10)


def run_recalls(run: RunFile, qrels: dict[str, set[PageKey]]) -> dict[str, float]:
    return {str(k): recall_at_k(run, qrels, k) for k in RECALL_KS}


def bench_compare(
    queries: list[QueryEmbedding],
    store: PatchStore,
    graph: HnswGraph | None,
    cfg: RetrievalConfig,
    repetitions: int = 3,
    qrels: dict[str, set[PageKey]] | None = None,
    pooled: PooledIndex | None = None,
) -> EvalReport:
    """Time search() vs oracle_rank() over identical queries.

    Latencies are medians over all (query, repetition) samples; speedup is
    oracle median over two-pass median. Also reports the fraction of
    queries where both rank the same page first, and recall when qrels are
    given. Timing loops run sequentially to avoid cross-query interference.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    if not queries:
        raise EmptyInputError("no queries to benchmark")
    two_pass_ms: list[float] = []
    oracle_ms: list[float] = []
    traces: list[PipelineTrace] = []
    results: dict[str, RankedResult] = {}
    oracle_results: dict[str, RankedResult] = {}
    for rep in range(repetitions):
        for q in queries:
            t0 = time.perf_counter()
            result, trace = search(q, store, graph, cfg, pooled=pooled)
            t1 = time.perf_counter()
            oracle = oracle_rank(q, store, cfg.top_k)
            t2 = time.perf_counter()
            two_pass_ms.append((t1 - t0) * 1e3)
            oracle_ms.append((t2 - t1) * 1e3)
            if rep == 0:
                traces.append(trace)
                results[q.query_id] = result
                oracle_results[q.query_id] = oracle
    agree = sum(
        results[q.query_id].top_page() == oracle_results[q.query_id].top_page()
        for q in queries
    ) / len(queries)
    report = EvalReport(
        candidates=candidate_stats(traces, store.page_count),
        two_pass_median_ms=statistics.median(two_pass_ms),
        oracle_median_ms=statistics.median(oracle_ms),
        agreement_top1=agree,
    )
    report.speedup = report.oracle_median_ms / report.two_pass_median_ms
    if qrels is not None:
        run = RunFile(tag="bench")
        for q in queries:
            run.add(q.query_id, results[q.query_id])
        report.recall = run_recalls(run, qrels)
    return report
