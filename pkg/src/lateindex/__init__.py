"""lateindex: two-pass multi-vector retrieval.

Pages are stored as flattened per-patch vectors with identifying metadata;
queries run an approximate (or exact, or pooled) per-token first pass to
shortlist candidate pages, which are reconstructed and re-ranked with the
exact late-interaction MaxSim score.
"""

from .core import (
    PageEmbedding,
    PageKey,
    PatchKey,
    PatchRecord,
    QueryEmbedding,
    RankedEntry,
    RankedResult,
    RetrievalConfig,
    dot,
    estimate_memory,
    l2_normalize,
)
from .evaluate import (
    CandidateStats,
    EvalReport,
    RunFile,
    bench_compare,
    candidate_stats,
    read_run,
    recall_at_k,
    write_run,
)
from .hnsw import HnswGraph, IndexParams, ann_search, build_hnsw
from .ingest import (
    CorpusManifest,
    ManifestEntry,
    SyntheticSpec,
    gen_synthetic,
    ingest_corpus,
    read_manifest,
    read_qrels,
    read_queries,
    write_manifest,
)
from .embedder import EndpointConfig, embed_remote
from .mvec import read_mvec, write_mvec
from .persist import load_index, save_index
from .pipeline import (
    CandidateSet,
    PipelineTrace,
    first_pass_candidates,
    maxsim_score,
    oracle_rank,
    reconstruct_page,
    rerank,
    search,
)
from .store import (
    Hit,
    PatchStore,
    PooledIndex,
    build_pooled_index,
    build_store,
    exact_search,
    fetch_page_patches,
)

__version__ = "0.1.0"

__all__ = [
    "PageEmbedding", "PageKey", "PatchKey", "PatchRecord", "QueryEmbedding",
    "RankedEntry", "RankedResult", "RetrievalConfig",
    "dot", "estimate_memory", "l2_normalize",
    "Hit", "PatchStore", "PooledIndex", "build_pooled_index", "build_store",
    "exact_search", "fetch_page_patches",
    "HnswGraph", "IndexParams", "ann_search", "build_hnsw",
    "load_index", "save_index",
    "read_mvec", "write_mvec",
    "CandidateSet", "PipelineTrace", "first_pass_candidates", "maxsim_score",
    "oracle_rank", "reconstruct_page", "rerank", "search",
    "CorpusManifest", "ManifestEntry", "SyntheticSpec", "gen_synthetic",
    "ingest_corpus", "read_manifest", "read_qrels", "read_queries", "write_manifest",
    "EndpointConfig", "embed_remote",
    "CandidateStats", "EvalReport", "RunFile", "bench_compare", "candidate_stats",
    "read_run", "recall_at_k", "write_run",
    "__version__",
]
