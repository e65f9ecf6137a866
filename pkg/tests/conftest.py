"""Shared corpus builders and session-scoped fixtures.

The 500-page synthetic corpus (m=32, d=16, 100 noisy queries, seed 42) and
its default-parameter graph are built once per session; several suites and
most acceptance checks share them.
"""

import numpy as np
import pytest

from lateindex.core import PageKey, PatchKey, PatchRecord
from lateindex.hnsw import IndexParams, build_hnsw
from lateindex.ingest import SyntheticSpec, gen_synthetic, ingest_corpus, read_manifest, read_qrels, read_queries
from lateindex.store import build_store


def unit_rows(n: int, d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, d)).astype(np.float32)
    return rows / np.linalg.norm(rows.astype(np.float64), axis=1, keepdims=True).astype(np.float32)


def store_of_rows(rows: np.ndarray, patches_per_page: int = 4):
    """Wrap a row matrix into a store, grouping rows into uniform pages."""
    n = rows.shape[0]
    assert n % patches_per_page == 0
    records = []
    for p in range(n // patches_per_page):
        page = PageKey(f"doc{p // 100:04d}", p % 100)
        for j in range(patches_per_page):
            records.append(PatchRecord(PatchKey(page, j), rows[p * patches_per_page + j]))
    return build_store(records, normalize=True)


SYNTH_SPEC = SyntheticSpec(
    pages=500, patches_per_page=32, dim=16, queries=100, tokens_per_query=8,
    noise_sigma=0.1, seed=42,
)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth500")
    gen_synthetic(SYNTH_SPEC, out)
    return out


@pytest.fixture(scope="session")
def synth_store(synth_dir):
    manifest = read_manifest(synth_dir / "manifest.jsonl")
    return build_store(ingest_corpus(manifest), normalize=True)


@pytest.fixture(scope="session")
def synth_graph(synth_store):
    return build_hnsw(synth_store, IndexParams(M=16, ef_construction=200, seed=7))


@pytest.fixture(scope="session")
def synth_queries(synth_dir):
    return read_queries(synth_dir / "queries.jsonl")


@pytest.fixture(scope="session")
def synth_qrels(synth_dir):
    return read_qrels(synth_dir / "qrels.tsv")
