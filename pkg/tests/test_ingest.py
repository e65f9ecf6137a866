"""Manifests, corpus ingestion, and the synthetic generator."""

import numpy as np
import pytest

from lateindex.errors import BadSpecError, CorruptFileError, DuplicatePageError
from lateindex.ingest import (
    ManifestEntry,
    SyntheticSpec,
    gen_synthetic,
    ingest_corpus,
    read_manifest,
    read_qrels,
    read_queries,
    synthetic_page_key,
    write_manifest,
)
from lateindex.mvec import read_mvec, write_mvec
from lateindex.pipeline import oracle_rank
from lateindex.store import build_store, fetch_page_patches


def write_corpus(tmp_path, pages=2, patches=3, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((pages * patches, dim)).astype(np.float32)
    write_mvec(matrix, tmp_path / "corpus.mvec")
    entries = [
        ManifestEntry(f"doc{p}", 0, patches, "corpus.mvec", p * patches)
        for p in range(pages)
    ]
    write_manifest(entries, tmp_path / "manifest.jsonl")
    return matrix


class TestManifest:
    def test_round_trip(self, tmp_path):
        write_corpus(tmp_path)
        manifest = read_manifest(tmp_path / "manifest.jsonl")
        assert len(manifest) == 2
        assert manifest.entries[0] == ManifestEntry("doc0", 0, 3, "corpus.mvec", 0)

    def test_duplicate_page_rejected(self, tmp_path):
        entries = [
            ManifestEntry("d", 1, 2, "x.mvec", 0),
            ManifestEntry("d", 1, 2, "x.mvec", 2),
        ]
        write_manifest(entries, tmp_path / "m.jsonl")
        with pytest.raises(DuplicatePageError):
            read_manifest(tmp_path / "m.jsonl")

    def test_unknown_fields_rejected(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"doc_id":"d","page":0}\n')
        with pytest.raises(CorruptFileError):
            read_manifest(tmp_path / "m.jsonl")


class TestIngestCorpus:
    def test_records_have_expected_keys(self, tmp_path):
        write_corpus(tmp_path)
        manifest = read_manifest(tmp_path / "manifest.jsonl")
        records = list(ingest_corpus(manifest))
        assert len(records) == 6
        assert [r.key.patch_number for r in records[:3]] == [0, 1, 2]
        assert records[0].key.page.doc_id == "doc0"

    def test_round_trip_through_store_bit_exact(self, tmp_path):
        matrix = write_corpus(tmp_path, pages=3, patches=4, dim=5, seed=2)
        manifest = read_manifest(tmp_path / "manifest.jsonl")
        store = build_store(ingest_corpus(manifest), normalize=False)
        fetched = []
        for key in store.page_keys():
            fetched += [r.vector for r in fetch_page_patches(store, key)]
        assert np.stack(fetched).tobytes() == matrix.tobytes()

    def test_out_of_bounds_slice(self, tmp_path):
        write_corpus(tmp_path, pages=2, patches=3)
        entries = [ManifestEntry("d", 0, 4, "corpus.mvec", 4)]
        write_manifest(entries, tmp_path / "m2.jsonl")
        with pytest.raises(CorruptFileError):
            list(ingest_corpus(read_manifest(tmp_path / "m2.jsonl")))


class TestSynthetic:
    def test_spec_validation(self):
        with pytest.raises(BadSpecError):
            SyntheticSpec(pages=0, patches_per_page=4, dim=4, queries=1, tokens_per_query=1)
        with pytest.raises(BadSpecError):
            SyntheticSpec(pages=1, patches_per_page=4, dim=4, queries=1, tokens_per_query=8)
        with pytest.raises(BadSpecError):
            SyntheticSpec(pages=1, patches_per_page=4, dim=4, queries=1,
                          tokens_per_query=2, noise_sigma=-0.1)

    def test_deterministic_byte_identical(self, tmp_path):
        spec = SyntheticSpec(pages=20, patches_per_page=4, dim=8, queries=10,
                             tokens_per_query=2, noise_sigma=0.1, seed=99)
        gen_synthetic(spec, tmp_path / "a")
        gen_synthetic(spec, tmp_path / "b")
        for name in ("corpus.mvec", "manifest.jsonl", "queries.mvec", "queries.jsonl", "qrels.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_sigma_zero_tokens_equal_target_patches(self, tmp_path):
        spec = SyntheticSpec(pages=10, patches_per_page=4, dim=8, queries=5,
                             tokens_per_query=3, noise_sigma=0.0, seed=5)
        paths = gen_synthetic(spec, tmp_path)
        corpus = read_mvec(tmp_path / "corpus.mvec")
        queries = read_queries(paths.queries)
        qrels = read_qrels(paths.qrels)
        corpus_rows = {row.tobytes() for row in corpus}
        for q in queries:
            assert len(qrels[q.query_id]) == 1
            for token in q.matrix:
                assert token.tobytes() in corpus_rows

    def test_sigma_zero_oracle_recall_is_one(self, tmp_path):
        from lateindex.evaluate import RunFile, recall_at_k

        spec = SyntheticSpec(pages=50, patches_per_page=4, dim=8, queries=30,
                             tokens_per_query=2, noise_sigma=0.0, seed=6)
        paths = gen_synthetic(spec, tmp_path)
        store = build_store(ingest_corpus(read_manifest(paths.manifest)), normalize=True)
        qrels = read_qrels(paths.qrels)
        run = RunFile(tag="oracle")
        for q in read_queries(paths.queries):
            run.add(q.query_id, oracle_rank(q, store, top_k=5))
        assert recall_at_k(run, qrels, 1) == 1.0

    def test_oracle_recall_monotone_in_sigma(self, tmp_path):
        recalls = []
        for sigma in (0.0, 0.1, 0.5):
            out = tmp_path / f"s{sigma}"
            spec = SyntheticSpec(pages=100, patches_per_page=8, dim=16, queries=200,
                                 tokens_per_query=4, noise_sigma=sigma, seed=7)
            paths = gen_synthetic(spec, out)
            store = build_store(ingest_corpus(read_manifest(paths.manifest)), normalize=True)
            qrels = read_qrels(paths.qrels)
            hits = 0
            for q in read_queries(paths.queries):
                top = oracle_rank(q, store, top_k=1).entries[0].page
                hits += top in qrels[q.query_id]
            recalls.append(hits / 200)
        assert recalls[0] == 1.0
        assert recalls[0] >= recalls[1] >= recalls[2]

    def test_page_keys_group_into_docs(self):
        assert synthetic_page_key(0).doc_id == "doc0000"
        assert synthetic_page_key(99).page_number == 99
        assert synthetic_page_key(100) == synthetic_page_key(100)
        assert synthetic_page_key(250).doc_id == "doc0002"
