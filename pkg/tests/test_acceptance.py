"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The two graph-heavy
checks (50k x 128 build quality, 5k-page speedup) dominate the runtime.
"""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import SYNTH_SPEC, store_of_rows, unit_rows
from lateindex.cli import main
from lateindex.core import (
    PageEmbedding,
    PageKey,
    QueryEmbedding,
    RetrievalConfig,
    estimate_memory,
)
from lateindex.errors import CorruptIndexError, VersionMismatchError
from lateindex.evaluate import RunEntry, RunFile, bench_compare, recall_at_k
from lateindex.hnsw import IndexParams, ann_search, build_hnsw
from lateindex.ingest import SyntheticSpec, gen_synthetic, ingest_corpus, read_manifest, read_qrels, read_queries
from lateindex.mvec import read_mvec, write_mvec
from lateindex.persist import load_index, save_index
from lateindex.pipeline import (
    ExactTokenSearcher,
    first_pass_candidates,
    maxsim_score,
    oracle_rank,
    search,
)
from lateindex.store import build_store, exact_search


@contextmanager
def criterion(label: str):
    try:
        yield
    except Exception:
        print(f"\nACCEPTANCE {label}: FAIL")
        raise
    print(f"\nACCEPTANCE {label}: PASS")


def test_01_exhaustive_fallback_equivalence(synth_store, synth_queries):
    with criterion("1 exhaustive-fallback equivalence"):
        cfg = RetrievalConfig(
            k_token=synth_store.row_count,
            tau=None,
            first_pass="exact",
            top_k=synth_store.page_count,
            candidate_cap=synth_store.page_count,
        )
        t0 = time.perf_counter()
        identical = 0
        for q in synth_queries:
            two_pass, _ = search(q, synth_store, None, cfg)
            oracle = oracle_rank(q, synth_store, cfg.top_k)
            identical += two_pass.entries == oracle.entries
        elapsed = time.perf_counter() - t0
        assert identical == len(synth_queries) == 100
        assert elapsed < 60.0, f"exhaustive fallback took {elapsed:.1f}s"


@pytest.fixture(scope="module")
def default_run(synth_store, synth_graph, synth_queries):
    """One pass over the 100 queries with spec-default settings."""
    cfg = RetrievalConfig()
    results, traces = {}, []
    for q in synth_queries:
        result, trace = search(q, synth_store, synth_graph, cfg)
        results[q.query_id] = result
        traces.append(trace)
    return results, traces


def test_02_approximation_quality(synth_store, synth_queries, default_run):
    with criterion("2 approximation quality (top-1 agreement >= 0.95)"):
        results, _ = default_run
        agree = 0
        for q in synth_queries:
            oracle_top = oracle_rank(q, synth_store, 1).entries[0].page
            agree += results[q.query_id].entries[0].page == oracle_top
        rate = agree / len(synth_queries)
        print(f"  top-1 agreement: {rate:.3f}", end="")
        assert rate >= 0.95


def test_03_candidate_reduction(synth_store, default_run):
    with criterion("3 candidate reduction (mean <= 20% of pages)"):
        _, traces = default_run
        counts = [t.candidates_examined for t in traces]
        mean = sum(counts) / len(counts)
        print(f"  mean candidates: {mean:.1f} of {synth_store.page_count}", end="")
        assert mean <= 0.20 * synth_store.page_count
        assert max(counts) <= RetrievalConfig().candidate_cap


def test_04_memory_arithmetic():
    with criterion("4 memory arithmetic"):
        per_page = estimate_memory(1, 1030, 128, 2)
        assert per_page == 263_680
        assert abs(per_page - 256 * 1024) * 100 <= 3 * (256 * 1024)
        million = estimate_memory(1_000_000, 1030, 128, 2)
        assert million == 263_680_000_000
        assert abs(million - 256 * 10**9) * 100 <= 3 * (256 * 10**9)


def test_05_hnsw_quality_at_scale():
    with criterion("5 graph quality at 50k x 128 (NN found in top-10 >= 0.95)"):
        n, d = 50_000, 128
        rows = unit_rows(n, d, seed=42)
        store = store_of_rows(rows, patches_per_page=50)
        t0 = time.perf_counter()
        graph = build_hnsw(store, IndexParams(M=16, ef_construction=200, seed=7))
        build_s = time.perf_counter() - t0
        print(f"  build: {build_s:.0f}s", end="")
        assert build_s < 300.0, f"build took {build_s:.0f}s"

        # queries follow the generator's model: a stored vector plus
        # sigma=0.1 noise, renormalized
        rng = np.random.default_rng(99)
        src = rng.integers(0, n, size=100)
        noise = 0.1 * rng.standard_normal((100, d)).astype(np.float32)
        queries = rows[src] + noise
        queries /= np.linalg.norm(queries.astype(np.float64), axis=1, keepdims=True).astype(np.float32)

        found = 0
        for q in queries:
            truth = exact_search(store, q, k=1)[0].patch
            got = {h.patch for h in ann_search(graph, q, k=10, ef=128)}
            found += truth in got
        rate = found / 100
        print(f", NN-hit@10: {rate:.3f}", end="")
        assert rate >= 0.95


def test_06_two_pass_speedup(tmp_path):
    with criterion("6 speedup >= 5x at 5000 pages with top-1 agreement >= 0.95"):
        spec = SyntheticSpec(
            pages=5000, patches_per_page=32, dim=16,
            queries=50, tokens_per_query=8, noise_sigma=0.1, seed=1234,
        )
        paths = gen_synthetic(spec, tmp_path)
        store = build_store(ingest_corpus(read_manifest(paths.manifest)), normalize=True)
        t0 = time.perf_counter()
        graph = build_hnsw(store, IndexParams(M=8, ef_construction=64, seed=5))
        print(f"  build: {time.perf_counter() - t0:.0f}s", end="")
        queries = read_queries(paths.queries)
        cfg = RetrievalConfig(ef_search=48)
        report = bench_compare(queries, store, graph, cfg, repetitions=3,
                               qrels=read_qrels(paths.qrels))
        print(
            f", two-pass {report.two_pass_median_ms:.2f}ms vs oracle "
            f"{report.oracle_median_ms:.2f}ms = {report.speedup:.1f}x, "
            f"agreement {report.agreement_top1:.3f}",
            end="",
        )
        assert report.speedup >= 5.0
        assert report.agreement_top1 >= 0.95


def test_07_persistence_round_trip(tmp_path):
    with criterion("7 persistence round-trip and corruption detection"):
        store = store_of_rows(unit_rows(600, 12, seed=77), patches_per_page=5)
        graph = build_hnsw(store, IndexParams(M=8, ef_construction=64, seed=2))
        path = tmp_path / "index.lidx"
        save_index(store, graph, path)
        _, loaded = load_index(path)
        for i, q in enumerate(unit_rows(20, 12, seed=88)):
            assert ann_search(loaded, q, k=10, ef=64) == ann_search(graph, q, k=10, ef=64)
        raw = bytearray(path.read_bytes())
        rng = np.random.default_rng(6)
        positions = sorted(set(int(p) for p in rng.integers(0, len(raw), 30))
                           | {0, 7, len(raw) - 1, len(raw) - 4})
        for pos in positions:
            mutated = bytearray(raw)
            mutated[pos] ^= 0x5A
            bad = tmp_path / "bad.lidx"
            bad.write_bytes(bytes(mutated))
            with pytest.raises((CorruptIndexError, VersionMismatchError)):
                load_index(bad)


class TestCriterion8Properties:
    """Each property over >= 100 randomized cases with fixed seeds."""

    def test_08a_maxsim_permutation_invariance(self):
        with criterion("8a maxsim permutation invariance"):
            rng = np.random.default_rng(801)
            for _ in range(100):
                qm = rng.standard_normal((int(rng.integers(1, 6)), 8)).astype(np.float32)
                pm = rng.standard_normal((int(rng.integers(1, 12)), 8)).astype(np.float32)
                q = QueryEmbedding("q", qm)
                page = PageKey("d", 0)
                base = maxsim_score(q, PageEmbedding(page, pm))
                perm = rng.permutation(pm.shape[0])
                assert maxsim_score(q, PageEmbedding(page, pm[perm])) == base

    def test_08b_maxsim_monotone_under_patch_addition(self):
        with criterion("8b maxsim monotone under patch addition"):
            rng = np.random.default_rng(802)
            for _ in range(100):
                qm = rng.standard_normal((3, 8)).astype(np.float32)
                pm = rng.standard_normal((int(rng.integers(1, 10)), 8)).astype(np.float32)
                extra = rng.standard_normal((1, 8)).astype(np.float32)
                q = QueryEmbedding("q", qm)
                page = PageKey("d", 0)
                assert (
                    maxsim_score(q, PageEmbedding(page, np.vstack([pm, extra])))
                    >= maxsim_score(q, PageEmbedding(page, pm))
                )

    def test_08c_query_scale_argsort_invariance(self):
        with criterion("8c query-scale argsort invariance"):
            rng = np.random.default_rng(803)
            pages = [
                PageEmbedding(PageKey("d", i), rng.standard_normal((4, 8)).astype(np.float32))
                for i in range(12)
            ]
            for _ in range(100):
                qm = rng.standard_normal((3, 8)).astype(np.float32)
                c = 2.0 ** int(rng.integers(-2, 4))  # exact power-of-two scales
                base = [maxsim_score(QueryEmbedding("q", qm), p) for p in pages]
                scaled = [
                    maxsim_score(QueryEmbedding("q", (c * qm).astype(np.float32)), p)
                    for p in pages
                ]
                assert scaled == [c * s for s in base]
                assert np.argsort(base, kind="stable").tolist() == np.argsort(
                    scaled, kind="stable"
                ).tolist()

    def test_08d_candidate_monotonicity(self, synth_store, synth_queries):
        with criterion("8d candidate-set monotonicity in tau and k_token"):
            searcher = ExactTokenSearcher(synth_store)
            cases = 0
            for q in synth_queries[:25]:
                taus = [0.95, 0.9, 0.5, None]
                sets = [
                    set(first_pass_candidates(
                        q, searcher, RetrievalConfig(k_token=10, tau=t, first_pass="exact")
                    ).pages)
                    for t in taus
                ]
                for a, b in zip(sets, sets[1:]):
                    assert a <= b
                    cases += 1
                ksets = [
                    set(first_pass_candidates(
                        q, searcher, RetrievalConfig(k_token=k, tau=0.9, first_pass="exact")
                    ).pages)
                    for k in (1, 5, 20)
                ]
                for a, b in zip(ksets, ksets[1:]):
                    assert a <= b
                    cases += 1
            assert cases >= 100

    def test_08e_recall_monotone_in_k(self):
        with criterion("8e recall@k monotone in k"):
            rng = np.random.default_rng(805)
            for _ in range(100):
                run = RunFile(tag="t")
                qrels = {}
                for i in range(8):
                    qid = f"q{i}"
                    order = rng.permutation(6)
                    run.queries[qid] = [
                        RunEntry(PageKey("d", int(j)), 1.0 - 0.1 * r, r + 1)
                        for r, j in enumerate(order)
                    ]
                    qrels[qid] = {PageKey("d", int(rng.integers(0, 6)))}
                values = [recall_at_k(run, qrels, k) for k in (1, 2, 4, 6)]
                assert values == sorted(values)

    def test_08f_mvec_round_trip(self, tmp_path):
        with criterion("8f mvec round-trip bitwise"):
            rng = np.random.default_rng(806)
            for i in range(100):
                m = rng.standard_normal(
                    (int(rng.integers(1, 30)), int(rng.integers(1, 30)))
                ).astype(np.float32)
                path = tmp_path / "case.mvec"
                write_mvec(m, path)
                assert read_mvec(path).tobytes() == m.tobytes()


def test_09_cli_end_to_end(tmp_path, capsys):
    with criterion("9 CLI flow recall@1 >= 0.98, byte-identical reruns"):
        outputs = []
        for run_name in ("one", "two"):
            root = tmp_path / run_name
            corpus = root / "corpus"
            assert main([
                "gen-synthetic",
                "--pages", str(SYNTH_SPEC.pages),
                "--patches", str(SYNTH_SPEC.patches_per_page),
                "--dim", str(SYNTH_SPEC.dim),
                "--queries", str(SYNTH_SPEC.queries),
                "--tokens", str(SYNTH_SPEC.tokens_per_query),
                "--sigma", "0.1", "--seed", "42",
                "--out", str(corpus),
            ]) == 0
            index = root / "index.lidx"
            assert main(["ingest", "--manifest", str(corpus / "manifest.jsonl"),
                         "--out", str(index)]) == 0
            run_path = root / "run.txt"
            assert main(["query", "--index", str(index),
                         "--queries", str(corpus / "queries.jsonl"),
                         "--out", str(run_path)]) == 0
            capsys.readouterr()
            assert main(["eval", "--run", str(run_path),
                         "--qrels", str(corpus / "qrels.tsv")]) == 0
            report = json.loads(capsys.readouterr().out)
            assert report["recall"]["1"] >= 0.98
            outputs.append({
                "corpus": (corpus / "corpus.mvec").read_bytes(),
                "index": index.read_bytes(),
                "run": run_path.read_bytes(),
                "report": json.dumps(report, sort_keys=True),
            })
        assert outputs[0] == outputs[1]
        print(f"  recall@1: {report['recall']['1']:.3f}", end="")


def test_10_service_contract(synth_store, synth_graph, synth_queries):
    with criterion("10 service matches library; answers cite only own results"):
        from test_service import FakeUpstream, http

        from lateindex.service import SearchService, ServiceConfig, ServiceServer

        tokens = synth_queries[0].matrix.tolist()
        embedder = FakeUpstream(
            lambda body: {"embeddings": [tokens for _ in body["texts"]]})
        reader_replies = [
            {"answer": "found it", "sources": None},  # filled per request below
        ]

        def reader_fn(body):
            first = body["pages"][0]
            return {
                "answer": f"the answer is on {first['doc_id']} page {first['page']}",
                "sources": [f"{first['doc_id']}#{first['page']}", "forged#99"],
            }

        reader = FakeUpstream(reader_fn)
        config = ServiceConfig(port=0, embedder_url=embedder.url, reader_url=reader.url)
        server = ServiceServer(SearchService(synth_store, synth_graph, config))
        server.start()
        host, port = server.address
        base = f"http://{host}:{port}"
        try:
            # /v1/search equals library-level search() exactly
            status, obj, _ = http("POST", f"{base}/v1/search", {"query_embedding": tokens})
            assert status == 200
            expected, trace = search(
                synth_queries[0], synth_store, synth_graph, RetrievalConfig()
            )
            assert obj["candidates_examined"] == trace.candidates_examined
            assert [
                (r["doc_id"], r["page"], r["score"], r["rank"]) for r in obj["results"]
            ] == [
                (e.page.doc_id, e.page.page_number, e.score, e.rank)
                for e in expected.entries
            ]

            # /v1/answer: forged source dropped, forwarded one kept
            status, ans, _ = http("POST", f"{base}/v1/answer",
                                  {"question": "where?", "top_k": 3})
            assert status == 200
            forwarded = {f"{p['doc_id']}#{p['page']}" for p in reader.requests[-1]["pages"]}
            assert ans["sources"] and set(ans["sources"]) <= forwarded
            assert "forged#99" not in ans["sources"]
            assert ans["no_answer"] is False

            # sentinel reply flips no_answer
            sentinel = FakeUpstream(lambda body: {"answer": "unable to find answer"})
            config2 = ServiceConfig(port=0, embedder_url=embedder.url,
                                    reader_url=sentinel.url)
            server2 = ServiceServer(SearchService(synth_store, synth_graph, config2))
            server2.start()
            h2, p2 = server2.address
            try:
                status, ans2, _ = http("POST", f"http://{h2}:{p2}/v1/answer",
                                       {"question": "missing?"})
                assert status == 200
                assert ans2["no_answer"] is True
                assert ans2["sources"] == []
            finally:
                server2.stop()
                sentinel.stop()
        finally:
            server.stop()
            embedder.stop()
            reader.stop()
