"""Operator command line: generate, ingest, query, evaluate, benchmark,
serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure (single-line
diagnostic on stderr). Progress goes to stderr; machine-readable output
(run files, reports) goes to files or stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from .core import RetrievalConfig
from .errors import LateIndexError
from .evaluate import EvalReport, RunFile, bench_compare, read_run, run_recalls, write_run
from .hnsw import IndexParams, build_hnsw
from .ingest import (
    SyntheticSpec,
    gen_synthetic,
    ingest_corpus,
    read_manifest,
    read_qrels,
    read_queries,
)
from .persist import load_index, save_index
from .pipeline import oracle_rank, search
from .service import SearchService, ServiceConfig, ServiceServer
from .store import build_pooled_index, build_store

_DEFAULTS = RetrievalConfig()


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _tau_value(text: str) -> float | None:
    if text.lower() in ("none", "off", "disabled"):
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"tau must be a number or 'none', got {text!r}") from None


_UNSET = object()  # distinguishes "--tau none" from "--tau not given"


def _add_retrieval_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("retrieval")
    group.add_argument("--config", type=Path, default=None, metavar="JSON",
                       help="JSON file with retrieval keys; explicit flags override it")
    group.add_argument("--k-token", type=int, default=None,
                       help=f"first-pass hits per query token (default {_DEFAULTS.k_token})")
    group.add_argument("--tau", type=_tau_value, default=_UNSET,
                       help=f"shortlist threshold, number or 'none' (default {_DEFAULTS.tau})")
    group.add_argument("--tau-mode", choices=["absolute", "relative_to_top"], default=None,
                       help=f"threshold semantics (default {_DEFAULTS.tau_mode})")
    group.add_argument("--first-pass", choices=["hnsw", "exact", "pooled"], default=None,
                       help=f"first-pass searcher (default {_DEFAULTS.first_pass})")
    group.add_argument("--ef-search", type=int, default=None,
                       help=f"graph beam width at query time (default {_DEFAULTS.ef_search})")
    group.add_argument("--top-k", type=int, default=None,
                       help=f"results returned per query (default {_DEFAULTS.top_k})")
    group.add_argument("--candidate-cap", type=int, default=None,
                       help=f"error if candidates exceed this (default {_DEFAULTS.candidate_cap})")


_CONFIG_KEYS = ("k_token", "tau", "tau_mode", "first_pass", "ef_search", "top_k",
                "normalize_on_ingest", "candidate_cap")


def _retrieval_config(args: argparse.Namespace) -> RetrievalConfig:
    values: dict = {}
    if args.config is not None:
        obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(obj) - set(_CONFIG_KEYS)
        if unknown:
            raise LateIndexError(f"config file has unknown keys: {sorted(unknown)}")
        values.update(obj)
    for key in ("k_token", "tau_mode", "first_pass", "ef_search", "top_k", "candidate_cap"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.tau is not _UNSET:
        values["tau"] = args.tau
    return dataclasses.replace(RetrievalConfig(), **values)


# -- subcommands ------------------------------------------------------------


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        pages=args.pages,
        patches_per_page=args.patches,
        dim=args.dim,
        queries=args.queries,
        tokens_per_query=args.tokens,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    paths = gen_synthetic(spec, args.out)
    _progress(f"wrote corpus manifest {paths.manifest}")
    _progress(f"wrote queries {paths.queries}")
    _progress(f"wrote qrels {paths.qrels}")
    return 0


def _cmd_ingest(args) -> int:
    manifest = read_manifest(args.manifest)
    _progress(f"ingesting {len(manifest)} pages from {args.manifest}")
    t0 = time.perf_counter()
    store = build_store(ingest_corpus(manifest), normalize=not args.no_normalize)
    _progress(f"store sealed: {store.row_count} patches, {store.page_count} pages, d={store.dim}")
    params = IndexParams(M=args.hnsw_m, ef_construction=args.ef_construction, seed=args.seed)
    graph = build_hnsw(store, params)
    _progress(f"graph built in {time.perf_counter() - t0:.1f}s (max level {graph.max_level})")
    save_index(store, graph, args.out)
    _progress(f"saved index to {args.out}")
    return 0


def _cmd_query(args) -> int:
    store, graph = load_index(args.index)
    cfg = _retrieval_config(args)
    queries = read_queries(args.queries)
    _progress(f"running {len(queries)} queries ({'oracle' if args.oracle else cfg.first_pass})")
    pooled = build_pooled_index(store) if cfg.first_pass == "pooled" and not args.oracle else None
    run = RunFile(tag=args.tag)
    for q in queries:
        if args.oracle:
            result = oracle_rank(q, store, cfg.top_k)
        else:
            result, _ = search(q, store, graph, cfg, pooled=pooled)
        run.add(q.query_id, result)
    write_run(run, args.out)
    _progress(f"wrote run file {args.out}")
    return 0


def _cmd_eval(args) -> int:
    run = read_run(args.run)
    qrels = read_qrels(args.qrels)
    report = EvalReport(recall=run_recalls(run, qrels))
    print(report.to_json())
    if args.out_dir is not None:
        from .report import write_report_files

        written = write_report_files(report, args.out_dir)
        _progress("wrote " + ", ".join(str(p) for p in written))
    return 0


def _cmd_bench(args) -> int:
    store, graph = load_index(args.index)
    cfg = _retrieval_config(args)
    queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels) if args.qrels else None
    pooled = build_pooled_index(store) if cfg.first_pass == "pooled" else None
    _progress(f"benchmarking {len(queries)} queries x {args.repetitions} repetitions")
    report = bench_compare(
        queries, store, graph, cfg,
        repetitions=args.repetitions, qrels=qrels, pooled=pooled,
    )
    print(report.to_json())
    if args.out_dir is not None:
        from .report import write_report_files

        written = write_report_files(report, args.out_dir)
        _progress("wrote " + ", ".join(str(p) for p in written))
    return 0


def _cmd_serve(args) -> int:
    store, graph = load_index(args.index)
    cfg = ServiceConfig(
        host=args.host,
        port=args.port,
        retrieval=_retrieval_config(args),
        embedder_url=args.embedder_url or os.environ.get("LATEINDEX_EMBEDDER_URL"),
        reader_url=args.reader_url or os.environ.get("LATEINDEX_READER_URL"),
        request_timeout=args.timeout,
    )
    server = ServiceServer(SearchService(store, graph, cfg))
    host, port = server.address
    _progress(f"serving {store.page_count} pages on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        _progress("shutting down")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="lateindex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a seeded synthetic corpus with known relevance")
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--patches", type=int, required=True, help="patches per page")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--queries", type=int, required=True)
    p.add_argument("--tokens", type=int, required=True, help="tokens per query")
    p.add_argument("--sigma", type=float, default=0.1, help="query noise level")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("ingest", help="build and save an index from a corpus manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="index file to write")
    p.add_argument("--no-normalize", action="store_true", help="store raw vectors")
    p.add_argument("--hnsw-m", type=int, default=16, help="graph degree bound M")
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--seed", type=int, default=0, help="level-assignment seed")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("query", help="run a queries file against an index, write a run file")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True, help="queries JSONL")
    p.add_argument("--out", type=Path, required=True, help="run file to write")
    p.add_argument("--tag", default="lateindex", help="run tag")
    p.add_argument("--oracle", action="store_true",
                   help="exhaustive late-interaction ranking instead of two-pass")
    _add_retrieval_flags(p)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("eval", help="recall of a run file against qrels")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--qrels", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=None,
                   help="also write report.json/.tsv and figures here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="two-pass vs oracle latency and agreement")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--qrels", type=Path, default=None)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out-dir", type=Path, default=None,
                   help="also write report files and figures here")
    _add_retrieval_flags(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("serve", help="HTTP search/answer service over an index")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--embedder-url", default=None,
                   help="embedder endpoint (fallback: LATEINDEX_EMBEDDER_URL)")
    p.add_argument("--reader-url", default=None,
                   help="reader endpoint (fallback: LATEINDEX_READER_URL)")
    p.add_argument("--timeout", type=float, default=30.0, help="outbound request timeout")
    _add_retrieval_flags(p)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except LateIndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
