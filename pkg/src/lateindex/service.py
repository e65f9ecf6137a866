"""HTTP facade over a loaded index, plus end-to-end question answering that
calls an external embedder and a generic reader endpoint.

Endpoints (all JSON, UTF-8; errors return {"error": message}):

    GET  /healthz
    GET  /v1/pages/{doc_id}/{page}
    POST /v1/search   {"query_embedding": [[..]] | null, "query_text": str | null,
                       "top_k", "k_token", "tau", "tau_mode", "first_pass",
                       "ef_search"} (absent keys fall back to the service
                       defaults; "tau": null disables the threshold)
    POST /v1/answer   {"question": str, "top_k": int}

The reader endpoint receives {"question", "pages": [{"doc_id", "page"}]}
and replies {"answer": str, "sources": ["doc_id#page", ...]} (sources
optional). Sources echoed to the caller are filtered to pages this service
actually forwarded, so an answer can never cite a page retrieval did not
produce.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

import numpy as np

from .core import PageKey, QueryEmbedding, RetrievalConfig
from .embedder import EndpointConfig, embed_remote, post_json
from .errors import (
    BadResponseError,
    CandidateOverflowError,
    DimensionMismatchError,
    EmptyQueryError,
    LateIndexError,
    NonFiniteError,
    TransportFailureError,
    UnknownPageError,
)
from .hnsw import HnswGraph
from .pipeline import search
from .store import PatchStore, PooledIndex, build_pooled_index

logger = logging.getLogger(__name__)

DEFAULT_NO_ANSWER_SENTINEL = "unable to find answer"


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    retrieval: RetrievalConfig = RetrievalConfig()
    embedder_url: str | None = None
    reader_url: str | None = None
    request_timeout: float = 30.0
    no_answer_sentinel: str = DEFAULT_NO_ANSWER_SENTINEL

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ValueError("port out of range")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")


class _HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class SearchService:
    """Request-level logic, independent of the HTTP plumbing."""

    def __init__(self, store: PatchStore, graph: HnswGraph, config: ServiceConfig):
        if store.page_count < 1:
            raise ValueError("refusing to serve an empty index")
        self.store = store
        self.graph = graph
        self.config = config
        self._pooled: PooledIndex | None = None
        self._pooled_lock = threading.Lock()

    def _pooled_index(self) -> PooledIndex:
        with self._pooled_lock:
            if self._pooled is None:
                self._pooled = build_pooled_index(self.store)
            return self._pooled

    def health(self) -> dict:
        return {"status": "ok", "pages": self.store.page_count, "dim": self.store.dim}

    def page_info(self, doc_id: str, page_str: str) -> dict:
        try:
            number = int(page_str)
        except ValueError:
            raise _HttpError(400, f"page number {page_str!r} is not an integer") from None
        if number < 0:
            raise _HttpError(400, "page number must be non-negative")
        try:
            _, count = self.store.page_range(PageKey(doc_id, number))
        except UnknownPageError:
            raise _HttpError(404, f"unknown page {doc_id}#{number}") from None
        return {"doc_id": doc_id, "page": number, "patches": count}

    def _config_from(self, body: dict) -> RetrievalConfig:
        overrides = {}
        for key in ("top_k", "k_token", "tau_mode", "first_pass", "ef_search"):
            if key in body and body[key] is not None:
                overrides[key] = body[key]
        if "tau" in body:
            overrides["tau"] = body["tau"]  # explicit null disables the threshold
        try:
            return dataclasses.replace(self.config.retrieval, **overrides)
        except (ValueError, TypeError) as exc:
            raise _HttpError(400, f"bad retrieval parameters: {exc}") from exc

    def handle_search(self, body: dict) -> dict:
        if not isinstance(body, dict):
            raise _HttpError(400, "body must be a JSON object")
        embedding = body.get("query_embedding")
        text = body.get("query_text")
        if (embedding is None) == (text is None):
            raise _HttpError(400, "provide exactly one of query_embedding or query_text")
        cfg = self._config_from(body)
        if embedding is not None:
            query = self._inline_query(embedding)
        else:
            query = self._embedded_query(text)
        return self._run_search(query, cfg)

    def _inline_query(self, embedding) -> QueryEmbedding:
        if not isinstance(embedding, list):
            raise _HttpError(400, "query_embedding must be a list of token rows")
        if len(embedding) == 0:
            raise _HttpError(422, "empty query: no token rows")
        try:
            arr = np.asarray(embedding, dtype=np.float32)
        except (ValueError, TypeError) as exc:
            raise _HttpError(400, f"malformed query_embedding: {exc}") from exc
        if arr.ndim != 2:
            raise _HttpError(400, "query_embedding must be a 2-D array")
        if arr.shape[1] != self.store.dim:
            raise _HttpError(
                400, f"dimension mismatch: query dim {arr.shape[1]}, index dim {self.store.dim}"
            )
        try:
            return QueryEmbedding("inline", arr)
        except (NonFiniteError, EmptyQueryError, ValueError) as exc:
            raise _HttpError(400, str(exc)) from exc

    def _embedded_query(self, text) -> QueryEmbedding:
        if not isinstance(text, str) or not text.strip():
            raise _HttpError(400, "query_text must be a non-empty string")
        if self.config.embedder_url is None:
            raise _HttpError(503, "embedder endpoint not configured")
        try:
            embeddings = embed_remote(
                [text], EndpointConfig(self.config.embedder_url, self.config.request_timeout)
            )
        except TransportFailureError as exc:
            raise _HttpError(502, str(exc)) from exc
        except BadResponseError as exc:
            raise _HttpError(502, f"embedder: {exc}") from exc
        query = embeddings[0]
        if query.dim != self.store.dim:
            raise _HttpError(
                400, f"dimension mismatch: embedder dim {query.dim}, index dim {self.store.dim}"
            )
        return query

    def _run_search(self, query: QueryEmbedding, cfg: RetrievalConfig) -> dict:
        pooled = self._pooled_index() if cfg.first_pass == "pooled" else None
        try:
            result, trace = search(query, self.store, self.graph, cfg, pooled=pooled)
        except DimensionMismatchError as exc:
            raise _HttpError(400, f"dimension mismatch: {exc}") from exc
        except CandidateOverflowError as exc:
            raise _HttpError(400, str(exc)) from exc
        return {
            "results": [
                {
                    "doc_id": e.page.doc_id,
                    "page": e.page.page_number,
                    "score": e.score,
                    "rank": e.rank,
                }
                for e in result.entries
            ],
            "candidates_examined": trace.candidates_examined,
        }

    def handle_answer(self, body: dict) -> dict:
        if not isinstance(body, dict):
            raise _HttpError(400, "body must be a JSON object")
        question = body.get("question")
        if not isinstance(question, str) or not question.strip():
            raise _HttpError(400, "question must be a non-empty string")
        if self.config.embedder_url is None:
            raise _HttpError(503, "embedder endpoint not configured")
        if self.config.reader_url is None:
            raise _HttpError(503, "reader endpoint not configured")
        top_k = body.get("top_k", self.config.retrieval.top_k)
        cfg = self._config_from({"top_k": top_k})
        query = self._embedded_query(question)
        search_reply = self._run_search(query, cfg)
        pages = [{"doc_id": r["doc_id"], "page": r["page"]} for r in search_reply["results"]]
        try:
            reader_reply = post_json(
                self.config.reader_url,
                {"question": question, "pages": pages},
                self.config.request_timeout,
            )
        except (TransportFailureError, BadResponseError) as exc:
            raise _HttpError(502, f"reader: {exc}") from exc
        if not isinstance(reader_reply, dict) or not isinstance(reader_reply.get("answer"), str):
            raise _HttpError(502, "reader: reply lacks a string 'answer'")
        answer = reader_reply["answer"]
        forwarded = {f"{p['doc_id']}#{p['page']}" for p in pages}
        claimed = reader_reply.get("sources", [])
        if not isinstance(claimed, list):
            raise _HttpError(502, "reader: 'sources' must be a list")
        sources = [s for s in claimed if isinstance(s, str) and s in forwarded]
        no_answer = self.config.no_answer_sentinel.casefold() in answer.casefold()
        return {"answer": answer, "sources": sources, "no_answer": no_answer}


def _json_bytes(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def make_handler(service: SearchService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            logger.debug("%s - %s", self.address_string(), fmt % args)

        def _reply(self, status: int, obj: dict) -> None:
            payload = _json_bytes(obj)
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _reply_error(self, status: int, message: str) -> None:
            self._reply(status, {"error": message})

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            try:
                return json.loads(raw.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                raise _HttpError(400, "body is not valid JSON") from None

        def do_GET(self):
            try:
                if self.path == "/healthz":
                    self._reply(200, service.health())
                    return
                parts = self.path.split("/")
                if len(parts) == 5 and parts[1] == "v1" and parts[2] == "pages":
                    self._reply(200, service.page_info(unquote(parts[3]), unquote(parts[4])))
                    return
                self._reply_error(404, f"no route for GET {self.path}")
            except _HttpError as exc:
                self._reply_error(exc.status, exc.message)
            except Exception as exc:  # pragma: no cover - defensive
                logger.exception("internal error")
                self._reply_error(500, f"internal error: {exc}")

        def do_POST(self):
            try:
                body = self._read_body()
                if self.path == "/v1/search":
                    self._reply(200, service.handle_search(body))
                elif self.path == "/v1/answer":
                    self._reply(200, service.handle_answer(body))
                else:
                    self._reply_error(404, f"no route for POST {self.path}")
            except _HttpError as exc:
                self._reply_error(exc.status, exc.message)
            except LateIndexError as exc:
                self._reply_error(500, f"internal error: {exc}")
            except Exception as exc:  # pragma: no cover - defensive
                logger.exception("internal error")
                self._reply_error(500, f"internal error: {exc}")

    return Handler


class ServiceServer:
    """Threaded HTTP server around a SearchService; index is shared
    immutably across request threads."""

    def __init__(self, service: SearchService):
        self.service = service
        cfg = service.config
        self.httpd = ThreadingHTTPServer((cfg.host, cfg.port), make_handler(service))
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
