"""Client for an external embedder service.

Contract: POST to the configured URL with {"texts": [string, ...]};
response {"embeddings": [[[number, ...], ...], ...]} — one token-by-dim
matrix per text. The model itself lives behind the endpoint; this module
only validates shapes and finiteness.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .core import QueryEmbedding
from .errors import BadResponseError, EndpointUnconfiguredError, TransportFailureError


@dataclass(frozen=True)
class EndpointConfig:
    url: str | None = None
    timeout: float = 30.0


def post_json(url: str, payload: dict, timeout: float) -> dict:
    """POST a JSON body and decode a JSON reply; transport errors are wrapped."""
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
        raise TransportFailureError(f"POST {url} failed: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadResponseError(f"{url}: reply is not valid JSON") from exc


def embed_remote(texts: list[str], endpoint: EndpointConfig) -> list[QueryEmbedding]:
    """One validated QueryEmbedding per input text."""
    if endpoint.url is None:
        raise EndpointUnconfiguredError("embedder endpoint not configured")
    if not texts:
        raise ValueError("texts must be non-empty")
    reply = post_json(endpoint.url, {"texts": texts}, endpoint.timeout)
    if not isinstance(reply, dict) or "embeddings" not in reply:
        raise BadResponseError("embedder reply lacks 'embeddings'")
    embeddings = reply["embeddings"]
    if not isinstance(embeddings, list) or len(embeddings) != len(texts):
        raise BadResponseError(
            f"expected {len(texts)} embedding matrices, got "
            f"{len(embeddings) if isinstance(embeddings, list) else type(embeddings).__name__}"
        )
    out: list[QueryEmbedding] = []
    dim: int | None = None
    for i, matrix in enumerate(embeddings):
        arr = _to_matrix(matrix, i)
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise BadResponseError(
                f"text {i}: dim {arr.shape[1]} differs from dim {dim} of earlier texts"
            )
        out.append(QueryEmbedding(f"text{i}", arr))
    return out


def _to_matrix(matrix, index: int) -> np.ndarray:
    if not isinstance(matrix, list) or not matrix:
        raise BadResponseError(f"text {index}: embedding matrix empty or not a list")
    widths = {len(row) if isinstance(row, list) else -1 for row in matrix}
    if len(widths) != 1 or -1 in widths or 0 in widths:
        raise BadResponseError(f"text {index}: ragged or non-list token rows")
    arr = np.asarray(matrix, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise BadResponseError(f"text {index}: non-finite embedding values")
    return arr
