"""Hierarchical navigable small world graph over the patch store.

Similarity is inner product on the stored vectors (cosine when the store
is normalized). Construction is deterministic for a fixed store, params,
and seed: node levels are drawn up front from a seeded generator in row
order, and all heap ties break on row id.

Traversal scores run in float32 for speed; the final reported hit scores
are recomputed through the canonical float64 dot product.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .core import dot
from .errors import BadParamsError, DimensionMismatchError, EmptyStoreError
from .store import Hit, PatchStore


@dataclass(frozen=True)
class IndexParams:
    """Graph-construction knobs. Metric is fixed: inner product on the
    store's (unit) vectors."""

    M: int = 16
    ef_construction: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be >= 2")
        if self.ef_construction < self.M:
            raise ValueError("ef_construction must be >= M")


class HnswGraph:
    """Adjacency structure produced by :func:`build_hnsw`.

    Layer 0 adjacency lives in a flat (n, 2M+1) int32 matrix with per-node
    counts (one spare column absorbs the transient overflow before
    pruning); upper layers are small dicts. Degrees never exceed M above
    layer 0 and 2M at layer 0 once an insert completes.
    """

    def __init__(self, store: PatchStore, m: int, levels: np.ndarray):
        self.store = store
        self.M = m
        self.M0 = 2 * m
        self.levels = levels
        n = store.row_count
        self._nbr0 = np.full((n, self.M0 + 1), -1, dtype=np.int32)
        self._cnt0 = np.zeros(n, dtype=np.int32)
        self._upper: list[dict[int, list[int]]] = []
        self.entry_point = -1
        self.max_level = -1
        self._stamp = np.zeros(n, dtype=np.int64)
        self._stamp_cur = 0

    # -- adjacency accessors (stored order preserved) ----------------------

    def neighbors(self, node: int, layer: int) -> list[int]:
        if layer == 0:
            return self._nbr0[node, : self._cnt0[node]].tolist()
        return list(self._upper[layer - 1].get(node, ()))

    def level_of(self, node: int) -> int:
        return int(self.levels[node])

    def degree(self, node: int, layer: int) -> int:
        if layer == 0:
            return int(self._cnt0[node])
        return len(self._upper[layer - 1].get(node, ()))

    def _ensure_layers(self, level: int) -> None:
        while len(self._upper) < level:
            self._upper.append({})

    def _set_neighbors(self, node: int, layer: int, ids) -> None:
        if layer == 0:
            k = len(ids)
            self._nbr0[node, :k] = ids
            self._cnt0[node] = k
        else:
            self._upper[layer - 1][node] = list(int(i) for i in ids)

    def _append_neighbor(self, node: int, layer: int, nid: int) -> None:
        if layer == 0:
            c = self._cnt0[node]
            self._nbr0[node, c] = nid
            self._cnt0[node] = c + 1
        else:
            self._upper[layer - 1].setdefault(node, []).append(nid)

    # -- traversal ----------------------------------------------------------

    def _greedy_descend(self, vecs: np.ndarray, q: np.ndarray, ep: int, sim: float, layer: int) -> tuple[int, float]:
        """Single-entry greedy walk on an upper layer (layer >= 1)."""
        while True:
            lst = self._upper[layer - 1].get(ep)
            if not lst:
                return ep, sim
            nbrs = np.asarray(lst, dtype=np.int32)
            sims = vecs[nbrs] @ q
            j = int(np.argmax(sims))
            if sims[j] > sim:
                sim = float(sims[j])
                ep = int(nbrs[j])
            else:
                return ep, sim

    def _search_layer(self, q: np.ndarray, enters, enter_sims, layer: int, ef: int):
        """Beam search at one layer; returns a min-heap of (sim, row id)."""
        self._stamp_cur += 1
        cur = self._stamp_cur
        stamp = self._stamp
        vecs = self.store.matrix
        cand: list[tuple[float, int]] = []
        res: list[tuple[float, int]] = []
        for e, s in zip(enters, enter_sims):
            stamp[e] = cur
            heapq.heappush(cand, (-s, e))
            heapq.heappush(res, (s, e))
            if len(res) > ef:
                heapq.heappop(res)
        while cand:
            nsim, c = heapq.heappop(cand)
            if len(res) >= ef and -nsim < res[0][0]:
                break
            if layer == 0:
                nbrs = self._nbr0[c, : self._cnt0[c]]
            else:
                lst = self._upper[layer - 1].get(c)
                if not lst:
                    continue
                nbrs = np.asarray(lst, dtype=np.int32)
            if len(nbrs) == 0:
                continue
            unv = nbrs[stamp[nbrs] != cur]
            if len(unv) == 0:
                continue
            stamp[unv] = cur
            sims = vecs[unv] @ q
            if len(res) >= ef:
                keep = sims > res[0][0]
                unv = unv[keep]
                sims = sims[keep]
            for j, s in zip(unv.tolist(), sims.tolist()):
                if len(res) < ef or s > res[0][0]:
                    heapq.heappush(cand, (-s, j))
                    heapq.heappush(res, (s, j))
                    if len(res) > ef:
                        heapq.heappop(res)
        return res

    def _select_heuristic(self, cand_ids: np.ndarray, cand_sims: np.ndarray, m: int, presorted: bool = False) -> np.ndarray:
        """Diversity-aware neighbor selection: walk candidates best-first and
        keep those closer to the query point than to any already-kept
        neighbor. Pruned candidates are dropped, not backfilled."""
        if not presorted:
            order = np.argsort(-cand_sims, kind="stable")
            cand_ids = cand_ids[order]
            cand_sims = cand_sims[order]
        nc = len(cand_ids)
        if nc <= m:
            return cand_ids
        vecs = self.store.matrix
        best_to_sel = np.full(nc, -np.inf, dtype=np.float32)
        selected: list[int] = []
        for i in range(nc):
            if cand_sims[i] > best_to_sel[i]:
                selected.append(int(cand_ids[i]))
                if len(selected) == m:
                    break
                rest = slice(i + 1, nc)
                d = vecs[cand_ids[rest]] @ vecs[cand_ids[i]]
                np.maximum(best_to_sel[rest], d, out=best_to_sel[rest])
        return np.asarray(selected, dtype=np.int32)

    def _insert(self, i: int, ef_construction: int) -> None:
        vecs = self.store.matrix
        q = vecs[i]
        lvl = int(self.levels[i])
        self._ensure_layers(lvl)
        if self.entry_point < 0:
            self.entry_point = i
            self.max_level = lvl
            return
        ep = self.entry_point
        sim = float(vecs[ep] @ q)
        for layer in range(self.max_level, lvl, -1):
            ep, sim = self._greedy_descend(vecs, q, ep, sim, layer)
        enters = [ep]
        enter_sims = [sim]
        for layer in range(min(lvl, self.max_level), -1, -1):
            res = self._search_layer(q, enters, enter_sims, layer, ef_construction)
            res_sorted = sorted(res, key=lambda t: (-t[0], t[1]))
            cand_ids = np.fromiter((t[1] for t in res_sorted), dtype=np.int32, count=len(res_sorted))
            cand_sims = np.fromiter((t[0] for t in res_sorted), dtype=np.float32, count=len(res_sorted))
            cap = self.M0 if layer == 0 else self.M
            sel = self._select_heuristic(cand_ids, cand_sims, self.M, presorted=True)
            self._set_neighbors(i, layer, sel)
            for s in sel.tolist():
                self._append_neighbor(s, layer, i)
                if self.degree(s, layer) > cap:
                    nb = np.asarray(self.neighbors(s, layer), dtype=np.int32)
                    sims = vecs[nb] @ vecs[s]
                    keep = self._select_heuristic(nb, sims, cap)
                    self._set_neighbors(s, layer, keep)
            enters = [t[1] for t in res_sorted]
            enter_sims = [t[0] for t in res_sorted]
        if lvl > self.max_level:
            self.max_level = lvl
            self.entry_point = i

    def search_rows(self, query: np.ndarray, k: int, ef: int) -> tuple[np.ndarray, np.ndarray]:
        """Approximate top-k (row ids, canonical float64 scores), sorted by
        (score desc, row asc)."""
        if k < 1:
            raise BadParamsError("k must be >= 1")
        if ef < k:
            raise BadParamsError(f"ef ({ef}) must be >= k ({k})")
        q = np.asarray(query, dtype=np.float32)
        if q.shape != (self.store.dim,):
            raise DimensionMismatchError(
                f"query shape {q.shape}, store dim {self.store.dim}"
            )
        vecs = self.store.matrix
        ep = self.entry_point
        sim = float(vecs[ep] @ q)
        for layer in range(self.max_level, 0, -1):
            ep, sim = self._greedy_descend(vecs, q, ep, sim, layer)
        res = self._search_layer(q, [ep], [sim], 0, ef)
        ids = np.fromiter((t[1] for t in res), dtype=np.int64, count=len(res))
        scores = np.fromiter((dot(vecs[int(r)], q) for r in ids), dtype=np.float64, count=len(ids))
        order = np.lexsort((ids, -scores))[:k]
        return ids[order], scores[order]


def build_hnsw(store: PatchStore, params: IndexParams = IndexParams()) -> HnswGraph:
    """Insert all store rows in row order; deterministic for a fixed seed."""
    n = store.row_count
    if n == 0:
        raise EmptyStoreError("cannot build a graph over an empty store")
    rng = np.random.default_rng(params.seed)
    ml = 1.0 / math.log(params.M)
    levels = np.floor(-np.log(rng.random(n)) * ml).astype(np.int32)
    graph = HnswGraph(store, params.M, levels)
    for i in range(n):
        graph._insert(i, params.ef_construction)
    return graph


def ann_search(graph: HnswGraph, query: np.ndarray, k: int, ef: int) -> list[Hit]:
    """Approximate top-k patches, descending canonical score, PatchKey
    tie-break. May miss true neighbors but never mis-scores the ones it
    returns."""
    rows, scores = graph.search_rows(query, k, ef)
    return [
        Hit(graph.store.patch_key_of_row(int(r)), float(s))
        for r, s in zip(rows, scores)
    ]
