"""HNSW index over a subset of a dataset, with plain, filtered and bounded search."""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .._kernels import build_graph, dist_all, knn_search
from ..vectors import Neighbor, allowed_ids, topk_from
from .cursor import SearchCursor

MAGIC = b"RBHN"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQqqIQQI")
MAX_LEVEL = 16


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    efc: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.M < 2 or self.efc < 1:
            raise ValueError("need M >= 2 and efc >= 1")

    @property
    def M0(self) -> int:
        return 2 * self.M

    @property
    def level_mult(self) -> float:
        return 1.0 / math.log(self.M)


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    efs: int = 100

    def __post_init__(self):
        if not (self.efs >= self.k >= 1):
            raise ValueError(f"need efs >= k >= 1, got k={self.k}, efs={self.efs}")

    @classmethod
    def from_alpha(cls, k: int, alpha: float = 10.0) -> "SearchParams":
        return cls(k, max(k, int(math.ceil(alpha * k))))


def sample_levels(n: int, params: HnswParams) -> np.ndarray:
    rng = np.random.default_rng(params.seed)
    u = rng.random(n)
    lv = np.floor(-np.log1p(-u) * params.level_mult).astype(np.int32)
    return np.minimum(lv, MAX_LEVEL)


class HnswIndex:
    """Multi-layer proximity graph. Local node i holds global id ``ids[i]``; ids are ascending."""

    def __init__(self, X, ids, params, levels, links0, deg0, upper_row, linksU, degU, entry, max_level):
        self.X = X
        self.ids = ids
        self.params = params
        self.levels = levels
        self.links0 = links0
        self.deg0 = deg0
        self.upper_row = upper_row
        self.linksU = linksU
        self.degU = degU
        self.entry = int(entry)
        self.max_level = int(max_level)

    # construction -------------------------------------------------------
    @classmethod
    def build(cls, vectors: np.ndarray, ids=None, params: HnswParams | None = None) -> "HnswIndex":
        """Index ``vectors[ids]`` (all rows when ``ids`` is None)."""
        params = params or HnswParams()
        vectors = np.asarray(vectors, dtype=np.float32)
        if ids is None:
            ids = np.arange(vectors.shape[0], dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot build an index over zero vectors")
        srt = np.sort(ids)
        if np.any(srt[1:] == srt[:-1]):
            raise ValueError("duplicate ids in index input")
        X = np.ascontiguousarray(vectors[srt])
        n = X.shape[0]
        M, M0 = params.M, params.M0
        levels = sample_levels(n, params)
        L = max(int(levels.max()), 1)
        upper_row = np.full(n, -1, dtype=np.int32)
        up = np.flatnonzero(levels > 0)
        upper_row[up] = np.arange(up.size, dtype=np.int32)
        links0 = np.full((n, M0), -1, dtype=np.int32)
        deg0 = np.zeros(n, dtype=np.int32)
        linksU = np.full((max(up.size, 1), L, M), -1, dtype=np.int32)
        degU = np.zeros((max(up.size, 1), L), dtype=np.int32)
        entry, max_level = build_graph(X, levels, M, M0, params.efc, links0, deg0, upper_row, linksU, degU)
        return cls(X, srt, params, levels, links0, deg0, upper_row, linksU, degU, entry, max_level)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def graph(self):
        return self.links0, self.deg0, self.upper_row, self.linksU, self.degU

    def neighbors(self, u: int, level: int) -> np.ndarray:
        if level == 0:
            return self.links0[u, : self.deg0[u]]
        r = self.upper_row[u]
        return self.linksU[r, level - 1, : self.degU[r, level - 1]]

    def local_mask(self, allowed) -> np.ndarray:
        """Boolean mask over local nodes for a global id collection or a global boolean mask."""
        if allowed is None:
            return np.ones(len(self), dtype=bool)
        if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
            m = np.zeros(len(self), dtype=bool)
            inside = self.ids < allowed.shape[0]
            m[inside] = allowed[self.ids[inside]]
            return m
        return np.isin(self.ids, allowed_ids(allowed, int(self.ids[-1]) + 1))

    # search ---------------------------------------------------------------
    def search_raw(self, q, k: int, efs: int):
        """Local ids, dists, expansions, distance evaluations. Full scan when efs >= |idx|."""
        q = np.ascontiguousarray(q, dtype=np.float32)
        n = len(self)
        if efs >= n:
            d = dist_all(self.X, q)
            order = np.lexsort((np.arange(n), d))[:k]
            return order.astype(np.int64), d[order], n, n
        ids, ds, n_exp, n_dist = knn_search(
            self.X, q, k, efs, self.entry, self.max_level, *self.graph
        )
        return ids, ds, n_exp, n_dist

    def search(self, q, k: int = 10, efs: int = 100) -> list[Neighbor]:
        SearchParams(k, max(efs, k))
        loc, ds, _, _ = self.search_raw(q, k, max(efs, k))
        return [Neighbor(int(self.ids[i]), float(d)) for i, d in zip(loc, ds)]

    def search_filtered_raw(self, q, k: int, efs: int, mask: np.ndarray, lam: float):
        """Inflated search then post-filter with a local mask; returns global ids, dists, work."""
        if lam < 1:
            raise ValueError("inflation factor must be >= 1")
        kk = int(math.ceil(lam * k))
        ee = max(int(math.ceil(lam * efs)), kk)
        if ee >= len(self):
            q = np.ascontiguousarray(q, dtype=np.float32)
            d = dist_all(self.X, q)
            loc = np.flatnonzero(mask)
            d = d[loc]
            order = np.lexsort((loc, d))[:k]
            return self.ids[loc[order]], d[order], len(self), len(self)
        # the whole inflated beam is filtered, so at least k' candidates are inspected
        loc, ds, n_exp, n_dist = self.search_raw(q, ee, ee)
        keep = mask[loc]
        return self.ids[loc[keep]][:k], ds[keep][:k], n_exp, n_dist

    def search_filtered(self, q, k: int, efs: int, allowed, lam: float) -> list[Neighbor]:
        gids, ds, _, _ = self.search_filtered_raw(q, k, efs, self.local_mask(allowed), lam)
        return [Neighbor(int(i), float(d)) for i, d in zip(gids, ds)]

    def cursor(self, q, k: int, mask: np.ndarray, ef_max: int) -> SearchCursor:
        return SearchCursor(self, q, k, mask, ef_max)

    def search_bounded(self, q, k: int, ef_default: int, ef_max: int, allowed, global_bound: float = math.inf):
        """Phase-1 bounded base-layer search; the returned cursor can be resumed."""
        if global_bound < 0:
            raise ValueError("global bound must be >= 0")
        cur = SearchCursor(self, q, k, self.local_mask(allowed), ef_max)
        stopped = cur.advance(ef_default, global_bound)
        return cur.results(), cur, stopped

    # invariants ------------------------------------------------------------
    def check_invariants(self) -> None:
        n, M, M0 = len(self), self.params.M, self.params.M0
        assert np.all(self.deg0 <= M0)
        for u in range(n):
            nb = self.neighbors(u, 0)
            assert np.all((nb >= 0) & (nb < n)) and u not in nb
            for lv in range(1, int(self.levels[u]) + 1):
                nb = self.neighbors(u, lv)
                assert nb.size <= M
                assert np.all(self.levels[nb] >= lv), "upper-layer edge to a node absent from that layer"
        assert self.levels[self.entry] == self.max_level

    # persistence ----------------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        n, d = self.X.shape
        n_up, L = self.degU.shape
        hdr = _HEADER.pack(MAGIC, VERSION, d, self.params.M, self.params.M0, n, self.max_level,
                           self.entry, self.params.efc, self.params.seed, n_up, L)
        with open(path, "wb") as f:
            f.write(hdr)
            for arr, dt in ((self.levels, "<i4"), (self.deg0, "<i4"), (self.links0, "<i4"),
                            (self.upper_row, "<i4"), (self.degU, "<i4"), (self.linksU, "<i4"),
                            (self.ids, "<i8"), (self.X, "<f4")):
                f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "HnswIndex":
        raw = open(path, "rb").read()
        magic, ver, d, M, M0, n, max_level, entry, efc, seed, n_up, L = _HEADER.unpack_from(raw, 0)
        if magic != MAGIC:
            raise ValueError("not an index file")
        if ver != VERSION:
            raise ValueError(f"unsupported index version {ver}")
        off = _HEADER.size

        def take(count, dt, shape):
            nonlocal off
            a = np.frombuffer(raw, dtype=dt, count=count, offset=off)
            off += a.nbytes
            return a.reshape(shape).astype(dt[1:] if dt[0] == "<" else dt, copy=True)

        levels = take(n, "<i4", (n,))
        deg0 = take(n, "<i4", (n,))
        links0 = take(n * M0, "<i4", (n, M0))
        upper_row = take(n, "<i4", (n,))
        degU = take(n_up * L, "<i4", (n_up, L))
        linksU = take(n_up * L * M, "<i4", (n_up, L, M))
        ids = take(n, "<i8", (n,))
        X = take(n * d, "<f4", (n, d))
        params = HnswParams(M=M, efc=efc, seed=seed)
        return cls(X, ids, params, levels, links0, deg0, upper_row, linksU, degU, entry, max_level)
