"""Resumable base-layer traversal used by coordinated search.

The cursor keeps its frontier, visited set and beam between calls, so a second
phase continues where the first stopped and never re-expands a node. Nodes
outside ``mask`` steer the traversal but never enter the local result heap.
The heaps live in flat arrays so the walk itself runs in compiled code.
"""
from __future__ import annotations

import math

import numpy as np

from .._kernels import cursor_admit, cursor_scan, cursor_walk, cursor_widen, descend_to_base
from ..vectors import Neighbor

_CAND, _BEAM, _SPILL, _RS, _EF, _K = range(6)


class SearchCursor:
    def __init__(self, index, q, k: int, mask: np.ndarray, ef_max: int):
        self.index = index
        self.q = np.ascontiguousarray(q, dtype=np.float32)
        self.k = k
        self.mask = np.ascontiguousarray(mask, dtype=bool)
        self.ef_max = max(int(ef_max), 1)
        n = len(index)
        self.visited = np.zeros(n, dtype=bool)
        nb = min(self.ef_max, n) + 2
        # frontier (min-heap), beam (max-heap), spill (min-heap), authorized top-k (max-heap)
        self._h = (np.empty(n + 1), np.empty(n + 1, dtype=np.int64),
                   np.empty(nb), np.empty(nb, dtype=np.int64),
                   np.empty(n + 1), np.empty(n + 1, dtype=np.int64),
                   np.empty(k + 1), np.empty(k + 1, dtype=np.int64))
        self._sizes = np.array([0, 0, 0, 0, 0, k], dtype=np.int64)
        self._counters = np.zeros(3, dtype=np.int64)
        self._started = False

    @property
    def ef(self) -> int:
        return int(self._sizes[_EF])

    @property
    def expansions(self) -> int:
        return int(self._counters[0])

    @property
    def dist_evals(self) -> int:
        return int(self._counters[1])

    @property
    def pruned(self) -> bool:
        return bool(self._counters[2])

    @property
    def exhausted(self) -> bool:
        return self._started and self._sizes[_CAND] == 0

    def _start(self, bound: float) -> None:
        idx = self.index
        ep, ep_d = descend_to_base(idx.X, self.q, idx.entry, idx.max_level, *idx.graph)
        self._started = True
        self.visited[ep] = True
        self._counters[1] += 1
        cursor_admit(float(ep_d), int(ep), bound, self.mask, *self._h, self._sizes, self._counters)

    def advance(self, ef: int, bound: float = math.inf) -> bool:
        """Grow the beam to ``ef`` (capped at ef_max) and continue; True if the bound cut the walk."""
        ef = min(max(int(ef), 1), self.ef_max)
        h = self._h
        cursor_widen(max(ef, self.ef), h[2], h[3], h[4], h[5], self._sizes)
        self._counters[2] = 0
        bound = float(bound)
        if not self._started:
            self._start(bound)
        idx = self.index
        if self.ef >= len(idx):
            cursor_scan(idx.X, self.q, self.visited, bound, self.mask, *h, self._sizes, self._counters)
        else:
            cursor_walk(idx.X, self.q, idx.links0, idx.deg0, self.visited, bound, self.mask,
                        *h, self._sizes, self._counters)
        return self.pruned

    def resume(self, extra_ef: int, bound: float = math.inf) -> bool:
        if self.exhausted:
            return False
        return self.advance(self.ef + int(extra_ef), bound)

    def unfiltered_kth(self) -> float:
        """k-th smallest distance among all visited nodes, +inf if fewer than k were seen."""
        nb = int(self._sizes[_BEAM])
        if nb < self.k:
            return math.inf
        d = -self._h[2][:nb]
        return float(np.partition(d, self.k - 1)[self.k - 1])

    def local_topk(self) -> tuple[np.ndarray, np.ndarray]:
        """Authorized local ids and distances found so far, ascending by (distance, id)."""
        n = int(self._sizes[_RS])
        d, u = -self._h[6][:n], -self._h[7][:n]
        o = np.lexsort((u, d))
        return u[o], d[o]

    def results(self) -> list[Neighbor]:
        ids = self.index.ids
        u, d = self.local_topk()
        return [Neighbor(int(ids[i]), float(x)) for i, x in zip(u, d)]
