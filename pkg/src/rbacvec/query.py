"""Query execution over a materialized layout.

Two strategies: independent (each probed unit answers on its own, impure indices use an
inflated k and beam) and coordinated (pure units first, then impure indices searched with
an uninflated beam and widened only while the shared global k-th distance can still improve).
"""
from __future__ import annotations

import heapq
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._kernels import dist_rows
from .access import ExclusiveLattice, popcount, roles_of
from .hnsw import HnswIndex, HnswParams, SearchCursor
from .layout import GLOBAL_ROUTE_FRACTION, Layout
from .vectors import Dataset, Neighbor


LAYOUT_FILE = "layout.json"
INDEX_MAP_FILE = "indices.json"


class AuthorizationError(KeyError):
    pass


class GlobalHeap:
    """Bounded max-heap of the best k (dist, id) pairs; ids are deduplicated."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self._h: list[tuple[float, int]] = []
        self._ids: set[int] = set()

    def __len__(self) -> int:
        return len(self._h)

    def push(self, gid: int, d: float) -> bool:
        if gid in self._ids:
            return False
        item = (-d, -gid)
        if len(self._h) < self.k:
            heapq.heappush(self._h, item)
        elif item > self._h[0]:
            _, out = heapq.heapreplace(self._h, item)
            self._ids.discard(-out)
        else:
            return False
        self._ids.add(gid)
        return True

    def push_many(self, gids, ds) -> None:
        for g, d in zip(np.asarray(gids).tolist(), np.asarray(ds).tolist()):
            self.push(int(g), float(d))

    def kth(self) -> float:
        return -self._h[0][0] if len(self._h) >= self.k else math.inf

    def top(self) -> list[Neighbor]:
        return [Neighbor(-g, -nd) for nd, g in sorted(self._h, key=lambda x: (-x[0], -x[1]))]


@dataclass
class ExecStats:
    indices_touched: int = 0
    impure_touched: int = 0
    leftovers_touched: int = 0
    phase2_skips: int = 0
    leftover_ids_scanned: int = 0
    expansions: int = 0
    dist_evals: int = 0
    efs_spent_per_index: list = field(default_factory=list)      # impure indices only
    efs_inflated_per_index: list = field(default_factory=list)   # what an inflated search would use
    routed_global: bool = False

    @property
    def efs_savings(self) -> float:
        full = sum(self.efs_inflated_per_index)
        return 1.0 - sum(self.efs_spent_per_index) / full if full else 0.0


@dataclass
class Probe:
    name: str
    indexed: bool
    pure: bool
    lam: int


class MaterializedLayout:
    """A layout with its vectors placed: one HNSW index per indexed unit, id arrays for leftovers."""

    def __init__(self, ds: Dataset, lex: ExclusiveLattice, layout: Layout,
                 indices: dict[str, HnswIndex], leftovers: dict[str, np.ndarray],
                 global_index: HnswIndex | None = None):
        self.ds = ds
        self.lex = lex
        self.layout = layout
        self.indices = indices
        self.leftovers = leftovers
        self.global_index = global_index
        self._masks: dict[int, np.ndarray] = {}
        self._local: dict[tuple[str, int], np.ndarray] = {}
        self._probes: dict[int, list[Probe]] = {}

    @classmethod
    def build(cls, ds: Dataset, lex: ExclusiveLattice, layout: Layout, params: HnswParams | None = None,
              global_index: HnswIndex | None = None) -> "MaterializedLayout":
        params = params or HnswParams()
        indices, leftovers = {}, {}
        for name, u in sorted(layout.units.items()):
            ids = np.sort(np.concatenate([lex.blocks[b] for b in u.blocks])).astype(np.int64)
            if u.indexed:
                indices[name] = HnswIndex.build(ds.vectors, ids, params)
            else:
                leftovers[name] = ids
        g = layout.meta.get("global_unit")
        if global_index is None and g is not None and g in indices:
            global_index = indices[g]
        return cls(ds, lex, layout, indices, leftovers, global_index)

    # persistence ----------------------------------------------------------------
    def save(self, out_dir: str | os.PathLike) -> None:
        """Layout manifest plus one binary file per index; leftovers are rebuilt from the lattice."""
        os.makedirs(out_dir, exist_ok=True)
        self.layout.save(os.path.join(out_dir, LAYOUT_FILE))
        files = {}
        for i, (name, idx) in enumerate(sorted(self.indices.items())):
            fn = f"index_{i:04d}.hnsw"
            idx.save(os.path.join(out_dir, fn))
            files[name] = fn
        with open(os.path.join(out_dir, INDEX_MAP_FILE), "w") as f:
            json.dump(files, f, indent=1)

    @classmethod
    def load(cls, out_dir: str | os.PathLike, ds: Dataset, lex: ExclusiveLattice) -> "MaterializedLayout":
        layout = Layout.load(os.path.join(out_dir, LAYOUT_FILE))
        layout.check(lex)
        with open(os.path.join(out_dir, INDEX_MAP_FILE)) as f:
            files = json.load(f)
        indices = {name: HnswIndex.load(os.path.join(out_dir, fn)) for name, fn in files.items()}
        leftovers = {}
        for name, u in layout.units.items():
            if not u.indexed:
                leftovers[name] = np.sort(np.concatenate([lex.blocks[b] for b in u.blocks])).astype(np.int64)
            elif name not in indices:
                raise ValueError(f"index file for unit {name} is missing")
        g = layout.meta.get("global_unit")
        return cls(ds, lex, layout, indices, leftovers, indices.get(g) if g else None)

    # authorization --------------------------------------------------------------
    def allowed(self, roles: int) -> np.ndarray:
        if roles not in self._masks:
            self._check_roles(roles)
            self._masks[roles] = self.lex.authorized_mask(roles)
        return self._masks[roles]

    def _check_roles(self, roles: int) -> None:
        if roles <= 0:
            raise AuthorizationError("empty role set")
        for r in roles_of(roles):
            if r >= self.layout.n_roles:
                raise AuthorizationError(f"unknown role {r}")

    def local_mask(self, name: str, roles: int) -> np.ndarray:
        key = (name, roles)
        if key not in self._local:
            self._local[key] = self.indices[name].local_mask(self.allowed(roles))
        return self._local[key]

    def probes(self, roles: int) -> list[Probe]:
        """Units a query probes: scanned leftovers, then pure indices, then impure ones by inflation."""
        if roles not in self._probes:
            self._check_roles(roles)
            lay = self.layout
            out = []
            for n in lay.plan_for(roles):
                if lay.auth(n, roles) == 0:
                    continue
                u = lay.units[n]
                lam = lay.lam(n, roles)
                out.append(Probe(n, u.indexed, lam == 1, lam))
            out.sort(key=lambda p: (p.indexed, not p.pure, p.lam, p.name))
            self._probes[roles] = out
        return self._probes[roles]

    def routes_global(self, roles: int) -> bool:
        return self.global_index is not None and \
            self.lex.size_of_roles(roles) > GLOBAL_ROUTE_FRACTION * self.lex.n_vectors


# execution -----------------------------------------------------------------------

def _scan_leftover(ml: MaterializedLayout, name: str, q: np.ndarray, roles: int, rs: GlobalHeap,
                   st: ExecStats) -> None:
    ids = ml.leftovers[name]
    ids = ids[ml.allowed(roles)[ids]]
    st.leftovers_touched += 1
    st.leftover_ids_scanned += int(ids.size)
    st.dist_evals += int(ids.size)
    if ids.size:
        d = dist_rows(ml.ds.vectors, ids, q)
        if ids.size > rs.k:
            sel = np.argpartition(d, rs.k - 1)[: rs.k]
            ids, d = ids[sel], d[sel]
        rs.push_many(ids, d)


def _search_pure(idx: HnswIndex, q, k, efs, rs: GlobalHeap, st: ExecStats) -> None:
    loc, ds, n_exp, n_dist = idx.search_raw(q, k, max(efs, k))
    st.indices_touched += 1
    st.expansions += int(n_exp)
    st.dist_evals += int(n_dist)
    rs.push_many(idx.ids[loc], ds)


def _prep(ml: MaterializedLayout, q, roles: int, k: int, efs: int):
    if efs < k:
        raise ValueError("efs must be >= k")
    q = np.ascontiguousarray(q, dtype=np.float32)
    if q.shape != (ml.ds.dim,):
        raise ValueError(f"dimension mismatch: query {q.shape} vs dataset dim {ml.ds.dim}")
    return q, ml.probes(roles)


def exec_independent(ml: MaterializedLayout, q, roles: int, k: int = 10, efs: int = 100,
                     stats: ExecStats | None = None) -> list[Neighbor]:
    """Every probed unit searched on its own; impure indices use ceil(lam*k), ceil(lam*efs)."""
    st = stats if stats is not None else ExecStats()
    q, probes = _prep(ml, q, roles, k, efs)
    rs = GlobalHeap(k)
    for p in probes:
        if not p.indexed:
            _scan_leftover(ml, p.name, q, roles, rs, st)
        elif p.pure:
            _search_pure(ml.indices[p.name], q, k, efs, rs, st)
        else:
            idx = ml.indices[p.name]
            gids, ds, n_exp, n_dist = idx.search_filtered_raw(q, k, efs, ml.local_mask(p.name, roles), p.lam)
            st.indices_touched += 1
            st.impure_touched += 1
            st.expansions += int(n_exp)
            st.dist_evals += int(n_dist)
            ee = math.ceil(p.lam * efs)
            st.efs_spent_per_index.append(ee)
            st.efs_inflated_per_index.append(ee)
            rs.push_many(gids, ds)
    return rs.top()


def _push_cursor(cur: SearchCursor, rs: GlobalHeap) -> None:
    u, d = cur.local_topk()
    rs.push_many(cur.index.ids[u], d)


def exec_coordinated(ml: MaterializedLayout, q, roles: int, k: int = 10, efs: int = 100,
                     stats: ExecStats | None = None) -> list[Neighbor]:
    """Leftovers and pure indices seed the global heap; each impure index is walked with the
    plain beam first and widened up to the inflated beam only if it can still improve the heap."""
    st = stats if stats is not None else ExecStats()
    q, probes = _prep(ml, q, roles, k, efs)
    rs = GlobalHeap(k)
    for p in probes:
        if not p.indexed:
            _scan_leftover(ml, p.name, q, roles, rs, st)
        elif p.pure:
            _search_pure(ml.indices[p.name], q, k, efs, rs, st)
    for p in probes:
        if not p.indexed or p.pure:
            continue
        idx = ml.indices[p.name]
        ef_max = math.ceil(p.lam * efs)
        cur = idx.cursor(q, k, ml.local_mask(p.name, roles), ef_max)
        cur.advance(efs, math.inf)
        _push_cursor(cur, rs)
        st.indices_touched += 1
        st.impure_touched += 1
        if cur.exhausted or cur.unfiltered_kth() >= rs.kth():
            st.phase2_skips += 1
        else:
            cur.advance(ef_max, rs.kth())
            _push_cursor(cur, rs)
        st.expansions += cur.expansions
        st.dist_evals += cur.dist_evals
        st.efs_spent_per_index.append(cur.ef)
        st.efs_inflated_per_index.append(ef_max)
    return rs.top()


def exec_multi_role(ml: MaterializedLayout, q, roles: int, k: int = 10, efs: int = 100,
                    global_idx: HnswIndex | None = None, strategy: str = "coordinated",
                    stats: ExecStats | None = None) -> list[Neighbor]:
    """Role-set query: filtered global search when the readable share is above the routing
    fraction and a global index exists; otherwise the union of per-role plans."""
    st = stats if stats is not None else ExecStats()
    g = global_idx if global_idx is not None else ml.global_index
    n_auth = ml.lex.size_of_roles(roles) if roles > 0 else 0
    if g is not None and n_auth > GLOBAL_ROUTE_FRACTION * ml.lex.n_vectors:
        q, _ = _prep(ml, q, roles, k, efs)
        st.routed_global = True
        st.indices_touched += 1
        rs = GlobalHeap(k)
        if n_auth == len(g):
            _search_pure(g, q, k, efs, rs, st)
        else:
            lam = math.ceil(len(g) / n_auth)
            gids, ds, n_exp, n_dist = g.search_filtered_raw(q, k, efs, g.local_mask(ml.allowed(roles)), lam)
            st.impure_touched += 1
            st.expansions += int(n_exp)
            st.dist_evals += int(n_dist)
            rs.push_many(gids, ds)
        return rs.top()
    run = exec_coordinated if strategy == "coordinated" else exec_independent
    return run(ml, q, roles, k, efs, st)


STRATEGIES = ("coordinated", "independent")


def execute(ml: MaterializedLayout, q, roles: int, k: int = 10, efs: int = 100,
            strategy: str = "coordinated", stats: ExecStats | None = None) -> list[Neighbor]:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if popcount(roles) > 1:
        return exec_multi_role(ml, q, roles, k, efs, strategy=strategy, stats=stats)
    run = exec_coordinated if strategy == "coordinated" else exec_independent
    return run(ml, q, roles, k, efs, stats)


def run_batch(ml: MaterializedLayout, queries: np.ndarray, roles: Sequence[int], k: int = 10,
              efs: int = 100, strategy: str = "coordinated") -> tuple[list[list[Neighbor]], list[ExecStats]]:
    results, stats = [], []
    for q, r in zip(queries, roles):
        st = ExecStats()
        results.append(execute(ml, q, int(r), k, efs, strategy, st))
        stats.append(st)
    return results, stats


def summarize(stats: Sequence[ExecStats]) -> Mapping[str, float]:
    n = max(len(stats), 1)
    impure = sum(s.impure_touched for s in stats if not s.routed_global)
    skips = sum(s.phase2_skips for s in stats)
    spent = sum(sum(s.efs_spent_per_index) for s in stats)
    full = sum(sum(s.efs_inflated_per_index) for s in stats)
    return {
        "indices_per_query": sum(s.indices_touched for s in stats) / n,
        "leftovers_per_query": sum(s.leftovers_touched for s in stats) / n,
        "impure_per_query": impure / n,
        "phase2_skip_rate": skips / impure if impure else 0.0,
        "efs_savings": 1.0 - spent / full if full else 0.0,
        "expansions_per_query": sum(s.expansions for s in stats) / n,
        "dist_evals_per_query": sum(s.dist_evals for s in stats) / n,
    }
