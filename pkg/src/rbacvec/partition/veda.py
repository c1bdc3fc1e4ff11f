"""Exhaustive greedy optimizer: alternating copy and merge phases over descendant-ancestor
pairs ranked by cost reduction per unit of added storage."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

from ..access import ExclusiveLattice, roles_of, rs_key
from ..cost import CostModel
from ..layout import Layout
from ..planner import plan_greedy
from .finalize import finalize
from .state import LatticeState, storage_cap, weights_or_uniform

_REL = 1e-12


def _same(x: float, y: float) -> bool:
    return abs(x - y) <= _REL * max(1.0, abs(x), abs(y))


@dataclass
class Scored:
    benefit: float           # cost drop divided by (added storage + 1)
    delta: float             # cost drop
    added: int               # added storage
    plans: dict = field(default_factory=dict)   # role -> (plan, cost) after the op


class Veda:
    """Optimizer state: lattice, per-role plans and their modeled costs."""

    def __init__(self, lex: ExclusiveLattice, cm: CostModel, beta: float,
                 weights: Mapping[int, float] | None = None, full_refresh: bool = False):
        self.lex = lex
        self.cm = cm
        self.beta = beta
        self.cap = storage_cap(beta, lex.n_vectors)
        self.state = LatticeState(lex)
        self.weights = weights_or_uniform(weights, lex.n_roles)
        self.roles = [r for r in range(lex.n_roles)]
        self.full_refresh = full_refresh
        self.role_blocks = {r: sorted((t for t in lex.keys if t >> r & 1), key=rs_key) for r in self.roles}
        self.plans: dict[int, frozenset] = {r: frozenset(self.role_blocks[r]) for r in self.roles}
        self.costs: dict[int, float] = {r: self.plan_cost(r, self.plans[r]) for r in self.roles}
        self.pairs = [(c, a) for c in lex.keys for a in sorted(lex.ancestors[c], key=rs_key)]
        self.log: list[dict] = [{"op": "init", "avg_cost": self.avg_cost(), "stored": self.state.stored}]

    # costs ---------------------------------------------------------------------------
    def node_cost(self, k: int, r: int) -> float:
        return self.cm.index_cost(self.state.size[k], self.state.auth(k, r))

    def plan_cost(self, r: int, plan) -> float:
        return sum(self.node_cost(k, r) for k in plan)

    def avg_cost(self) -> float:
        return sum(self.weights[r] * self.costs[r] for r in self.roles)

    def recompute_avg_cost(self) -> float:
        """Full re-evaluation from the current plans (for checking the cached costs)."""
        return sum(self.weights[r] * self.plan_cost(r, self.plans[r]) for r in self.roles)

    def _valid(self, r: int, plan) -> bool:
        st = self.state
        if any(k not in st.members for k in plan):
            return False
        got: set[int] = set()
        for k in plan:
            got |= st.members[k]
        return all(b in got for b in self.role_blocks[r])

    def replan(self, r: int, adapted=None) -> tuple[frozenset, float]:
        """Cheapest of the greedy cover and the adapted current plan."""
        st = self.state
        if not self.role_blocks[r]:
            return frozenset(), 0.0
        w = lambda k: self.node_cost(k, r)  # noqa: E731
        g = plan_greedy(self.role_blocks[r], st.phi, w, size=lambda k: st.size[k], order=rs_key)
        best, best_c = g, self.plan_cost(r, g)
        if adapted is not None and self._valid(r, adapted):
            c = self.plan_cost(r, adapted)
            if c <= best_c:
                best, best_c = frozenset(adapted), c
        return best, best_c

    def _evaluate(self, affected, adapt) -> tuple[float, dict]:
        delta = 0.0
        new = {}
        for r in sorted(affected):
            p, c = self.replan(r, adapt(self.plans[r]))
            new[r] = (p, c)
            delta += self.weights[r] * (self.costs[r] - c)
        return delta, new

    def _affected(self, *keys: int) -> set[int]:
        if self.full_refresh:
            return set(self.roles)
        out = set()
        for r in self.roles:
            if any(k in self.plans[r] for k in keys):
                out.add(r)
        return out

    # scoring ----------------------------------------------------------------------------
    def score_copy(self, c: int, a: int) -> Scored:
        """Copy exclusive block c into node a (a's key is a proper subset of c)."""
        st = self.state
        if c in st.members[a]:
            return Scored(0.0, 0.0, 0)
        added = st.bsize[c]
        st.add_block(a, c)
        try:
            affected = self._affected(a) | set(roles_of(c))
            delta, new = self._evaluate(affected, lambda p: p)
        finally:
            st.remove_block(a, c)
        return Scored(delta / (added + 1), delta, added, new)

    def score_merge(self, c: int, a: int) -> Scored:
        """Merge node c into node a."""
        st = self.state
        affected = self._affected(a, c)
        added_blocks, mem = st.merge(a, c)
        try:
            delta, new = self._evaluate(affected, lambda p: (p - {c}) | {a} if c in p else p)
        finally:
            st.unmerge(a, c, added_blocks, mem)
        return Scored(delta, delta, 0, new)

    def _install(self, sc: Scored, op: str, c: int, a: int) -> None:
        for r, (p, cost) in sc.plans.items():
            self.plans[r] = p
            self.costs[r] = cost
        self.log.append({"op": op, "desc": c, "anc": a, "benefit": sc.benefit,
                         "added": sc.added, "avg_cost": self.avg_cost(), "stored": self.state.stored})

    # phases --------------------------------------------------------------------------------
    def copy_phase(self) -> int:
        st = self.state
        if self.cap - st.stored <= 0:
            return 0
        pr: dict[tuple[int, int], Scored] = {}
        for c, a in self.pairs:
            if c in st.members and a in st.members and c not in st.members[a]:
                pr[(c, a)] = self.score_copy(c, a)
        applied = 0
        while pr:
            buf = self.cap - st.stored
            if buf <= 0:
                break
            order = sorted(pr.items(), key=lambda kv: (-kv[1].benefit, rs_key(kv[0][1]), rs_key(kv[0][0])))
            if order[0][1].benefit <= 0:
                break
            outcome = None
            for (c, a), sc in order:
                if sc.benefit <= 0:
                    break
                if sc.added > buf:
                    continue
                fresh = self.score_copy(c, a)
                if not _same(fresh.benefit, sc.benefit):
                    pr[(c, a)] = fresh
                    outcome = "rescored"
                    break
                st.add_block(a, c)
                self._install(fresh, "copy", c, a)
                applied += 1
                del pr[(c, a)]
                for (c2, a2) in list(pr):
                    if a2 == a:
                        if c2 in st.members[a]:
                            del pr[(c2, a2)]
                        else:
                            pr[(c2, a2)] = self.score_copy(c2, a2)
                outcome = "applied"
                break
            if outcome is None:
                break
        return applied

    def merge_phase(self) -> int:
        st = self.state
        pr: dict[tuple[int, int], Scored] = {}
        for c, a in self.pairs:
            if c in st.members and a in st.members:
                pr[(c, a)] = self.score_merge(c, a)
        applied = 0
        while pr:
            (c, a), sc = min(pr.items(), key=lambda kv: (-kv[1].benefit, rs_key(kv[0][1]), rs_key(kv[0][0])))
            if sc.benefit <= 0:
                break
            fresh = self.score_merge(c, a)
            if not _same(fresh.benefit, sc.benefit):
                pr[(c, a)] = fresh
                continue
            st.merge(a, c)
            self._install(fresh, "merge", c, a)
            applied += 1
            for pair in list(pr):
                if c in pair:
                    del pr[pair]
                elif a in pair:
                    pr[pair] = self.score_merge(*pair)
        return applied

    def optimize(self) -> None:
        rnd = 0
        while True:
            n_copy = self.copy_phase()
            if rnd > 0 and n_copy == 0:
                break
            n_merge = self.merge_phase()
            if n_merge == 0:
                break
            rnd += 1


def veda_run(lex: ExclusiveLattice, cm: CostModel, beta: float, weights: Mapping[int, float] | None = None,
             refine: bool = True, exact_limit: int = 24) -> tuple[Layout, Veda]:
    t0 = time.perf_counter()
    opt = Veda(lex, cm, beta, weights)
    opt.optimize()
    t_opt = time.perf_counter() - t0
    lay = finalize(opt.state, opt.plans, cm, opt.cap, refine=refine, exact_limit=exact_limit,
                   meta={"optimizer": "veda", "beta": beta, "threshold": cm.threshold,
                         "optimize_seconds": t_opt})
    lay.meta["partition_seconds"] = time.perf_counter() - t0
    return lay, opt
