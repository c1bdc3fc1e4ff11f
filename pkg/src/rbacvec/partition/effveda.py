"""Fast bottom-up optimizer.

Copy phase: each node is copied whole into a set of disjoint ancestor role sets that tile
its key (plus an optional relabeled residual), scored in closed form, committed layer by
layer from the deepest layer up. Every node stays pure for its key.

Merge phase: small nodes absorb related nodes while the merge lowers the routed-role cost.
Impurity is tracked through the frozen post-copy nodes each merged node is made of.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..access import ExclusiveLattice, is_proper_subset, popcount, roles_of, rs_key
from ..cost import CostModel, c_theta
from ..layout import Layout
from ..planner import plan_exact, plan_greedy
from .finalize import finalize
from .state import LatticeState, storage_cap, weights_or_uniform


# copy -------------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidPartition:
    members: tuple[int, ...]
    residual: int = 0

    @property
    def parts(self) -> int:
        return len(self.members) + (1 if self.residual else 0)

    def tiles(self, tau: int) -> bool:
        acc = 0
        for m in self.members + ((self.residual,) if self.residual else ()):
            if m & acc or m == 0:
                return False
            acc |= m
        return acc == tau


def role_gain(cm: CostModel, n_anc: int, n_node: int) -> float:
    """Cost drop for one role that stops probing two pure nodes and probes their union."""
    t, e = cm.theta, cm.efs
    return c_theta(t, n_anc, e) + c_theta(t, n_node, e) - c_theta(t, n_anc + n_node, e)


def copy_gain(cm: CostModel, tau_sizes: Sequence[tuple[int, int]], n_node: int) -> float:
    """Summed gain over (ancestor key, ancestor size) members: sum |tau_j| * gain_j."""
    return sum(popcount(t) * role_gain(cm, s, n_node) for t, s in tau_sizes)


def copy_benefit(cm: CostModel, tau_sizes: Sequence[tuple[int, int]], n_node: int, residual: bool = False) -> float:
    """Gain per unit of added storage, with added storage n_node * (parts - 1)."""
    parts = len(tau_sizes) + (1 if residual else 0)
    if parts < 2:
        raise ValueError("a valid partition has at least two parts")
    return copy_gain(cm, tau_sizes, n_node) / (n_node * (parts - 1))


def find_best_partition(tau: int, n_node: int, ancestors: Sequence[int], size: Mapping[int, int],
                        buf: int, cm: CostModel) -> tuple[ValidPartition | None, float]:
    """Two-way complement cover if one exists, else greedy disjoint extension of the best
    single ancestor; uncovered roles form a residual. ``ancestors`` sorted by size of role set, descending."""
    if not ancestors or n_node > buf:
        return None, 0.0
    present = set(ancestors)
    gain = {t: popcount(t) * role_gain(cm, size[t], n_node) for t in ancestors}
    best2, best2_v = None, -1.0
    seed, seed_v = None, -1.0
    for t in ancestors:
        comp = tau & ~t
        if comp in present:
            v = gain[t] + gain[comp]
            pair = tuple(sorted((t, comp), key=rs_key))
            if v > best2_v or (v == best2_v and best2 is not None and
                               tuple(map(rs_key, pair)) < tuple(map(rs_key, best2))):
                best2, best2_v = pair, v
        if gain[t] > seed_v:
            seed, seed_v = t, gain[t]
    if best2 is not None:
        return ValidPartition(best2), best2_v / n_node
    members = [seed]
    covered = seed
    total = seed_v
    for t in ancestors:
        if t & covered:
            continue
        rest = tau & ~(covered | t)
        added = n_node * (len(members) + 1 + (1 if rest else 0) - 1)
        if added > buf:
            break
        members.append(t)
        covered |= t
        total += gain[t]
    residual = tau & ~covered
    if residual in present:
        # the leftover roles already have their own node: treat it as a regular member
        members.append(residual)
        total += gain[residual]
        residual = 0
    p = ValidPartition(tuple(sorted(members, key=rs_key)), residual)
    added = n_node * (p.parts - 1)
    if added > buf:
        return None, 0.0
    return p, total / added


@dataclass
class CopyCommit:
    tau: int
    partition: ValidPartition
    score: float
    added: int
    predicted_drop: float     # AvgCost drop under uniform role weights
    avg_before: float
    avg_after: float


def natural_avg_cost(state: LatticeState, cm: CostModel, weights: Mapping[int, float]) -> float:
    """AvgCost when each role probes every node whose key contains it."""
    tot = 0.0
    for r, w in weights.items():
        if w:
            tot += w * sum(cm.index_cost(state.size[k], state.auth(k, r)) for k in state.natural_plan(r))
    return tot


def effveda_copy(lex: ExclusiveLattice, cm: CostModel, beta: float, check_locality: bool = False,
                 weights: Mapping[int, float] | None = None) -> tuple[LatticeState, list[CopyCommit]]:
    st = LatticeState(lex)
    cap = storage_cap(beta, lex.n_vectors)
    buf = cap - st.stored
    log: list[CopyCommit] = []
    if buf <= 0:
        return st, log
    w = weights_or_uniform(weights, lex.n_roles)
    for layer in range(lex.depth, 1, -1):
        scored = []
        keys = [k for k in st.keys() if popcount(k) == layer]
        for tau in keys:
            anc = sorted((a for a in st.members if is_proper_subset(a, tau)),
                         key=lambda a: (-popcount(a), rs_key(a)))
            p, score = find_best_partition(tau, st.size[tau], anc, st.size, buf, cm)
            if p is not None:
                scored.append((score, tau, p))
        scored.sort(key=lambda x: (-x[0], rs_key(x[1])))
        for score, tau, p in scored:
            n = st.size[tau]
            added = n * (p.parts - 1)
            if added > buf:
                continue
            if p.residual and p.residual in st.members:
                # an earlier commit on this layer relabeled a node to the same key
                p = ValidPartition(tuple(sorted(p.members + (p.residual,), key=rs_key)))
            before = natural_avg_cost(st, cm, w) if check_locality else 0.0
            drop = copy_gain(cm, [(t, st.size[t]) for t in p.members], n) / lex.n_roles
            mem = st.delete(tau)
            for t in p.members:
                for b in mem:
                    st.add_block(t, b)
            if p.residual:
                st.add_node(p.residual, mem)
            buf -= added
            after = natural_avg_cost(st, cm, w) if check_locality else 0.0
            log.append(CopyCommit(tau, p, score, added, drop, before, after))
    return st, log


# merge --------------------------------------------------------------------------------

class MergeState:
    """Post-copy lattice plus, per current node, its frozen constituents and routed roles."""

    def __init__(self, post_copy: LatticeState, cm: CostModel, weights: Mapping[int, float] | None = None):
        self.state = post_copy.clone()
        self.cm = cm
        self.weights = weights
        self.frozen_size = dict(self.state.size)
        self.V: dict[int, set[int]] = {k: {k} for k in self.state.members}
        self.Pi: dict[int, int] = {k: k for k in self.state.members}

    def omega(self, node: int, r: int, V=None) -> int:
        V = self.V[node] if V is None else V
        return sum(self.frozen_size[f] for f in V if f >> r & 1)

    def _w(self, r: int) -> float:
        return 1.0 if self.weights is None else self.weights.get(r, 0.0)

    def H(self, size: int, V: set[int], pi: int) -> float:
        tot = 0.0
        for r in roles_of(pi):
            om = sum(self.frozen_size[f] for f in V if f >> r & 1)
            tot += self._w(r) * self.cm.index_cost_frac(size, om)
        return tot

    def union_size(self, a: int, b: int) -> int:
        st = self.state
        return sum(st.bsize[x] for x in st.members[a] | st.members[b])

    def merge_benefit(self, a: int, b: int) -> float:
        if a == b:
            raise ValueError("cannot merge a node with itself")
        st = self.state
        ha = self.H(st.size[a], self.V[a], self.Pi[a])
        hb = self.H(st.size[b], self.V[b], self.Pi[b])
        hab = self.H(self.union_size(a, b), self.V[a] | self.V[b], self.Pi[a] | self.Pi[b])
        return ha + hb - hab

    def merge(self, a: int, b: int) -> None:
        """a absorbs b."""
        self.state.merge(a, b)
        self.V[a] |= self.V.pop(b)
        self.Pi[a] |= self.Pi.pop(b)

    def candidates(self, a: int) -> list[int]:
        pa = popcount(a)
        out = []
        for k in self.state.members:
            if k == a or not k & a:
                continue
            # ancestor, descendant, or an overlapping node on the same layer
            if k & ~a == 0 or a & ~k == 0 or popcount(k) == pa:
                out.append(k)
        return sorted(out, key=rs_key)

    def inherited_plan(self, r: int) -> frozenset:
        return frozenset(k for k, pi in self.Pi.items() if pi >> r & 1)

    def inherited_avg_cost(self, weights: Mapping[int, float]) -> float:
        tot = 0.0
        for r, w in weights.items():
            for k in self.inherited_plan(r):
                tot += w * self.cm.index_cost_frac(self.state.size[k], self.omega(k, r))
        return tot

    def check(self) -> None:
        """Routing invariant and partition of the frozen nodes."""
        seen: list[int] = []
        for k, V in self.V.items():
            pi = 0
            for f in V:
                pi |= f
            assert pi == self.Pi[k], f"routed roles of {k} differ from constituent tags"
            seen.extend(V)
        assert sorted(seen) == sorted(self.frozen_size), "frozen nodes not partitioned"
        self.state.check()


def effveda_merge(ms: MergeState, threshold: int) -> int:
    st = ms.state
    order = sorted(st.members, key=lambda k: (-st.size[k], rs_key(k)))
    i = 0
    n_merges = 0
    while i < len(order):
        a = order[i]
        if a not in st.members or st.size[a] >= threshold:
            i += 1
            continue
        scored = sorted(((ms.merge_benefit(a, b), b) for b in ms.candidates(a)),
                        key=lambda x: (-x[0], rs_key(x[1])))
        applied = 0
        for v, b in scored:
            if b not in st.members:
                continue
            if applied == 0:
                if v <= 0:
                    break
            else:
                v = ms.merge_benefit(a, b)
                if v <= 0:
                    continue
            ms.merge(a, b)
            applied += 1
            n_merges += 1
            if st.size[a] >= threshold:
                break
        if applied == 0 or st.size[a] >= threshold:
            i += 1
    return n_merges


# run ----------------------------------------------------------------------------------------

@dataclass
class EffVedaTrace:
    copies: list[CopyCommit] = field(default_factory=list)
    post_copy: LatticeState | None = None
    merge: MergeState | None = None
    avg_post_copy: float = 0.0
    avg_inherited: float = 0.0
    avg_optimized: float = 0.0
    plans: dict = field(default_factory=dict)


def optimized_plans(ms: MergeState, cm: CostModel, weights: Mapping[int, float],
                    exact_limit: int = 24) -> tuple[dict[int, frozenset], float]:
    """Per role, cheapest of the inherited routing and the planner's cover."""
    st = ms.state
    plans = {}
    tot = 0.0
    for r in weights:
        blocks = sorted((b for b in st.bsize if b >> r & 1), key=rs_key)
        if not blocks:
            plans[r] = frozenset()
            continue
        cache: dict[int, float] = {}

        def wfun(k, r=r, cache=cache):
            if k not in cache:
                cache[k] = cm.index_cost(st.size[k], st.auth(k, r))
            return cache[k]
        cand = [ms.inherited_plan(r), plan_greedy(blocks, st.phi, wfun, size=lambda k: st.size[k], order=rs_key),
                plan_exact(blocks, st.phi, wfun, limit=exact_limit, order=rs_key)[0]]
        costs = [sum(wfun(k) for k in p) for p in cand]
        j = min(range(len(cand)), key=lambda i: (costs[i], i))
        plans[r] = cand[j]
        tot += weights[r] * costs[j]
    return plans, tot


def effveda_run(lex: ExclusiveLattice, cm: CostModel, beta: float, weights: Mapping[int, float] | None = None,
                refine: bool = True, exact_limit: int = 24) -> tuple[Layout, EffVedaTrace]:
    t0 = time.perf_counter()
    w = weights_or_uniform(weights, lex.n_roles)
    post, copies = effveda_copy(lex, cm, beta)
    ms = MergeState(post, cm, w)
    trace = EffVedaTrace(copies=copies, post_copy=post, merge=ms)
    trace.avg_post_copy = ms.inherited_avg_cost(w)
    effveda_merge(ms, cm.threshold)
    trace.avg_inherited = ms.inherited_avg_cost(w)
    plans, trace.avg_optimized = optimized_plans(ms, cm, w, exact_limit)
    trace.plans = plans
    t_opt = time.perf_counter() - t0
    lay = finalize(ms.state, plans, cm, storage_cap(beta, lex.n_vectors), refine=refine,
                   exact_limit=exact_limit,
                   meta={"optimizer": "effveda", "beta": beta, "threshold": cm.threshold,
                         "optimize_seconds": t_opt})
    lay.meta["partition_seconds"] = time.perf_counter() - t0
    return lay, trace
