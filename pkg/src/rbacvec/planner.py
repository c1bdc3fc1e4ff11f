"""Per-role covers: mandatory-node fixing, then greedy or exact weighted set cover.

The functions are generic over node keys. A role's problem is the list of blocks it
may read, the location map (block -> keys of nodes holding it) and a weight per key.
"""
from __future__ import annotations

import math
from typing import Callable, Hashable, Iterable, Mapping, Sequence

Key = Hashable


class CoverageError(RuntimeError):
    pass


def build_phi(members: Mapping[Key, Iterable[int]], blocks: Iterable[int] | None = None) -> dict[int, set]:
    """Inverted index block -> set of node keys. With ``blocks`` given, every block must be placed."""
    phi: dict[int, set] = {}
    for key, mem in members.items():
        for b in mem:
            phi.setdefault(b, set()).add(key)
    if blocks is not None:
        for b in blocks:
            if b not in phi:
                raise CoverageError(f"block {b} is not held by any node")
    return phi


def mandatory(blocks: Sequence[int], phi: Mapping[int, set]) -> set:
    out = set()
    for b in blocks:
        locs = phi.get(b)
        if not locs:
            raise CoverageError(f"block {b} has no location")
        if len(locs) == 1:
            out.update(locs)
    return out


def _pending(blocks, phi, chosen) -> list[int]:
    return [b for b in blocks if not (phi[b] & chosen)]


def plan_cost(plan: Iterable[Key], weight: Callable[[Key], float]) -> float:
    return sum(weight(k) for k in plan)


def _greedy_ratio(blocks, phi, weight, chosen, order):
    chosen = set(chosen)
    pending = set(_pending(blocks, phi, chosen))
    while pending:
        gain: dict = {}
        for b in pending:
            for k in phi[b]:
                gain[k] = gain.get(k, 0) + 1
        best = min(gain, key=lambda k: (weight(k) / gain[k], -gain[k], order(k)))
        chosen.add(best)
        pending = {b for b in pending if best not in phi[b]}
    return chosen


def _greedy_min_node(blocks, phi, size, chosen, order):
    chosen = set(chosen)
    for b in blocks:
        if phi[b] & chosen:
            continue
        chosen.add(min(phi[b], key=lambda k: (size(k), order(k))))
    return chosen


def plan_greedy(blocks: Sequence[int], phi: Mapping[int, set], weight: Callable[[Key], float],
                size: Callable[[Key], float] | None = None, order: Callable = lambda k: k) -> frozenset:
    """Mandatory nodes first, then the cheaper of a cost-per-covered-block greedy and a
    smallest-node-per-pending-block greedy."""
    if not blocks:
        return frozenset()
    base = mandatory(blocks, phi)
    a = _greedy_ratio(blocks, phi, weight, base, order)
    b = _greedy_min_node(blocks, phi, size or weight, base, order)
    return frozenset(b if plan_cost(b, weight) < plan_cost(a, weight) else a)


def plan_exact(blocks: Sequence[int], phi: Mapping[int, set], weight: Callable[[Key], float],
               limit: int = 24, order: Callable = lambda k: k) -> tuple[frozenset, bool]:
    """Minimum-weight cover containing all mandatory nodes, by branch and bound.

    Returns (plan, solved_exactly). Beyond ``limit`` candidate nodes the greedy plan is returned.
    """
    if not blocks:
        return frozenset(), True
    base = mandatory(blocks, phi)
    greedy = plan_greedy(blocks, phi, weight, order=order)
    pending = _pending(blocks, phi, base)
    if not pending:
        return frozenset(base), True
    cand = set().union(*(phi[b] for b in pending))
    if len(cand) > limit:
        return greedy, False
    w = {k: weight(k) for k in cand}
    opts = {b: sorted(phi[b], key=lambda k: (w[k], order(k))) for b in pending}
    best_cost = plan_cost(greedy, weight) - plan_cost(base, weight)
    best = [frozenset(greedy - base)]
    eps = 1e-12 * max(1.0, abs(best_cost))

    def rec(chosen: frozenset, cost: float, todo: list[int]) -> None:
        todo = [b for b in todo if not (phi[b] & chosen)]
        if not todo:
            if cost < best_cost_ref[0] - eps:
                best_cost_ref[0] = cost
                best[0] = chosen
            return
        lb = max(w[opts[b][0]] for b in todo)
        if cost + lb >= best_cost_ref[0] - eps:
            return
        pivot = min(todo, key=lambda b: (len(opts[b]), b))
        for k in opts[pivot]:
            rec(chosen | {k}, cost + w[k], todo)

    best_cost_ref = [best_cost]
    rec(frozenset(), 0.0, pending)
    return frozenset(base | best[0]), True


def log_weight(size: Callable[[Key], int]) -> Callable[[Key], float]:
    """The plain size objective: log2(|N| + 1) per selected node."""
    return lambda k: math.log2(size(k) + 1)
