"""Turn an optimized lattice into a layout: split small nodes, plan, refine impure probes."""
from __future__ import annotations

from typing import Mapping

from ..access import rs_key
from ..cost import CostModel
from ..layout import Layout, Unit, plan_units, unit_name
from ..planner import build_phi
from .state import LatticeState


def split_nodes(state: LatticeState, threshold: int) -> tuple[dict[str, Unit], dict[int, list[str]]]:
    """Nodes of at least ``threshold`` vectors become indexed units; smaller ones are split
    into one scanned unit per block (shared blocks are stored once)."""
    units: dict[str, Unit] = {}
    node_units: dict[int, list[str]] = {}
    for k in state.keys():
        mem = tuple(sorted(state.members[k], key=rs_key))
        if state.size[k] >= threshold:
            name = unit_name("idx", k)
            units[name] = Unit(name, mem, state.size[k], True)
            node_units[k] = [name]
        else:
            names = []
            for b in mem:
                name = unit_name("blk", b)
                units.setdefault(name, Unit(name, (b,), state.bsize[b], False))
                names.append(name)
            node_units[k] = names
    return units, node_units


def _adapted_plan(state, node_units, units, plan, r) -> list[str]:
    out: set[str] = set()
    for k in plan:
        for n in node_units[k]:
            u = units[n]
            if u.indexed or any(b >> r & 1 for b in u.blocks):
                out.add(n)
    return sorted(out)


def finalize(state: LatticeState, plans: Mapping[int, frozenset], cm: CostModel, cap: int,
             refine: bool = True, exact_limit: int = 24, meta: dict | None = None) -> Layout:
    lex = state.lex
    units, node_units = split_nodes(state, cm.threshold)
    bsz = state.bsize
    roles = range(lex.n_roles)
    cur: dict[int, tuple[str, ...]] = {}
    phi = build_phi({n: u.blocks for n, u in units.items()}, bsz)
    for r in roles:
        prior = _adapted_plan(state, node_units, units, plans.get(r, ()), r)
        cur[r] = plan_units(units, bsz, r, cm, prior=prior, exact_limit=exact_limit, phi=phi)
    n_refined = 0
    if refine:
        n_refined = refine_super_impure(units, cur, bsz, cm, cap)
    phi = build_phi({n: u.blocks for n, u in units.items()}, bsz)
    for r in roles:
        cur[r] = plan_units(units, bsz, r, cm, prior=cur[r], exact_limit=exact_limit, phi=phi)
    used = {n for p in cur.values() for n in p}
    units = {n: u for n, u in units.items() if n in used}
    m = dict(meta or {})
    m["refined"] = n_refined
    lay = Layout(units=units, plans=cur, block_sizes=dict(bsz), n_vectors=lex.n_vectors,
                 n_roles=lex.n_roles, meta=m)
    return lay


def _standalone(units: dict[str, Unit], b: int) -> str | None:
    """Name of a unit holding exactly block b, if any."""
    n = unit_name("blk", b)
    if n in units:
        return n
    for n, u in sorted(units.items()):
        if u.blocks == (b,):
            return n
    return None


def refine_super_impure(units: dict[str, Unit], plans: dict[int, tuple[str, ...]], bsz: Mapping[int, int],
                        cm: CostModel, cap: int) -> int:
    """Give roles standalone copies of the authorized parts of impure indices they probe,
    while spare budget lasts. Units no role probes any more are dropped and refund their size."""
    stored = sum(u.size for u in units.values())
    buf = cap - stored
    if buf <= 0:
        return 0
    ref: dict[str, int] = {}
    for p in plans.values():
        for n in p:
            ref[n] = ref.get(n, 0) + 1
    cands = []
    for r, p in plans.items():
        for n in p:
            u = units[n]
            if not u.indexed:
                continue
            pure_s = sum(bsz[b] for b in u.blocks if b >> r & 1)
            if 0 < pure_s < u.size:
                cands.append((-(u.size / pure_s), pure_s, r, n))
    cands.sort()
    copied: set[int] = set()
    done = 0

    def cost(n: str, r: int) -> float:
        u = units[n]
        return cm.unit_cost(u.size, sum(bsz[b] for b in u.blocks if b >> r & 1), u.indexed)

    for _, _, r, n in cands:
        if n not in units or n not in plans[r]:
            continue
        u = units[n]
        pure_blocks = [b for b in u.blocks if b >> r & 1]
        need = [b for b in pure_blocks if _standalone(units, b) is None and b not in copied]
        copy_s = sum(bsz[b] for b in need)
        if copy_s > buf:
            continue
        old = sum(cost(x, r) for x in plans[r])
        new_names = []
        new_cost = sum(cost(x, r) for x in plans[r] if x != n)
        for b in pure_blocks:
            s = _standalone(units, b)
            if s is None:
                new_cost += cm.unit_cost(bsz[b], bsz[b], bsz[b] >= cm.threshold)
            elif s not in plans[r]:
                new_cost += cost(s, r)
        if new_cost > old:
            continue
        for b in pure_blocks:
            s = _standalone(units, b)
            if s is None:
                s = unit_name("blk", b)
                units[s] = Unit(s, (b,), bsz[b], bsz[b] >= cm.threshold)
            new_names.append(s)
        copied.update(need)
        buf -= copy_s
        newp = set(plans[r]) - {n}
        for s in new_names:
            if s not in newp:
                newp.add(s)
                ref[s] = ref.get(s, 0) + 1
        plans[r] = tuple(sorted(newp))
        ref[n] -= 1
        if ref[n] == 0:
            buf += units[n].size
            del units[n]
        done += 1
    return done
