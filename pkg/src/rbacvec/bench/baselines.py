"""Reference layouts: one shared index over everything, and one pure index per role."""
from __future__ import annotations

from ..access import ExclusiveLattice, rs_key
from ..cost import CostModel
from ..layout import Layout, Unit

GLOBAL_UNIT = "idx:global"


def global_layout(lex: ExclusiveLattice) -> Layout:
    blocks = tuple(sorted(lex.keys, key=rs_key))
    u = Unit(GLOBAL_UNIT, blocks, lex.n_vectors, True)
    plans = {r: (GLOBAL_UNIT,) for r in range(lex.n_roles) if lex.role_blocks(r)}
    return Layout({GLOBAL_UNIT: u}, plans, dict(lex.sizes), lex.n_vectors, lex.n_roles,
                  meta={"optimizer": "global", "global_unit": GLOBAL_UNIT})


def oracle_layout(lex: ExclusiveLattice, cm: CostModel) -> Layout:
    """A unit over exactly each role's readable data; units below the threshold are scanned."""
    units, plans = {}, {}
    for r in range(lex.n_roles):
        bl = lex.role_blocks(r)
        if not bl:
            continue
        name = f"role:{r}"
        n = sum(lex.sizes[b] for b in bl)
        units[name] = Unit(name, tuple(bl), n, n >= cm.threshold)
        plans[r] = (name,)
    return Layout(units, plans, dict(lex.sizes), lex.n_vectors, lex.n_roles, meta={"optimizer": "oracle"})


def oracle_query_cost(lex: ExclusiveLattice, cm: CostModel, roles: int) -> float:
    """Cost of a hypothetical pure unit over exactly the data a role set can read."""
    n = lex.size_of_roles(roles)
    if n == 0:
        return 0.0
    return cm.index_cost(n, n) if n >= cm.threshold else cm.scan_cost(n)


def build_baselines(lex: ExclusiveLattice, cm: CostModel) -> dict[str, Layout]:
    return {"global": global_layout(lex), "oracle": oracle_layout(lex, cm)}
