"""Materialization plan: storage units (indexed or scanned), per-role plans, manifest I/O."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .access import ExclusiveLattice, fmt_roles, mask_of, popcount, roles_of, rs_key
from .cost import CostModel, inflation
from .planner import build_phi, plan_cost, plan_exact

MANIFEST_VERSION = 1
GLOBAL_ROUTE_FRACTION = 0.8


@dataclass(frozen=True)
class Unit:
    name: str
    blocks: tuple[int, ...]
    size: int
    indexed: bool


@dataclass
class Layout:
    units: dict[str, Unit]
    plans: dict[int, tuple[str, ...]]
    block_sizes: dict[int, int]
    n_vectors: int
    n_roles: int
    meta: dict = field(default_factory=dict)

    # accounting ------------------------------------------------------------------
    @property
    def stored(self) -> int:
        return sum(u.size for u in self.units.values())

    @property
    def sa(self) -> float:
        return self.stored / self.n_vectors

    @property
    def n_indexed(self) -> int:
        return sum(1 for u in self.units.values() if u.indexed)

    def auth(self, name: str, roles: int) -> int:
        return sum(self.block_sizes[b] for b in self.units[name].blocks if b & roles)

    def readable_size(self, roles: int) -> int:
        return sum(s for b, s in self.block_sizes.items() if b & roles)

    def lam(self, name: str, roles: int) -> int | None:
        return inflation(self.units[name].size, self.auth(name, roles))

    def is_pure(self, name: str, roles: int) -> bool:
        return all(b & roles for b in self.units[name].blocks)

    def unit_cost(self, cm: CostModel, name: str, roles: int) -> float:
        u = self.units[name]
        return cm.unit_cost(u.size, self.auth(name, roles), u.indexed)

    # plans -------------------------------------------------------------------------
    def plan_for(self, roles: int) -> tuple[str, ...]:
        names: set[str] = set()
        for r in roles_of(roles):
            if r >= self.n_roles:
                raise KeyError(f"unknown role {r}")
            names.update(self.plans.get(r, ()))
        return tuple(sorted(names))

    def routes_global(self, roles: int) -> bool:
        return self.meta.get("global_unit") is not None and \
            self.readable_size(roles) > GLOBAL_ROUTE_FRACTION * self.n_vectors

    def query_cost(self, cm: CostModel, roles: int) -> float:
        g = self.meta.get("global_unit")
        if popcount(roles) > 1 and g is not None and self.routes_global(roles):
            return self.unit_cost(cm, g, roles)
        return sum(self.unit_cost(cm, n, roles) for n in self.plan_for(roles))

    def role_cost(self, cm: CostModel, r: int) -> float:
        return sum(self.unit_cost(cm, n, 1 << r) for n in self.plans.get(r, ()))

    def avg_cost(self, cm: CostModel, weights: Mapping[int, float]) -> float:
        return sum(w * self.query_cost(cm, q) for q, w in weights.items())

    def touched(self, roles: int) -> tuple[int, int]:
        """(authorized vectors, total vectors) inside the units probed by a query."""
        names = self.plan_for(roles)
        return sum(self.auth(n, roles) for n in names), sum(self.units[n].size for n in names)

    # validation --------------------------------------------------------------------
    def check(self, lex: ExclusiveLattice | None = None) -> None:
        held: set[int] = set()
        for u in self.units.values():
            assert u.size == sum(self.block_sizes[b] for b in u.blocks), f"size mismatch in {u.name}"
            held.update(u.blocks)
        assert held == set(self.block_sizes), "some block is not stored"
        for r in range(self.n_roles):
            got: set[int] = set()
            for n in self.plans.get(r, ()):
                got.update(self.units[n].blocks)
            need = {b for b in self.block_sizes if b >> r & 1}
            assert need <= got, f"plan of role {r} misses blocks"
        if lex is not None:
            assert self.block_sizes == lex.sizes
            assert self.n_vectors == lex.n_vectors

    # manifest --------------------------------------------------------------------------
    def to_manifest(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "n_vectors": self.n_vectors,
            "n_roles": self.n_roles,
            "stored": self.stored,
            "sa": self.sa,
            "meta": self.meta,
            "blocks": [{"tag": list(roles_of(b)), "size": s}
                       for b, s in sorted(self.block_sizes.items(), key=lambda kv: rs_key(kv[0]))],
            "units": [{"name": u.name, "blocks": [list(roles_of(b)) for b in u.blocks], "size": u.size,
                       "kind": "indexed" if u.indexed else "leftover"}
                      for u in sorted(self.units.values(), key=lambda u: u.name)],
            "plans": {str(r): list(p) for r, p in sorted(self.plans.items())},
        }

    @classmethod
    def from_manifest(cls, d: Mapping) -> "Layout":
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('version')}")
        units = {}
        for u in d["units"]:
            units[u["name"]] = Unit(u["name"], tuple(mask_of(t) for t in u["blocks"]), int(u["size"]),
                                    u["kind"] == "indexed")
        return cls(units=units,
                   plans={int(r): tuple(p) for r, p in d["plans"].items()},
                   block_sizes={mask_of(b["tag"]): int(b["size"]) for b in d["blocks"]},
                   n_vectors=int(d["n_vectors"]), n_roles=int(d["n_roles"]), meta=dict(d.get("meta", {})))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            json.dump(self.to_manifest(), f, indent=1)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Layout":
        with open(path) as f:
            return cls.from_manifest(json.load(f))


def unit_name(prefix: str, tag: int) -> str:
    return f"{prefix}:{fmt_roles(tag)}"


def plan_units(units: Mapping[str, Unit], block_sizes: Mapping[int, int], r: int, cm: CostModel,
               prior: Iterable[str] | None = None, exact_limit: int = 24,
               phi: Mapping[int, set] | None = None) -> tuple[str, ...]:
    """Cheapest cover for role r over the given units; never worse than ``prior``.
    ``phi`` (block -> unit names) may be passed in when planning many roles over the same units."""
    blocks = sorted((b for b in block_sizes if b >> r & 1), key=rs_key)
    if not blocks:
        return ()
    if phi is None:
        phi = build_phi({n: u.blocks for n, u in units.items()}, blocks)
    cache: dict[str, float] = {}

    def weight(n: str) -> float:
        if n not in cache:
            u = units[n]
            cache[n] = cm.unit_cost(u.size, sum(block_sizes[b] for b in u.blocks if b >> r & 1), u.indexed)
        return cache[n]

    best, _ = plan_exact(blocks, phi, weight, limit=exact_limit)
    if prior is not None:
        prior = frozenset(prior)
        got: set[int] = set()
        for n in prior:
            got.update(units[n].blocks)
        if all(b in got for b in blocks) and plan_cost(prior, weight) <= plan_cost(best, weight):
            best = prior
    return tuple(sorted(best))
