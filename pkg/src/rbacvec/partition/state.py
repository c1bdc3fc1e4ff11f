"""Mutable lattice state shared by both optimizers."""
from __future__ import annotations

import math
from typing import Iterable, Mapping

from ..access import ExclusiveLattice, roles_of, rs_key


def storage_cap(beta: float, n: int) -> int:
    """Largest integer vector count allowed under amplification ``beta``."""
    if beta < 1:
        raise ValueError("storage amplification target must be >= 1")
    return int(math.floor(beta * n + 1e-9))


def uniform_weights(n_roles: int) -> dict[int, float]:
    return {r: 1.0 / n_roles for r in range(n_roles)} if n_roles else {}


class LatticeState:
    """Nodes keyed by role-set mask; each node holds a set of exclusive-block tags.

    ``phi`` is the inverted map block -> keys of nodes that hold it.
    """

    def __init__(self, lex: ExclusiveLattice):
        self.lex = lex
        self.bsize: dict[int, int] = dict(lex.sizes)
        self.members: dict[int, set[int]] = {t: {t} for t in lex.keys}
        self.size: dict[int, int] = dict(self.bsize)
        self.phi: dict[int, set[int]] = {t: {t} for t in lex.keys}

    def clone(self) -> "LatticeState":
        out = LatticeState.__new__(LatticeState)
        out.lex = self.lex
        out.bsize = self.bsize
        out.members = {k: set(v) for k, v in self.members.items()}
        out.size = dict(self.size)
        out.phi = {k: set(v) for k, v in self.phi.items()}
        return out

    @property
    def n_vectors(self) -> int:
        return self.lex.n_vectors

    @property
    def stored(self) -> int:
        return sum(self.size.values())

    def keys(self) -> list[int]:
        return sorted(self.members, key=rs_key)

    def __contains__(self, key: int) -> bool:
        return key in self.members

    def auth(self, key: int, r: int) -> int:
        return sum(self.bsize[b] for b in self.members[key] if b >> r & 1)

    def auth_roles(self, key: int, roles: int) -> int:
        return sum(self.bsize[b] for b in self.members[key] if b & roles)

    def readers(self, key: int) -> int:
        """Union of the role sets of all member blocks."""
        m = 0
        for b in self.members[key]:
            m |= b
        return m

    # mutations ---------------------------------------------------------------
    def add_block(self, key: int, b: int) -> bool:
        if b in self.members[key]:
            return False
        self.members[key].add(b)
        self.size[key] += self.bsize[b]
        self.phi[b].add(key)
        return True

    def remove_block(self, key: int, b: int) -> None:
        self.members[key].discard(b)
        self.size[key] -= self.bsize[b]
        self.phi[b].discard(key)

    def add_node(self, key: int, blocks: Iterable[int]) -> None:
        if key in self.members:
            raise KeyError(f"node {key} already present")
        self.members[key] = set()
        self.size[key] = 0
        for b in blocks:
            self.add_block(key, b)

    def delete(self, key: int) -> set[int]:
        mem = self.members.pop(key)
        del self.size[key]
        for b in mem:
            self.phi[b].discard(key)
        return mem

    def merge(self, into: int, src: int) -> tuple[set[int], set[int]]:
        """Absorb ``src`` into ``into``; returns (blocks newly added to ``into``, src members)."""
        if into == src:
            raise ValueError("cannot merge a node with itself")
        mem = self.delete(src)
        added = {b for b in mem if b not in self.members[into]}
        for b in added:
            self.add_block(into, b)
        return added, mem

    def unmerge(self, into: int, src: int, added: set[int], mem: set[int]) -> None:
        for b in added:
            self.remove_block(into, b)
        self.add_node(src, mem)

    # checks -------------------------------------------------------------------
    def check(self) -> None:
        for k, mem in self.members.items():
            assert self.size[k] == sum(self.bsize[b] for b in mem), f"size mismatch at {k}"
            for b in mem:
                assert k in self.phi[b]
        for b, locs in self.phi.items():
            assert locs, f"block {b} lost"
            for k in locs:
                assert b in self.members[k]

    def natural_plan(self, r: int) -> frozenset:
        """Nodes whose key contains r."""
        return frozenset(k for k in self.members if k >> r & 1)

    def covers(self, r: int, plan: Iterable[int]) -> bool:
        got: set[int] = set()
        for k in plan:
            got |= self.members[k]
        return all(b in got for b in self.bsize if b >> r & 1)


def role_list(n_roles: int) -> list[int]:
    return list(range(n_roles))


def weights_or_uniform(weights: Mapping[int, float] | None, n_roles: int) -> dict[int, float]:
    if weights is None:
        return uniform_weights(n_roles)
    return {r: float(weights.get(r, 0.0)) for r in range(n_roles)}


__all__ = ["LatticeState", "storage_cap", "uniform_weights", "weights_or_uniform", "roles_of"]
