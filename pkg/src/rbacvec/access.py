"""Role sets, the CSR access matrix and the exclusive lattice.

A role set is a Python int bitmask: bit r set means role r is in the set.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable

import numpy as np

MAX_ROLES = 128


class PolicyError(ValueError):
    pass


# role-set helpers ------------------------------------------------------------

def mask_of(roles: Iterable[int]) -> int:
    m = 0
    for r in roles:
        m |= 1 << int(r)
    return m


@lru_cache(maxsize=1 << 16)
def _roles_of(mask: int) -> tuple[int, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def roles_of(mask: int) -> tuple[int, ...]:
    return _roles_of(int(mask))


def popcount(mask: int) -> int:
    return int(mask).bit_count()


def rs_key(mask: int) -> tuple:
    """Canonical total order on role sets: by size, then lexicographic role list."""
    return _rs_key(int(mask))


@lru_cache(maxsize=1 << 16)
def _rs_key(mask: int) -> tuple:
    return (popcount(mask), _roles_of(mask))


def fmt_roles(mask: int) -> str:
    return "{" + ",".join(str(r) for r in roles_of(mask)) + "}"


def parse_roles(s: str) -> int:
    s = s.strip().strip("{}")
    return mask_of(int(t) for t in s.replace("+", ",").split(",") if t.strip())


def is_subset(a: int, b: int) -> bool:
    return a & ~b == 0


def is_proper_subset(a: int, b: int) -> bool:
    return a != b and a & ~b == 0


# access matrix -----------------------------------------------------------------

_CSR_HDR = struct.Struct("<qq")


@dataclass(frozen=True)
class AccessMatrix:
    """Row i lists the (strictly increasing) roles that may read vector i."""

    indptr: np.ndarray
    indices: np.ndarray
    n_roles: int = 0

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int32)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        if indptr.ndim != 1 or indptr.size < 1 or indptr[0] != 0 or indptr[-1] != indices.size:
            raise PolicyError("malformed CSR index pointer")
        lens = np.diff(indptr)
        empty = np.flatnonzero(lens <= 0)
        if empty.size:
            raise PolicyError(f"vector {int(empty[0])} has no role")
        if indices.size and indices.min() < 0:
            raise PolicyError("negative role id")
        n_roles = self.n_roles or (int(indices.max()) + 1 if indices.size else 0)
        if indices.size and indices.max() >= n_roles:
            raise PolicyError(f"role id {int(indices.max())} >= n_roles {n_roles}")
        if n_roles > MAX_ROLES:
            raise PolicyError(f"at most {MAX_ROLES} roles supported")
        object.__setattr__(self, "n_roles", n_roles)
        # strictly increasing within each row
        if indices.size > 1:
            step = np.diff(indices.astype(np.int64))
            row_start = np.zeros(indices.size, dtype=bool)
            row_start[indptr[:-1]] = True
            bad = np.flatnonzero((step <= 0) & ~row_start[1:])
            if bad.size:
                row = int(np.searchsorted(indptr, bad[0] + 1, side="right") - 1)
                raise PolicyError(f"roles of vector {row} are not strictly increasing")

    @property
    def n_rows(self) -> int:
        return self.indptr.size - 1

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]: self.indptr[i + 1]]

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[int]], n_roles: int = 0) -> "AccessMatrix":
        indptr = [0]
        indices: list[int] = []
        for row in rows:
            rr = sorted(set(int(r) for r in row))
            indices.extend(rr)
            indptr.append(len(indices))
        return cls(np.array(indptr), np.array(indices, dtype=np.int32), n_roles)

    @classmethod
    def from_masks(cls, masks: Iterable[int], n_roles: int = 0) -> "AccessMatrix":
        return cls.from_rows((roles_of(m) for m in masks), n_roles)

    def signatures(self) -> tuple[np.ndarray, list[int]]:
        """Group rows by role set: returns (group index per row, role-set mask per group)."""
        words = max(1, (self.n_roles + 63) // 64)
        n = self.n_rows
        sig = np.zeros((n, words), dtype=np.uint64)
        if n:
            row_of = np.repeat(np.arange(n), np.diff(self.indptr))
            w = self.indices // 64
            bits = np.left_shift(np.uint64(1), (self.indices % 64).astype(np.uint64))
            for j in range(words):
                sel = w == j
                np.bitwise_or.at(sig[:, j], row_of[sel], bits[sel])
        uniq, inv = np.unique(sig, axis=0, return_inverse=True)
        masks = [sum(int(uniq[g, j]) << (64 * j) for j in range(words)) for g in range(uniq.shape[0])]
        return inv.reshape(-1), masks

    def masks(self) -> list[int]:
        inv, m = self.signatures()
        return [m[g] for g in inv]

    # persistence
    def save_csr(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as f:
            f.write(_CSR_HDR.pack(self.n_rows, self.indices.size))
            f.write(self.indptr.astype("<i8").tobytes())
            f.write(self.indices.astype("<i4").tobytes())

    @classmethod
    def load_csr(cls, path: str | os.PathLike, n_roles: int = 0) -> "AccessMatrix":
        raw = open(path, "rb").read()
        if len(raw) < _CSR_HDR.size:
            raise PolicyError("truncated access file")
        n_rows, nnz = _CSR_HDR.unpack_from(raw, 0)
        need = _CSR_HDR.size + 8 * (n_rows + 1) + 4 * nnz
        if len(raw) != need:
            raise PolicyError(f"access file size {len(raw)} != expected {need}")
        indptr = np.frombuffer(raw, "<i8", n_rows + 1, _CSR_HDR.size)
        indices = np.frombuffer(raw, "<i4", nnz, _CSR_HDR.size + 8 * (n_rows + 1))
        return cls(indptr.astype(np.int64), indices.astype(np.int32), n_roles)

    def save_jsonl(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            for i in range(self.n_rows):
                f.write(json.dumps({"id": i, "roles": self.row(i).tolist()}) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | os.PathLike, n_roles: int = 0) -> "AccessMatrix":
        recs = [json.loads(line) for line in open(path) if line.strip()]
        recs.sort(key=lambda d: d["id"])
        if [d["id"] for d in recs] != list(range(len(recs))):
            raise PolicyError("ids in access file must be dense 0..n-1")
        return cls.from_rows((d["roles"] for d in recs), n_roles)

    @classmethod
    def load(cls, path: str | os.PathLike, n_roles: int = 0) -> "AccessMatrix":
        p = str(path)
        if p.endswith(".jsonl") or p.endswith(".json"):
            return cls.load_jsonl(path, n_roles)
        return cls.load_csr(path, n_roles)


# exclusive lattice -------------------------------------------------------------

@dataclass(eq=False)
class ExclusiveLattice:
    """Exclusive blocks keyed by role set. Blocks partition the dataset ids."""

    blocks: dict[int, np.ndarray]
    n_vectors: int
    n_roles: int

    @cached_property
    def keys(self) -> list[int]:
        return sorted(self.blocks, key=rs_key)

    @cached_property
    def sizes(self) -> dict[int, int]:
        return {t: int(v.size) for t, v in self.blocks.items()}

    @cached_property
    def layers(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for t in self.keys:
            out.setdefault(popcount(t), []).append(t)
        return out

    @property
    def depth(self) -> int:
        return max(self.layers) if self.blocks else 0

    @cached_property
    def block_of(self) -> np.ndarray:
        """Block index (into ``keys``) of every vector id."""
        out = np.full(self.n_vectors, -1, dtype=np.int64)
        for j, t in enumerate(self.keys):
            out[self.blocks[t]] = j
        return out

    def _check_role(self, r: int) -> None:
        if not (0 <= r < self.n_roles):
            raise KeyError(f"unknown role {r}")

    def role_blocks(self, r: int) -> list[int]:
        self._check_role(r)
        return [t for t in self.keys if t >> r & 1]

    def authorized_ids(self, r: int) -> np.ndarray:
        bl = self.role_blocks(r)
        if not bl:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate([self.blocks[t] for t in bl]))

    def authorized_size(self, r: int) -> int:
        return sum(self.sizes[t] for t in self.role_blocks(r))

    def authorized_mask(self, roles: int) -> np.ndarray:
        """Boolean mask over all ids readable by at least one role in the set."""
        m = np.zeros(self.n_vectors, dtype=bool)
        for t, ids in self.blocks.items():
            if t & roles:
                m[ids] = True
        return m

    def size_of_roles(self, roles: int) -> int:
        return sum(s for t, s in self.sizes.items() if t & roles)

    @cached_property
    def parents(self) -> dict[int, set[int]]:
        """Direct parents: present proper subsets with no present set strictly between."""
        anc = self.ancestors
        out: dict[int, set[int]] = {}
        for t in self.keys:
            a = anc[t]
            out[t] = {p for p in a if not any(is_proper_subset(p, x) for x in a)}
        return out

    @cached_property
    def children(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {t: set() for t in self.keys}
        for t, ps in self.parents.items():
            for p in ps:
                out[p].add(t)
        return out

    @cached_property
    def ancestors(self) -> dict[int, set[int]]:
        keys = self.keys
        return {t: {a for a in keys if is_proper_subset(a, t)} for t in keys}

    @cached_property
    def descendants(self) -> dict[int, set[int]]:
        out: dict[int, set[int]] = {t: set() for t in self.keys}
        for t, a in self.ancestors.items():
            for x in a:
                out[x].add(t)
        return out

    @cached_property
    def siblings(self) -> dict[int, set[int]]:
        out = {}
        for t in self.keys:
            pc = popcount(t)
            out[t] = {s for s in self.layers[pc] if s != t and s & t}
        return out


def build_exclusive_lattice(am: AccessMatrix) -> ExclusiveLattice:
    """Group vectors by their exact role set."""
    inv, masks = am.signatures()
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(masks) + 1))
    blocks = {masks[g]: np.sort(order[bounds[g]: bounds[g + 1]]).astype(np.int64) for g in range(len(masks))}
    return ExclusiveLattice(blocks, am.n_rows, am.n_roles)


def build_exclusive_lattice_layered(am: AccessMatrix) -> ExclusiveLattice:
    """Reference construction: enumerate role-set data areas layer by layer, then subtract
    each area's one-role-larger children. Exponential in tag width; for testing."""
    n = am.n_rows
    single: dict[int, set[int]] = {}
    for i in range(n):
        for r in am.row(i).tolist():
            single.setdefault(r, set()).add(i)
    areas: dict[int, set[int]] = {1 << r: v for r, v in single.items()}
    frontier = dict(areas)
    while frontier:
        nxt: dict[int, set[int]] = {}
        for p, ids in frontier.items():
            for r, sids in single.items():
                if p >> r & 1:
                    continue
                q = p | (1 << r)
                if q in nxt or q in areas:
                    continue
                d = ids & sids
                if d:
                    nxt[q] = d
        areas.update(nxt)
        frontier = nxt
    blocks = {}
    for t, ids in areas.items():
        ex = set(ids)
        for r in single:
            if not t >> r & 1 and (t | 1 << r) in areas:
                ex -= areas[t | 1 << r]
        if ex:
            blocks[t] = np.array(sorted(ex), dtype=np.int64)
    return ExclusiveLattice(blocks, n, am.n_roles)


def relations(lat: ExclusiveLattice) -> dict[str, dict[int, set[int]]]:
    return {
        "parents": lat.parents,
        "ancestors": lat.ancestors,
        "descendants": lat.descendants,
        "siblings": lat.siblings,
    }


def authorized_ids(lat: ExclusiveLattice, r: int) -> np.ndarray:
    return lat.authorized_ids(r)
