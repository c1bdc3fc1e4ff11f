"""Query workloads: single- or multi-role, uniform or Zipf-weighted roles, with a sensitivity knob."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..access import ExclusiveLattice, roles_of
from ..vectors import Dataset
from .policy import zipf_weights

KINDS = ("uniform-single", "weighted-single", "uniform-multi", "weighted-multi")


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "uniform-single"
    n_queries: int = 100
    sensitivity: float = 1.0      # share of queries whose base vector is authorized for the asker
    k: int = 10
    noise: float = 0.05
    zipf_alpha: float = 1.0
    max_roles: int = 3            # largest role set in multi-role workloads
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if not 0.0 <= self.sensitivity <= 1.0:
            raise ValueError("sensitivity must lie in [0, 1]")
        if self.k < 1 or self.n_queries < 0:
            raise ValueError("bad k or query count")


@dataclass
class Workload:
    spec: WorkloadSpec
    queries: np.ndarray          # (n_queries, dim) float32
    roles: np.ndarray            # role-set bitmask per query (object array of ints)
    weights: dict[int, float]    # role-set mask -> probability, used for modeled costs
    role_weights: dict[int, float]   # single role -> marginal probability, fed to the optimizers

    def __len__(self) -> int:
        return self.queries.shape[0]


def role_distribution(spec: WorkloadSpec, n_roles: int) -> np.ndarray:
    if spec.kind.startswith("uniform"):
        return np.full(n_roles, 1.0 / n_roles)
    rng = np.random.default_rng(spec.seed + 7919)
    p = zipf_weights(n_roles, 0.0, spec.zipf_alpha)
    return p[rng.permutation(n_roles)]


def gen_workload(spec: WorkloadSpec, ds: Dataset, lex: ExclusiveLattice) -> Workload:
    rng = np.random.default_rng(spec.seed)
    R = lex.n_roles
    p = role_distribution(spec, R)
    multi = spec.kind.endswith("multi")
    roles = []
    for _ in range(spec.n_queries):
        if multi:
            m = int(rng.integers(2, min(spec.max_roles, R) + 1)) if R > 1 else 1
            pick = rng.choice(R, size=m, replace=False, p=p)
            roles.append(sum(1 << int(r) for r in pick))
        else:
            roles.append(1 << int(rng.choice(R, p=p)))
    qs = np.empty((spec.n_queries, ds.dim), dtype=np.float32)
    masks: dict[int, np.ndarray] = {}
    for i, tau in enumerate(roles):
        if tau not in masks:
            masks[tau] = lex.authorized_mask(tau)
        ok = masks[tau]
        pool = ok if rng.random() < spec.sensitivity else ~ok
        ids = np.flatnonzero(pool)
        if ids.size == 0:
            ids = np.arange(ds.vectors.shape[0])
        base = ds.vectors[int(ids[rng.integers(ids.size)])]
        qs[i] = base + spec.noise * rng.standard_normal(ds.dim).astype(np.float32)
    if multi:
        cnt = Counter(roles)
        weights = {t: c / len(roles) for t, c in sorted(cnt.items())} if roles else {}
        marg = np.zeros(R)
        for t, w in weights.items():
            for r in roles_of(t):
                marg[r] += w
        marg = marg / marg.sum() if marg.sum() > 0 else np.full(R, 1.0 / R)
    else:
        weights = {1 << r: float(p[r]) for r in range(R)}
        marg = p
    role_w = {r: float(marg[r]) for r in range(R)}
    return Workload(spec, qs, np.array(roles, dtype=object), weights, role_w)
