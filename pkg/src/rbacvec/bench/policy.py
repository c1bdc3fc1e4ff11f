"""Synthetic access policies: departments with shifted-Zipf sizes, roles granted sets of departments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..access import AccessMatrix


@dataclass(frozen=True)
class PolicySpec:
    n_roles: int = 16
    n_departments: int = 120
    block_s: float = 1.0          # shift of the department-size Zipf
    block_alpha: float = 1.5      # skew of the department-size Zipf
    perm_s: float = 2.0           # shift of the department-popularity Zipf
    perm_alpha: float = 0.8       # skew of the department-popularity Zipf
    depts_per_role: int = 6      # mean departments granted to a role
    seed: int = 0

    def __post_init__(self):
        if self.block_alpha <= 0 or self.perm_alpha <= 0:
            raise ValueError("Zipf exponents must be > 0")
        if self.n_roles < 1 or self.n_departments < 1:
            raise ValueError("need at least one role and one department")


def zipf_weights(n: int, s: float, alpha: float) -> np.ndarray:
    """Relative frequencies proportional to (i + s)^-alpha, i = 1..n."""
    w = (np.arange(1, n + 1, dtype=float) + s) ** (-alpha)
    return w / w.sum()


def zipf_sizes(n: int, total: int, s: float, alpha: float) -> np.ndarray:
    """Integer sizes summing to ``total`` (largest-remainder rounding of the Zipf shares)."""
    if total < 0:
        raise ValueError("total must be >= 0")
    share = zipf_weights(n, s, alpha) * total
    out = np.floor(share).astype(np.int64)
    rest = total - int(out.sum())
    if rest:
        out[np.argsort(-(share - out), kind="stable")[:rest]] += 1
    return out


@dataclass
class Policy:
    access: AccessMatrix
    department_of: np.ndarray       # department id of every vector
    grants: list[np.ndarray]        # departments granted to each role
    n_permissions: int              # distinct role sets realized over the data


def gen_policy(spec: PolicySpec, n_vectors: int) -> Policy:
    """Deterministic under ``spec.seed``. Every vector ends up readable by at least one role."""
    rng = np.random.default_rng(spec.seed)
    D, R = spec.n_departments, spec.n_roles
    sizes = zipf_sizes(D, n_vectors, spec.block_s, spec.block_alpha)
    dept = np.repeat(np.arange(D), sizes)
    dept = dept[rng.permutation(n_vectors)]
    pop = zipf_weights(D, spec.perm_s, spec.perm_alpha)
    grants = []
    dept_roles = np.zeros(D, dtype=object)
    dept_roles[:] = [0] * D
    for r in range(R):
        g = int(np.clip(rng.poisson(spec.depts_per_role), 1, D))
        chosen = np.sort(rng.choice(D, size=g, replace=False, p=pop))
        grants.append(chosen)
        for d in chosen.tolist():
            dept_roles[d] |= 1 << r
    for d in range(D):
        if dept_roles[d] == 0:
            r = int(rng.integers(R))
            dept_roles[d] = 1 << r
            grants[r] = np.sort(np.append(grants[r], d))
    masks = [int(dept_roles[d]) for d in dept.tolist()]
    am = AccessMatrix.from_masks(masks, R)
    n_perm = len({int(dept_roles[d]) for d in np.unique(dept).tolist()})
    return Policy(am, dept, grants, n_perm)
