"""Latency cost model: C(n, efs) = a*log2(n+1) + b*efs + c, impurity inflation, calibration."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Theta:
    a: float = 0.0821
    b: float = 0.1159
    c: float = 2.3110
    r2_size: float | None = None
    r2_efs: float | None = None
    efs_form: str = "linear"

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.c < 0:
            raise ValueError("cost coefficients must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Theta":
        keys = {"a", "b", "c", "r2_size", "r2_efs", "efs_form"}
        return cls(**{k: v for k, v in d.items() if k in keys})


# coefficients reported for a 128-d, M=16 reference host; used when no calibration is given
REFERENCE_THETA = Theta(0.0821, 0.1159, 2.3110)


def efs_term(theta: Theta, efs: float) -> float:
    if theta.efs_form == "loglinear":
        return efs * math.log2(efs) if efs > 1 else 0.0
    return efs


def c_theta(theta: Theta, n: float, efs: float) -> float:
    if n < 1:
        raise ValueError("index size must be >= 1")
    return theta.a * math.log2(n + 1) + theta.b * efs_term(theta, efs) + theta.c


def inflation(n: int, auth: int) -> int | None:
    """ceil(n / auth); None stands for an infinite factor (nothing authorized)."""
    if auth <= 0:
        return None
    return -(-int(n) // int(auth))


def inflated_efs(efs: int, lam: float) -> int:
    return int(math.ceil(lam * efs))


def cost_hnsw(theta: Theta, n: int, efs: int, pure: bool, lam: float | None = None) -> float:
    if pure:
        return c_theta(theta, n, efs)
    if lam is None:
        raise ValueError("impure index needs an inflation factor")
    return c_theta(theta, n, inflated_efs(efs, lam))


def full_scan_regime(n: int, efs: int, lam: float) -> bool:
    return inflated_efs(efs, lam) >= n


PlanEntry = tuple  # (size, pure, lam)


def avg_cost(theta: Theta, plans: Mapping[int, Sequence[PlanEntry]], weights: Mapping[int, float] | None,
             efs: int) -> float:
    """Weighted sum over roles of the summed index costs; uniform 1/|R| weights when None."""
    if weights is None:
        weights = {r: 1.0 / len(plans) for r in plans} if plans else {}
    total = 0.0
    for r, w in weights.items():
        total += w * sum(cost_hnsw(theta, n, efs, pure, lam) for n, pure, lam in plans.get(r, ()))
    return total


@dataclass(frozen=True)
class CostModel:
    """Cost of probing one unit (HNSW index or linearly scanned block) for one role."""

    theta: Theta = REFERENCE_THETA
    efs: int = 100
    threshold: int = 1000
    scan_per_vector: float | None = None
    ceil_lambda: bool = True

    @property
    def scan_coef(self) -> float:
        if self.scan_per_vector is not None:
            return self.scan_per_vector
        # the threshold is the size where a scan and an index probe cost the same
        return c_theta(self.theta, self.threshold, self.efs) / self.threshold

    def index_cost(self, n: int, auth: int) -> float:
        if auth <= 0:
            return math.inf
        if auth >= n:
            return c_theta(self.theta, n, self.efs)
        if not self.ceil_lambda:
            return self.index_cost_frac(n, auth)
        return c_theta(self.theta, n, inflated_efs(self.efs, inflation(n, auth)))

    def index_cost_frac(self, n: int, auth: float) -> float:
        """Index cost with a fractional inflation factor n/auth (no ceiling)."""
        if auth <= 0:
            return math.inf
        t = self.theta
        return t.a * math.log2(n + 1) + t.b * efs_term(t, (n / auth) * self.efs) + t.c

    def scan_cost(self, n: int) -> float:
        return self.scan_coef * n

    def unit_cost(self, n: int, auth: int, indexed: bool) -> float:
        if auth <= 0:
            return math.inf
        return self.index_cost(n, auth) if indexed else self.scan_cost(n)

    def with_(self, **kw) -> "CostModel":
        return replace(self, **kw)


# calibration -------------------------------------------------------------------

class CalibrationError(RuntimeError):
    def __init__(self, msg: str, samples: dict):
        super().__init__(msg)
        self.samples = samples


def _r2(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - yhat) ** 2))
    if ss_tot <= 1e-12 * max(1.0, float(np.sum(y ** 2))):
        return 1.0 if ss_res <= 1e-12 * max(1.0, float(np.sum(y ** 2))) else 0.0
    return 1.0 - ss_res / ss_tot


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(icpt), _r2(y, A @ np.array([slope, icpt]))


@dataclass
class CalibrationReport:
    theta: Theta
    n0: int
    r2_efs_linear: float
    r2_efs_loglinear: float
    size_samples: list = field(default_factory=list)
    efs_samples: list = field(default_factory=list)

    def to_json(self) -> str:
        t = self.theta
        return json.dumps({
            "a": t.a, "b": t.b, "c": t.c, "r2_size": t.r2_size, "r2_efs": t.r2_efs,
            "efs_form": t.efs_form, "r2_efs_linear": self.r2_efs_linear,
            "r2_efs_loglinear": self.r2_efs_loglinear, "n0": self.n0,
            "samples": [{"sweep": "size", "n": n, "efs": 1, "latency": y} for n, y in self.size_samples]
            + [{"sweep": "efs", "n": self.n0, "efs": e, "latency": y} for e, y in self.efs_samples],
        }, indent=2)


def fit_theta(size_samples: Sequence[tuple[int, float]], efs_samples: Sequence[tuple[int, float]],
              n0: int, min_r2: float = 0.9) -> CalibrationReport:
    """Two one-dimensional fits combined into (a, b, c).

    size sweep at efs=1:   t = a*log2(n+1) + c1
    efs sweep at n0:       t = b*efs + c2   or   t = b*efs*log2(efs) + c2 (higher R^2 wins, ties linear)
    c = mean(c1 - b, c2 - a*log2(n0+1)), clipped at 0.
    """
    sx = np.array([math.log2(n + 1) for n, _ in size_samples], dtype=float)
    sy = np.array([y for _, y in size_samples], dtype=float)
    ex = np.array([e for e, _ in efs_samples], dtype=float)
    ey = np.array([y for _, y in efs_samples], dtype=float)
    a, c1, r2_size = _line_fit(sx, sy)
    b_lin, c2_lin, r2_lin = _line_fit(ex, ey)
    b_log, c2_log, r2_log = _line_fit(ex * np.log2(np.maximum(ex, 1.0)), ey)
    samples = {"size": list(map(list, size_samples)), "efs": list(map(list, efs_samples))}
    if r2_lin < min_r2 and r2_log < min_r2:
        raise CalibrationError(f"efs sweep fits too poorly (R2 linear {r2_lin:.3f}, "
                               f"log-linear {r2_log:.3f})", samples)
    if r2_lin >= r2_log:
        b, c2, form, r2_efs = b_lin, c2_lin, "linear", r2_lin
        c1p = c1 - b * 1.0
    else:
        b, c2, form, r2_efs = b_log, c2_log, "loglinear", r2_log
        c1p = c1  # efs*log2(efs) vanishes at efs=1
    a = max(a, 0.0)
    b = max(b, 0.0)
    c2p = c2 - a * math.log2(n0 + 1)
    c = max(0.5 * (c1p + c2p), 0.0)
    theta = Theta(a, b, c, r2_size, r2_efs, form)
    return CalibrationReport(theta, n0, r2_lin, r2_log, list(size_samples), list(efs_samples))


def calibrate(runner: "SweepRunner", sizes: Sequence[int], efs_grid: Sequence[int], n0: int,
              min_r2: float = 0.9) -> CalibrationReport:
    size_samples = [(n, runner.latency(n, 1)) for n in sizes]
    efs_samples = [(e, runner.latency(n0, e)) for e in efs_grid]
    return fit_theta(size_samples, efs_samples, n0, min_r2)


class SweepRunner:
    """Anything that can report a per-query latency for an index size and beam width."""

    def latency(self, n: int, efs: int) -> float:  # pragma: no cover - interface
        raise NotImplementedError


class FunctionRunner(SweepRunner):
    def __init__(self, fn: Callable[[int, int], float]):
        self.fn = fn

    def latency(self, n: int, efs: int) -> float:
        return float(self.fn(n, efs))


class HostRunner(SweepRunner):
    """Times real HNSW searches (microseconds per query, median over repeats)."""

    def __init__(self, dim: int = 16, M: int = 16, efc: int = 100, n_queries: int = 200,
                 repeats: int = 5, seed: int = 0):
        self.dim, self.M, self.efc = dim, M, efc
        self.n_queries, self.repeats, self.seed = n_queries, repeats, seed
        self._cache: dict[int, object] = {}
        self._data = None

    def _vectors(self, n: int) -> np.ndarray:
        from .vectors import gen_gaussian_mixture
        if self._data is None or self._data.shape[0] < n:
            self._data = gen_gaussian_mixture(max(n, 1024), self.dim, seed=self.seed).vectors
        return self._data[:n]

    def index(self, n: int):
        from .hnsw import HnswIndex, HnswParams
        if n not in self._cache:
            self._cache[n] = HnswIndex.build(self._vectors(n), params=HnswParams(self.M, self.efc, self.seed))
        return self._cache[n]

    def queries(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed + 1)
        base = self._vectors(1024)
        pick = rng.integers(0, base.shape[0], self.n_queries)
        return (base[pick] + 0.1 * rng.standard_normal((self.n_queries, self.dim))).astype(np.float32)

    def latency(self, n: int, efs: int) -> float:
        idx = self.index(n)
        qs = self.queries()
        k = min(1 if efs <= 1 else 10, efs)
        idx.search_raw(qs[0], k, efs)  # warm-up
        runs = []
        for _ in range(self.repeats):
            t0 = time.perf_counter()
            for q in qs:
                idx.search_raw(q, k, efs)
            runs.append((time.perf_counter() - t0) / len(qs) * 1e6)
        return float(np.median(runs))

    def scan_latency(self, n: int) -> float:
        from ._kernels import dist_rows
        X = np.ascontiguousarray(self._vectors(n))
        rows = np.arange(n, dtype=np.int64)
        qs = self.queries()
        runs = []
        for _ in range(self.repeats):
            t0 = time.perf_counter()
            for q in qs:
                d = dist_rows(X, rows, q)
                np.argpartition(d, min(9, n - 1))
            runs.append((time.perf_counter() - t0) / len(qs) * 1e6)
        return float(np.median(runs))


def fit_scan_coefficient(runner: HostRunner, sizes: Sequence[int]) -> float:
    x = np.array(sizes, dtype=float)
    y = np.array([runner.scan_latency(n) for n in sizes])
    slope, _, _ = _line_fit(x, y)
    return max(slope, 0.0)


def find_crossover(runner: HostRunner, sizes: Sequence[int], efs: int = 100) -> int:
    """Smallest sampled size from which an HNSW probe beats a linear scan at every larger
    sampled size (largest size if the index never wins there)."""
    ns = sorted(sizes)
    wins = [runner.latency(n, min(efs, n)) < runner.scan_latency(n) for n in ns]
    best = ns[-1]
    for n, w in zip(reversed(ns), reversed(wins)):
        if not w:
            break
        best = n
    return int(best)
