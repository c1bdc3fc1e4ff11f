"""Metric suite: storage and query amplification, recall, throughput, purity, coordination stats."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from ..access import ExclusiveLattice, popcount
from ..cost import CostModel
from ..layout import Layout
from ..query import ExecStats, MaterializedLayout, execute, summarize
from ..vectors import Dataset, Neighbor, brute_force_topk
from .baselines import oracle_query_cost
from .workload import Workload


def modeled_cost(layout: Layout, cm: CostModel, weights: Mapping[int, float]) -> float:
    return layout.avg_cost(cm, weights)


def oracle_cost(lex: ExclusiveLattice, cm: CostModel, weights: Mapping[int, float]) -> float:
    return sum(w * oracle_query_cost(lex, cm, t) for t, w in weights.items())


def modeled_qa(layout: Layout, lex: ExclusiveLattice, cm: CostModel, weights: Mapping[int, float]) -> float:
    ref = oracle_cost(lex, cm, weights)
    return modeled_cost(layout, cm, weights) / ref if ref > 0 else 1.0


def purity(layout: Layout, roles: int) -> float:
    """Authorized share of the data inside the probed units."""
    if popcount(roles) > 1 and layout.routes_global(roles):
        return layout.readable_size(roles) / layout.n_vectors
    a, t = layout.touched(roles)
    return a / t if t else 1.0


def ground_truth(ds: Dataset, lex: ExclusiveLattice, wl: Workload, k: int) -> list[list[Neighbor]]:
    masks: dict[int, np.ndarray] = {}
    out = []
    for q, t in zip(wl.queries, wl.roles):
        t = int(t)
        if t not in masks:
            masks[t] = lex.authorized_mask(t)
        out.append(brute_force_topk(ds, q, k, masks[t]))
    return out


def recall_at_k(found: Sequence[Neighbor], truth: Sequence[Neighbor]) -> float:
    if not truth:
        return 1.0
    return len({n.id for n in found} & {n.id for n in truth}) / len(truth)


def violations(ml: MaterializedLayout, roles: int, found: Sequence[Neighbor]) -> int:
    ok = ml.allowed(roles)
    return sum(1 for n in found if not ok[n.id])


@dataclass
class MetricsReport:
    sa: float
    qa_modeled: float
    qa_wall: float | None
    recall: float
    qps: float
    mean_latency_us: float
    purity: float
    indices_per_query: float
    phase2_skip_rate: float
    efs_savings: float
    violations: int
    n_indexed: int
    n_units: int

    def row(self) -> dict:
        return asdict(self)


def run_timed(ml: MaterializedLayout, wl: Workload, k: int, efs: int, strategy: str,
              workers: int = 1) -> tuple[list, list[ExecStats], float]:
    """Results, per-query stats and elapsed seconds for the whole batch."""
    n = len(wl)
    stats = [ExecStats() for _ in range(n)]

    def one(i: int):
        return execute(ml, wl.queries[i], int(wl.roles[i]), k, efs, strategy, stats[i])

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            res = list(pool.map(one, range(n)))
    else:
        res = [one(i) for i in range(n)]
    return res, stats, time.perf_counter() - t0


def interleaved_qps(mls: Sequence[MaterializedLayout], wl: Workload, efs: int = 100,
                    strategy: str = "coordinated", repeats: int = 7, workers: int = 1) -> list[float]:
    """Best-of-``repeats`` throughput per layout, timing the layouts round-robin so that slow
    drift in host speed affects every layout alike."""
    k = wl.spec.k
    for ml in mls:
        for q, t in zip(wl.queries[:1], wl.roles[:1]):
            execute(ml, q, int(t), k, efs, strategy)
    best = [math.inf] * len(mls)
    for _ in range(max(repeats, 1)):
        for i, ml in enumerate(mls):
            best[i] = min(best[i], run_timed(ml, wl, k, efs, strategy, workers)[2])
    return [len(wl) / b if b > 0 else math.inf for b in best]


def measure(ml: MaterializedLayout, wl: Workload, cm: CostModel, truth: Sequence[Sequence[Neighbor]],
            efs: int = 100, strategy: str = "coordinated", repeats: int = 1, workers: int = 1,
            oracle_latency_us: float | None = None) -> MetricsReport:
    k = wl.spec.k
    lay = ml.layout
    for q, t in zip(wl.queries[:1], wl.roles[:1]):   # warm caches and compiled kernels
        execute(ml, q, int(t), k, efs, strategy)
    best = None
    res, stats = [], []
    for _ in range(max(repeats, 1)):
        res, stats, el = run_timed(ml, wl, k, efs, strategy, workers)
        best = el if best is None else min(best, el)
    n = max(len(wl), 1)
    lat = best / n * 1e6
    viol = sum(violations(ml, int(t), r) for t, r in zip(wl.roles, res))
    rec = float(np.mean([recall_at_k(r, g) for r, g in zip(res, truth)])) if res else 1.0
    pur = float(np.mean([purity(lay, int(t)) for t in wl.roles])) if len(wl) else 1.0
    s = summarize(stats)
    return MetricsReport(
        sa=lay.sa,
        qa_modeled=modeled_qa(lay, ml.lex, cm, wl.weights),
        qa_wall=lat / oracle_latency_us if oracle_latency_us else None,
        recall=rec, qps=n / best if best else float("inf"), mean_latency_us=lat, purity=pur,
        indices_per_query=s["indices_per_query"], phase2_skip_rate=s["phase2_skip_rate"],
        efs_savings=s["efs_savings"], violations=viol, n_indexed=lay.n_indexed, n_units=len(lay.units))
