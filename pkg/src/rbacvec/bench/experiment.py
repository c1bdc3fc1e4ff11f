"""Experiment sweeps writing one CSV per study."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, replace

from ..access import ExclusiveLattice, build_exclusive_lattice
from ..config import ExperimentConfig
from ..cost import CostModel
from ..hnsw import HnswParams
from ..layout import Layout
from ..partition import effveda_run, veda_run
from ..query import MaterializedLayout
from ..vectors import Dataset, gen_gaussian_mixture
from .baselines import global_layout, oracle_layout
from .metrics import ground_truth, measure
from .policy import gen_policy
from .workload import WorkloadSpec, gen_workload

log = logging.getLogger(__name__)

OPTIMIZERS = {"veda": veda_run, "effveda": effveda_run}

# columns whose values depend on the host clock; excluded from determinism checks
TIMER_COLUMNS = ("qa_wall", "qps", "mean_latency_us", "partition_seconds", "optimize_seconds")

METRIC_COLUMNS = ("sa", "qa_modeled", "qa_wall", "recall", "qps", "mean_latency_us", "purity",
                  "indices_per_query", "phase2_skip_rate", "efs_savings", "violations", "n_indexed", "n_units")

SCHEMAS = {
    "beta.csv": ("optimizer", "beta", "workload") + METRIC_COLUMNS + ("partition_seconds",),
    "efs.csv": ("optimizer", "beta", "efs", "strategy") + METRIC_COLUMNS,
    "threshold.csv": ("optimizer", "beta", "threshold") + METRIC_COLUMNS,
    "sensitivity.csv": ("optimizer", "beta", "sensitivity", "strategy") + METRIC_COLUMNS,
    "construction.csv": ("optimizer", "beta", "n_nodes", "n_roles", "optimize_seconds", "partition_seconds"),
}


@dataclass
class Instance:
    ds: Dataset
    lex: ExclusiveLattice
    n_permissions: int


def make_instance(cfg: ExperimentConfig) -> Instance:
    d = cfg.data
    ds = gen_gaussian_mixture(d.n_vectors, d.dim, d.n_clusters, seed=d.seed)
    pol = gen_policy(cfg.policy, d.n_vectors)
    return Instance(ds, build_exclusive_lattice(pol.access), pol.n_permissions)


def optimize(name: str, lex: ExclusiveLattice, cm: CostModel, beta: float, weights=None) -> Layout:
    if name == "global":
        return global_layout(lex)
    if name == "oracle":
        return oracle_layout(lex, cm)
    lay, _ = OPTIMIZERS[name](lex, cm, beta, weights)
    return lay


class Runner:
    """Caches materialized layouts and ground truth across the sweeps of one experiment."""

    def __init__(self, cfg: ExperimentConfig, inst: Instance | None = None):
        self.cfg = cfg
        self.inst = inst or make_instance(cfg)
        self.params = HnswParams(cfg.index.M, cfg.index.efc, cfg.index.seed)
        self._ml: dict = {}
        self._truth: dict = {}
        self._wl: dict = {}
        self._oracle_lat: dict = {}

    def cm(self, threshold: int | None = None) -> CostModel:
        cm = self.cfg.cost.model()
        return cm if threshold is None else cm.with_(threshold=threshold)

    def workload(self, kind: str, sensitivity: float = 1.0):
        key = (kind, sensitivity)
        if key not in self._wl:
            b = self.cfg.bench
            spec = WorkloadSpec(kind, b.n_queries, sensitivity, b.k, b.noise, seed=b.seed)
            wl = gen_workload(spec, self.inst.ds, self.inst.lex)
            self._wl[key] = wl
            self._truth[key] = ground_truth(self.inst.ds, self.inst.lex, wl, b.k)
        return self._wl[key], self._truth[key]

    def materialize(self, name: str, beta: float, threshold: int | None = None, weights_key=None):
        key = (name, beta, threshold, weights_key)
        if key not in self._ml:
            cm = self.cm(threshold)
            w = self._wl[weights_key].role_weights if weights_key is not None else None
            lay = optimize(name, self.inst.lex, cm, beta, w)
            self._ml[key] = MaterializedLayout.build(self.inst.ds, self.inst.lex, lay, self.params)
            log.info("materialized %s beta=%s threshold=%s: %d units", name, beta, threshold, len(lay.units))
        return self._ml[key]

    def oracle_latency(self, kind: str, sensitivity: float, efs: int, threshold: int | None = None) -> float:
        key = (kind, sensitivity, efs, threshold)
        if key not in self._oracle_lat:
            wl, truth = self.workload(kind, sensitivity)
            ml = self.materialize("oracle", 1.0, threshold)
            b = self.cfg.bench
            rep = measure(ml, wl, self.cm(threshold), truth, efs, "coordinated", b.repeats, b.workers)
            self._oracle_lat[key] = rep.mean_latency_us
        return self._oracle_lat[key]

    def report(self, name: str, beta: float, kind: str, sensitivity: float = 1.0, efs: int | None = None,
               strategy: str = "coordinated", threshold: int | None = None) -> dict:
        b = self.cfg.bench
        efs = efs or self.cfg.cost.efs
        wl, truth = self.workload(kind, sensitivity)
        wkey = (kind, sensitivity) if kind.startswith("weighted") else None
        ml = self.materialize(name, beta, threshold, wkey)
        ref = self.oracle_latency(kind, sensitivity, efs, threshold)
        rep = measure(ml, wl, self.cm(threshold), truth, efs, strategy, b.repeats, b.workers, ref)
        row = rep.row()
        row["partition_seconds"] = ml.layout.meta.get("partition_seconds", 0.0)
        return row


def _write(path: str, cols, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(cols), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def run_experiment(cfg: ExperimentConfig, studies=("beta", "efs", "threshold", "sensitivity", "construction"),
                   out_dir: str | None = None) -> dict[str, str]:
    """Run the requested sweeps and return {csv name: path}."""
    out_dir = out_dir or cfg.bench.out_dir
    os.makedirs(out_dir, exist_ok=True)
    run = Runner(cfg)
    b = cfg.bench
    names = list(b.optimizers)
    paths = {}

    if "beta" in studies:
        rows = []
        for kind in b.workloads:
            for name in ["oracle", "global"]:
                rows.append({"optimizer": name, "beta": 1.0, "workload": kind, **run.report(name, 1.0, kind)})
            for beta in b.betas:
                for name in names:
                    rows.append({"optimizer": name, "beta": beta, "workload": kind, **run.report(name, beta, kind)})
        paths["beta.csv"] = _save(out_dir, "beta.csv", rows)

    kind0 = b.workloads[0]
    if "efs" in studies:
        rows = []
        for name in names:
            for efs in b.efs_grid:
                if efs < b.k:
                    continue
                for strat in ("coordinated", "independent"):
                    rows.append({"optimizer": name, "beta": b.sweep_beta, "efs": efs, "strategy": strat,
                                 **run.report(name, b.sweep_beta, kind0, efs=efs, strategy=strat)})
        paths["efs.csv"] = _save(out_dir, "efs.csv", rows)

    if "threshold" in studies:
        rows = []
        for name in names:
            for lam in b.thresholds:
                rows.append({"optimizer": name, "beta": b.sweep_beta, "threshold": lam,
                             **run.report(name, b.sweep_beta, kind0, threshold=lam)})
        paths["threshold.csv"] = _save(out_dir, "threshold.csv", rows)

    if "sensitivity" in studies:
        rows = []
        for name in names:
            for s in b.sensitivities:
                for strat in ("coordinated", "independent"):
                    rows.append({"optimizer": name, "beta": b.sweep_beta, "sensitivity": s, "strategy": strat,
                                 **run.report(name, b.sweep_beta, kind0, sensitivity=s, strategy=strat)})
        paths["sensitivity.csv"] = _save(out_dir, "sensitivity.csv", rows)

    if "construction" in studies:
        rows = []
        cm = run.cm()
        for name in names:
            for beta in b.betas:
                lay, _ = OPTIMIZERS[name](run.inst.lex, cm, beta)
                rows.append({"optimizer": name, "beta": beta, "n_nodes": len(run.inst.lex.keys),
                             "n_roles": run.inst.lex.n_roles, "optimize_seconds": lay.meta["optimize_seconds"],
                             "partition_seconds": lay.meta["partition_seconds"]})
        paths["construction.csv"] = _save(out_dir, "construction.csv", rows)
    return paths


def _save(out_dir: str, name: str, rows) -> str:
    path = os.path.join(out_dir, name)
    _write(path, SCHEMAS[name], rows)
    return path


def small_config(**bench_overrides) -> ExperimentConfig:
    """A configuration that runs in seconds; handy for smoke tests."""
    from ..config import BenchConfig, DataConfig, IndexConfig
    from .policy import PolicySpec
    cfg = ExperimentConfig(
        data=DataConfig(n_vectors=4000, dim=8, n_clusters=8),
        policy=PolicySpec(n_roles=5, n_departments=40, depts_per_role=8),
        index=IndexConfig(M=8, efc=60),
        bench=BenchConfig(betas=[1.0, 1.5], efs_grid=[10, 50], thresholds=[200, 400],
                          sensitivities=[0.0, 1.0], workloads=["uniform-single"], n_queries=20, repeats=1))
    cfg.cost.threshold = 300
    if bench_overrides:
        cfg.bench = replace(cfg.bench, **bench_overrides)
    return cfg
