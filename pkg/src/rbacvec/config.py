"""Experiment configuration: nested dataclasses loadable from JSON or TOML."""
from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from .bench.policy import PolicySpec
from .cost import REFERENCE_THETA, CostModel, Theta

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    n_vectors: int = 50_000
    dim: int = 16
    n_clusters: int = 32
    seed: int = 0


@dataclass
class IndexConfig:
    M: int = 16
    efc: int = 200
    seed: int = 0


@dataclass
class CostConfig:
    a: float = REFERENCE_THETA.a
    b: float = REFERENCE_THETA.b
    c: float = REFERENCE_THETA.c
    efs_form: str = "linear"
    efs: int = 100
    threshold: int = 1000
    scan_per_vector: float | None = None
    theta_file: str | None = None     # calibration JSON; overrides a, b, c, efs_form

    def model(self) -> CostModel:
        theta = Theta(self.a, self.b, self.c, efs_form=self.efs_form)
        if self.theta_file:
            with open(self.theta_file) as f:
                theta = Theta.from_dict(json.load(f))
        return CostModel(theta, self.efs, self.threshold, self.scan_per_vector)


@dataclass
class BenchConfig:
    optimizers: list = field(default_factory=lambda: ["veda", "effveda"])
    betas: list = field(default_factory=lambda: [1.0, 1.1, 1.3, 1.5, 2.0, 3.0])
    efs_grid: list = field(default_factory=lambda: [10, 50, 100, 300, 500, 1000])
    thresholds: list = field(default_factory=lambda: [500, 1000, 2000, 3000, 5000])
    sensitivities: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    workloads: list = field(default_factory=lambda: ["uniform-single", "weighted-single",
                                                     "uniform-multi", "weighted-multi"])
    sweep_beta: float = 1.5           # beta used by the efs, threshold and sensitivity sweeps
    n_queries: int = 100
    repeats: int = 10
    k: int = 10
    noise: float = 0.05
    workers: int = 1
    seed: int = 0
    out_dir: str = "results"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    policy: PolicySpec = field(default_factory=PolicySpec)
    index: IndexConfig = field(default_factory=IndexConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, d):
    if d is None:
        return cls()
    known = {f.name: f for f in fields(cls)}
    bad = set(d) - set(known)
    if bad:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    kw = {}
    for name, val in d.items():
        sub = _SECTIONS.get((cls, name))
        kw[name] = _build(sub, val) if sub is not None else val
    return cls(**kw)


_SECTIONS = {(ExperimentConfig, "data"): DataConfig, (ExperimentConfig, "policy"): PolicySpec,
             (ExperimentConfig, "index"): IndexConfig, (ExperimentConfig, "cost"): CostConfig,
             (ExperimentConfig, "bench"): BenchConfig}


def config_from_dict(d: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, d)


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = os.fspath(path)
    if p.endswith(".toml"):
        with open(p, "rb") as f:
            return config_from_dict(tomllib.load(f))
    with open(p) as f:
        return config_from_dict(json.load(f))
