"""Synthetic policies and workloads, reference layouts and the metric suite."""
from .baselines import build_baselines, global_layout, oracle_layout, oracle_query_cost
from .metrics import MetricsReport, interleaved_qps, measure, modeled_qa
from .policy import Policy, PolicySpec, gen_policy, zipf_sizes
from .workload import KINDS, Workload, WorkloadSpec, gen_workload

__all__ = ["KINDS", "MetricsReport", "Policy", "PolicySpec", "Workload", "WorkloadSpec", "build_baselines",
           "gen_policy", "gen_workload", "global_layout", "interleaved_qps", "measure", "modeled_qa", "oracle_layout",
           "oracle_query_cost", "zipf_sizes"]
