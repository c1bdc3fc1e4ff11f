#!/usr/bin/env python3
"""Indexing-threshold sweep: layouts built at thresholds around the host crossover,
reporting index counts and measured throughput per optimizer and budget."""
import argparse
import csv
import sys

from rbacvec.access import build_exclusive_lattice
from rbacvec.bench import PolicySpec, WorkloadSpec, gen_policy, gen_workload, interleaved_qps, measure
from rbacvec.bench.metrics import ground_truth
from rbacvec.cost import CostModel, HostRunner, find_crossover
from rbacvec.hnsw import HnswParams
from rbacvec.partition import effveda_run, veda_run
from rbacvec.query import MaterializedLayout
from rbacvec.vectors import gen_gaussian_mixture

COLUMNS = ("optimizer", "beta", "threshold", "n_indexed", "n_impure", "qps", "recall",
           "phase2_skip_rate", "efs_savings")
FACTORS = (0.66, 0.83, 1.0, 1.17, 1.34)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-vectors", type=int, default=50_000)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--betas", default="1.1,1.3,1.5")
    ap.add_argument("--crossover", type=int, default=0, help="skip the host measurement and use this value")
    ap.add_argument("--n-queries", type=int, default=1000)
    ap.add_argument("--repeats", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="CSV path (stdout if omitted)")
    args = ap.parse_args()

    cross = args.crossover or find_crossover(HostRunner(dim=args.dim, efc=200), list(range(1000, 8001, 250)))
    grid = [int(round(cross * f / 50.0)) * 50 for f in FACTORS]
    ds = gen_gaussian_mixture(args.n_vectors, args.dim, 32, seed=args.seed)
    lex = build_exclusive_lattice(gen_policy(PolicySpec(seed=args.seed), args.n_vectors).access)
    wl = gen_workload(WorkloadSpec("uniform-single", args.n_queries, seed=args.seed + 1), ds, lex)
    truth = ground_truth(ds, lex, wl, 10)
    params = HnswParams(16, 200, args.seed)

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(out, fieldnames=COLUMNS)
    w.writeheader()
    for beta in (float(b) for b in args.betas.split(",")):
        for name, run in (("veda", veda_run), ("effveda", effveda_run)):
            lays, mls, reps = [], [], []
            for th in grid:
                cm = CostModel(threshold=th)
                lay, _ = run(lex, cm, beta)
                ml = MaterializedLayout.build(ds, lex, lay, params)
                lays.append(lay)
                mls.append(ml)
                reps.append(measure(ml, wl, cm, truth, 100, "coordinated", 1))
            # throughput timed round-robin across the grid so host drift hits every layout alike
            qps = interleaved_qps(mls, wl, 100, "coordinated", args.repeats)
            for th, lay, rep, x in zip(grid, lays, reps, qps):
                impure = {n for r in range(lay.n_roles) for n in lay.plans.get(r, ())
                          if lay.units[n].indexed and not lay.is_pure(n, 1 << r)}
                w.writerow({"optimizer": name, "beta": beta, "threshold": th, "n_indexed": lay.n_indexed,
                            "n_impure": len(impure), "qps": round(x, 1), "recall": round(rep.recall, 4),
                            "phase2_skip_rate": round(rep.phase2_skip_rate, 4),
                            "efs_savings": round(rep.efs_savings, 4)})
            out.flush()
    print(f"crossover {cross}, grid {grid}", file=sys.stderr)


if __name__ == "__main__":
    main()
