#!/usr/bin/env python3
"""Fit the latency cost model on this host and locate the scan/index crossover size.

The output JSON can be passed as ``cost.theta_file`` in an experiment config; its
``threshold`` field is the measured crossover.
"""
import argparse
import json

from rbacvec.cost import HostRunner, calibrate, find_crossover, fit_scan_coefficient


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--M", type=int, default=16)
    ap.add_argument("--efc", type=int, default=200)
    ap.add_argument("--efs", type=int, default=100)
    ap.add_argument("--n-queries", type=int, default=200)
    ap.add_argument("--crossover-min", type=int, default=1000)
    ap.add_argument("--crossover-max", type=int, default=8000)
    ap.add_argument("--crossover-step", type=int, default=250)
    ap.add_argument("--out", default="theta.json")
    args = ap.parse_args()
    host = HostRunner(dim=args.dim, M=args.M, efc=args.efc, n_queries=args.n_queries)
    rep = calibrate(host, [2 ** e for e in range(10, 16)], [10, 50, 100, 200, 400, 800], 2 ** 15)
    doc = json.loads(rep.to_json())
    grid = list(range(args.crossover_min, args.crossover_max + 1, args.crossover_step))
    doc["threshold"] = find_crossover(host, grid, efs=args.efs)
    doc["scan_per_vector"] = fit_scan_coefficient(host, grid[: max(len(grid) // 2, 2)])
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=2)
    print(f"a={rep.theta.a:.4f} b={rep.theta.b:.4f} c={rep.theta.c:.4f} form={rep.theta.efs_form} "
          f"R2 linear={rep.r2_efs_linear:.3f} crossover={doc['threshold']} -> {args.out}")


if __name__ == "__main__":
    main()
