"""Command line entry point: ``python -m rbacvec <command> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .access import AccessMatrix, build_exclusive_lattice, fmt_roles, mask_of, parse_roles
from .bench.experiment import SCHEMAS, optimize, run_experiment
from .bench.policy import gen_policy
from .bench.workload import KINDS, WorkloadSpec, gen_workload
from .config import load_config
from .cost import CalibrationError, FunctionRunner, HostRunner, calibrate, find_crossover, fit_scan_coefficient
from .hnsw import HnswParams
from .layout import Layout
from .query import STRATEGIES, ExecStats, MaterializedLayout, execute
from .vectors import FormatError, gen_gaussian_mixture, load_fvecs, save_fvecs

log = logging.getLogger("rbacvec")


def _lattice(args):
    am = AccessMatrix.load(args.access, getattr(args, "n_roles", 0) or 0)
    return build_exclusive_lattice(am)


# dataset ---------------------------------------------------------------------------

def cmd_dataset_gen(args) -> int:
    ds = gen_gaussian_mixture(args.n, args.dim, args.clusters, seed=args.seed)
    save_fvecs(ds, args.out)
    print(f"wrote {len(ds)} x {ds.dim} vectors to {args.out}")
    return 0


def cmd_dataset_inspect(args) -> int:
    ds = load_fvecs(args.path, args.dim)
    v = ds.vectors
    info = {"n": len(ds), "dim": ds.dim}
    if len(ds):
        info.update(mean_norm=float(np.linalg.norm(v, axis=1).mean()), min=float(v.min()), max=float(v.max()))
    print(json.dumps(info, indent=1))
    return 0


# gen --------------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    os.makedirs(args.out_dir, exist_ok=True)
    d = cfg.data
    ds = gen_gaussian_mixture(d.n_vectors, d.dim, d.n_clusters, seed=d.seed)
    pol = gen_policy(cfg.policy, d.n_vectors)
    save_fvecs(ds, os.path.join(args.out_dir, "data.fvecs"))
    pol.access.save_csr(os.path.join(args.out_dir, "access.csr"))
    lex = build_exclusive_lattice(pol.access)
    b = cfg.bench
    spec = WorkloadSpec(args.workload, b.n_queries, args.sensitivity, b.k, b.noise, seed=b.seed)
    wl = gen_workload(spec, ds, lex)
    save_fvecs(wl.queries, os.path.join(args.out_dir, "queries.fvecs"))
    with open(os.path.join(args.out_dir, "query_roles.txt"), "w") as f:
        for t in wl.roles:
            f.write(fmt_roles(int(t)) + "\n")
    print(json.dumps({"n_vectors": d.n_vectors, "n_roles": lex.n_roles, "n_blocks": len(lex.keys),
                      "n_permissions": pol.n_permissions, "depth": lex.depth, "n_queries": len(wl)}, indent=1))
    return 0


# build ---------------------------------------------------------------------------------

def cmd_build(args) -> int:
    cfg = load_config(args.config)
    cm = cfg.cost.model()
    if args.threshold:
        cm = cm.with_(threshold=args.threshold)
    lex = _lattice(args)
    lay = optimize(args.optimizer, lex, cm, args.beta)
    lay.check(lex)
    os.makedirs(args.out, exist_ok=True)
    if args.no_index:
        lay.save(os.path.join(args.out, "layout.json"))
    else:
        ds = load_fvecs(args.data)
        if len(ds) != lex.n_vectors:
            print(f"error: {len(ds)} vectors but {lex.n_vectors} access rows", file=sys.stderr)
            return 2
        p = cfg.index
        ml = MaterializedLayout.build(ds, lex, lay, HnswParams(p.M, p.efc, p.seed))
        ml.save(args.out)
    print(json.dumps({"optimizer": args.optimizer, "beta": args.beta, "sa": lay.sa, "units": len(lay.units),
                      "indexed": lay.n_indexed, "partition_seconds": lay.meta.get("partition_seconds", 0.0)}))
    return 0


# query ---------------------------------------------------------------------------------

def _read_roles(path: str) -> list[int]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(parse_roles(line) if line.startswith("{") else mask_of(int(x) for x in line.split(",")))
    return out


def cmd_query(args) -> int:
    ds = load_fvecs(args.data)
    lex = _lattice(args)
    ml = MaterializedLayout.load(args.dir, ds, lex)
    if args.queries:
        qs = load_fvecs(args.queries).vectors
        roles = _read_roles(args.roles)
        if len(roles) != len(qs):
            print("error: query and role counts differ", file=sys.stderr)
            return 2
    else:
        if args.role is None or args.vector is None:
            print("error: give --queries/--roles or --role/--vector", file=sys.stderr)
            return 2
        qs = np.array([[float(x) for x in args.vector.split(",")]], dtype=np.float32)
        roles = [mask_of(int(x) for x in args.role.split(","))]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out)
    w.writerow(["query", "rank", "id", "dist", "indices", "phase2_skips", "expansions", "dist_evals"])
    for i, (q, t) in enumerate(zip(qs, roles)):
        st = ExecStats()
        res = execute(ml, q, t, args.k, args.efs, args.strategy, st)
        for rank, n in enumerate(res):
            w.writerow([i, rank, n.id, f"{n.dist:.6g}", st.indices_touched, st.phase2_skips, st.expansions,
                        st.dist_evals])
    if args.out:
        out.close()
    return 0


# bench ---------------------------------------------------------------------------------

def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    studies = tuple(s for s in args.studies.split(",") if s)
    unknown = [s for s in studies if s + ".csv" not in SCHEMAS]
    if unknown:
        print(f"error: unknown studies {unknown}", file=sys.stderr)
        return 2
    paths = run_experiment(cfg, studies, args.out_dir)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


# calibrate -----------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    sizes = [2 ** e for e in range(args.min_exp, args.max_exp + 1)]
    efs_grid = [int(x) for x in args.efs_grid.split(",")]
    n0 = args.n0 or sizes[-1]
    if args.planted:
        a, b, c = (float(x) for x in args.planted.split(","))
        runner = FunctionRunner(lambda n, e: a * np.log2(n + 1) + b * e + c)
    else:
        runner = HostRunner(dim=args.dim, M=args.M, efc=args.efc, n_queries=args.n_queries, seed=args.seed)
    try:
        rep = calibrate(runner, sizes, efs_grid, n0)
    except CalibrationError as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        print(json.dumps(e.samples), file=sys.stderr)
        return 3
    doc = json.loads(rep.to_json())
    if not args.planted and args.crossover:
        doc["threshold"] = find_crossover(runner, sizes, efs=args.efs)
        doc["scan_per_vector"] = fit_scan_coefficient(runner, sizes[: max(len(sizes) // 2, 2)])
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text)
    return 0


# plan inspect --------------------------------------------------------------------------

def cmd_plan_inspect(args) -> int:
    lay = Layout.load(args.layout)
    cfg = load_config(args.config)
    cm = cfg.cost.model()
    if args.role is None:
        roles = sorted(lay.plans)
    else:
        roles = [args.role]
    for r in roles:
        if r not in lay.plans:
            print(f"error: unknown role {r}", file=sys.stderr)
            return 2
        t = 1 << r
        print(f"role {r}: {len(lay.plans[r])} units, modeled cost {lay.role_cost(cm, r):.4f}")
        for n in lay.plans[r]:
            u = lay.units[n]
            lam = lay.lam(n, t)
            kind = "index" if u.indexed else "scan"
            print(f"  {n:<28} {kind:<5} size={u.size:<8} authorized={lay.auth(n, t):<8} lambda={lam}")
    return 0


# parser --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbacvec", description="Role-aware partitioned vector search")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("dataset", help="synthetic vectors")
    dsub = p.add_subparsers(dest="dcmd", required=True)
    g = dsub.add_parser("gen")
    g.add_argument("--n", type=int, default=50_000)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--clusters", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_dataset_gen)
    g = dsub.add_parser("inspect")
    g.add_argument("path")
    g.add_argument("--dim", type=int, default=None, help="needed for an empty file")
    g.set_defaults(fn=cmd_dataset_inspect)

    p = sub.add_parser("gen", help="vectors, access policy and a query workload from a config")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workload", choices=KINDS, default="uniform-single")
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("build", help="optimize a layout and build its indices")
    p.add_argument("--data")
    p.add_argument("--access", required=True)
    p.add_argument("--n-roles", type=int, default=0)
    p.add_argument("--optimizer", choices=["veda", "effveda", "global", "oracle"], default="effveda")
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--threshold", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--no-index", action="store_true", help="write the manifest only")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("query", help="answer queries over a built layout")
    p.add_argument("--dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--access", required=True)
    p.add_argument("--n-roles", type=int, default=0)
    p.add_argument("--queries")
    p.add_argument("--roles", help="one role set per line, e.g. {0,3} or 0,3")
    p.add_argument("--role", help="comma-separated roles for a single query")
    p.add_argument("--vector", help="comma-separated query vector")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--efs", type=int, default=100)
    p.add_argument("--strategy", choices=STRATEGIES, default="coordinated")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("bench", help="run experiment sweeps and write CSVs")
    p.add_argument("--config")
    p.add_argument("--studies", default="beta,efs,threshold,sensitivity,construction")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("calibrate", help="fit the latency cost model")
    p.add_argument("--planted", help="a,b,c of a synthetic timer instead of the host")
    p.add_argument("--min-exp", type=int, default=10)
    p.add_argument("--max-exp", type=int, default=15)
    p.add_argument("--efs-grid", default="10,50,100,200,400,800")
    p.add_argument("--n0", type=int, default=0)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--efc", type=int, default=100)
    p.add_argument("--n-queries", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crossover", action="store_true", help="also locate the scan/index crossover size")
    p.add_argument("--efs", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("plan", help="inspect per-role plans")
    psub = p.add_subparsers(dest="pcmd", required=True)
    g = psub.add_parser("inspect")
    g.add_argument("--layout", required=True)
    g.add_argument("--role", type=int)
    g.add_argument("--config")
    g.set_defaults(fn=cmd_plan_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (FormatError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
