#!/usr/bin/env python3
"""Run the experiment sweeps from a config file and write one CSV per study."""
import argparse
import logging

from rbacvec.bench.experiment import run_experiment, small_config
from rbacvec.config import load_config

STUDIES = ("beta", "efs", "threshold", "sensitivity", "construction")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="TOML or JSON experiment config (defaults if omitted)")
    ap.add_argument("--small", action="store_true", help="use the built-in seconds-scale config")
    ap.add_argument("--studies", default=",".join(STUDIES))
    ap.add_argument("--out-dir")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = small_config() if args.small else load_config(args.config)
    studies = [s for s in args.studies.split(",") if s]
    bad = set(studies) - set(STUDIES)
    if bad:
        ap.error(f"unknown studies: {sorted(bad)}")
    for name, path in run_experiment(cfg, studies, args.out_dir).items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
