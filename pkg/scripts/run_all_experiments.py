#!/usr/bin/env python3
"""Run every configured experiment end to end and emit CSVs + SVG charts.

Thin wrapper over the CLI so a full reproduction is one command:

    python3 scripts/run_all_experiments.py [--fast]

--fast trims seeds and budgets for a smoke pass (a few minutes); the full
run reproduces the committed config files as-is.
"""

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from sqbc.cli import main as sqbc_main  # noqa: E402

CONFIGS = [
    "hypercube.cfg",
    "consistency.cfg",
    "clustering_blobs.cfg",
    "clustering_iris.cfg",
    "clustering_wine.cfg",
    "clustering_mnist_mob.cfg",
    "linear_noise.cfg",
    "kernel_digits.cfg",
]

FAST_SEEDS = {
    "consistency.cfg": "0,1,2",
    "clustering_blobs.cfg": "0,1",
    "clustering_iris.cfg": "0",
    "clustering_wine.cfg": "0",
    "clustering_mnist_mob.cfg": "0",
    "linear_noise.cfg": "0,1,2",
    "kernel_digits.cfg": "0",
}


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--fast", action="store_true", help="trimmed smoke run")
    parser.add_argument("--out", default="results")
    args = parser.parse_args()
    for name in CONFIGS:
        cfg = ROOT / "configs" / name
        stem = name.split(".")[0]
        experiment = next(
            line.partition("=")[2].strip()
            for line in cfg.read_text().splitlines()
            if line.strip().startswith("experiment")
        )
        argv = [
            "run", experiment,
            "--config", str(cfg),
            "--out", f"{args.out}/{stem}",
            "--plots",
        ]
        if args.fast and name in FAST_SEEDS:
            argv += ["--seeds", FAST_SEEDS[name]]
        print(f"== {name}")
        rc = sqbc_main(argv)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
