"""Command-line entry points.

    sqbc run <experiment> --config <file> --out <dir> --seeds a,b,c [--plots]
    sqbc verify [pytest args]
    sqbc serve --dataset name=path [--host H] [--port P]
    sqbc make-data --out <dir> [--per-class N]
    sqbc trace-fixture --out <file> [--seed S] [--rounds R]

``run`` writes results.csv, metadata.json, and (with --plots) an SVG chart
into the output directory. ``verify`` executes the acceptance suite.
``trace-fixture`` emits a scripted simulated-expert session as JSON (used
by the browser client's integration test to replay the same feedback over
HTTP and compare traces).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

__all__ = ["main"]


def _cmd_run(args) -> int:
    from .experiments import ExperimentConfig, plot_rows, run_experiment, write_rows

    overrides = {
        "experiment": args.experiment,
        "out_dir": args.out,
        "seeds": args.seeds,
    }
    if args.config:
        config = ExperimentConfig.from_file(args.config, **overrides)
    else:
        config = ExperimentConfig.from_dict(
            {k: v for k, v in overrides.items() if v is not None}
        )
    out_dir = Path(config.out_dir)
    started = time.time()
    rows = run_experiment(config)
    csv_path = write_rows(rows, out_dir, config.experiment)
    meta = {
        "experiment": config.experiment,
        "version": __version__,
        "config": {k: _jsonable(v) for k, v in vars(config).items()},
        "n_rows": len(rows),
        "elapsed_s": round(time.time() - started, 3),
    }
    (out_dir / "metadata.json").write_text(json.dumps(meta, indent=2))
    if args.plots:
        plot_rows(rows, out_dir / f"{config.experiment}.svg", title=config.experiment)
    print(f"wrote {len(rows)} rows to {csv_path}")
    return 0


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, float) and v == float("inf"):
        return "inf"
    return v


def _cmd_verify(args) -> int:
    import pytest

    tests = _find_tests_dir()
    target = [str(tests / "test_acceptance.py")] if tests else []
    return pytest.main(target + ["-v", *args.pytest_args])


def _find_tests_dir() -> Path | None:
    for base in (Path.cwd(), Path(__file__).resolve().parents[2]):
        cand = base / "tests"
        if (cand / "test_acceptance.py").exists():
            return cand
    return None


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    datasets = {}
    for entry in args.dataset or []:
        name, _, path = entry.partition("=")
        if not path:
            raise SystemExit(f"--dataset needs name=path, got {entry!r}")
        datasets[name] = _load_dataset_bundle(name, path)
    if not datasets:
        datasets["blobs"] = _load_dataset_bundle("blobs", "")
    host = args.host or os.environ.get("SQBC_HOST", "127.0.0.1")
    port = args.port or int(os.environ.get("SQBC_PORT", "8321"))
    app = create_app(datasets)
    print(f"serving datasets {sorted(datasets)} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def _load_dataset_bundle(name: str, path: str):
    from .datasets import gaussian_blobs, load_uci, standardize
    from .service import DatasetBundle

    if name == "blobs" or path in ("", "blobs"):
        rng = np.random.default_rng(7919)
        X, z = gaussian_blobs(20, [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]], 1.0, rng)
        return DatasetBundle(name=name, features=standardize(X), truth=z)
    if name in ("iris", "wine"):
        X, labels = load_uci(path, name)
        return DatasetBundle(name=name, features=X, truth=labels)
    raise SystemExit(f"unknown dataset kind {name!r} (expected blobs, iris, or wine)")


def _cmd_make_data(args) -> int:
    from .datasets import synthetic_digit_images, write_idx

    rng = np.random.default_rng(args.seed)
    if args.styled:
        images, labels = synthetic_digit_images(
            args.per_class, drop_prob=0.10, salt_prob=0.0, max_shift=0,
            rng=rng, styles_per_class=40, ambiguous_frac=0.5,
        )
    else:
        images, labels = synthetic_digit_images(args.per_class, rng=rng)
    img, lab = write_idx(images, labels, args.out, prefix="train")
    print(f"wrote {images.shape[0]} digit-like images to {img} / {lab}")
    return 0


def _cmd_trace_fixture(args) -> int:
    """Scripted in-process session: trace JSONL plus the feedback script."""
    from .oracle import CorrectionPolicy, Noiseless, SimulatedExpert
    from .query_engine import ClusteringSession, ClusterSessionConfig
    from .structures import FlatClustering

    bundle = _load_dataset_bundle(args.dataset, args.data_path)
    config = ClusterSessionConfig(
        k=args.k, seed=args.seed, sweeps_per_round=args.sweeps_per_round,
        query_size=args.query_size,
    )
    session = ClusteringSession(bundle.features, config, ground_truth=bundle.truth)
    oracle = SimulatedExpert(
        FlatClustering(bundle.truth),
        Noiseless(),
        CorrectionPolicy(),
        np.random.default_rng(args.oracle_seed),
    )
    session.run(args.rounds, oracle)
    fixture = {
        "dataset": args.dataset,
        "config": {
            "k": args.k,
            "seed": args.seed,
            "sweeps_per_round": args.sweeps_per_round,
            "query_size": args.query_size,
        },
        "feedback": [
            {"step": e.step, "atom": list(e.atom.items), "same": bool(e.answer)}
            for e in session.trace.events
        ],
        "trace_jsonl": session.trace.to_jsonl(),
    }
    Path(args.out).write_text(json.dumps(fixture, indent=2))
    print(f"wrote {len(session.trace)}-step fixture to {args.out}")
    return 0


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    if argv and argv[0] == "verify":
        # hand everything after `verify` straight to pytest
        return _cmd_verify(argparse.Namespace(pytest_args=list(argv[1:])))
    parser = argparse.ArgumentParser(prog="sqbc")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment")
    run_p.add_argument("experiment")
    run_p.add_argument("--config", default=None)
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--seeds", default=None, help="comma-separated seed list")
    run_p.add_argument("--plots", action="store_true")
    run_p.set_defaults(func=_cmd_run)

    sub.add_parser("verify", help="run the acceptance suite (extra args go to pytest)")

    serve_p = sub.add_parser("serve", help="start the live session service")
    serve_p.add_argument("--dataset", action="append", metavar="NAME=PATH")
    serve_p.add_argument("--host", default=None)
    serve_p.add_argument("--port", type=int, default=None)
    serve_p.set_defaults(func=_cmd_serve)

    data_p = sub.add_parser("make-data", help="generate synthetic IDX digit images")
    data_p.add_argument("--out", required=True)
    data_p.add_argument("--per-class", dest="per_class", type=int, default=650)
    data_p.add_argument("--seed", type=int, default=20240601)
    data_p.add_argument("--styled", action="store_true")
    data_p.set_defaults(func=_cmd_make_data)

    fix_p = sub.add_parser("trace-fixture", help="scripted session fixture for clients")
    fix_p.add_argument("--out", required=True)
    fix_p.add_argument("--dataset", default="blobs")
    fix_p.add_argument("--data-path", default="")
    fix_p.add_argument("--k", type=int, default=3)
    fix_p.add_argument("--seed", type=int, default=0)
    fix_p.add_argument("--oracle-seed", type=int, default=1000)
    fix_p.add_argument("--rounds", type=int, default=4)
    fix_p.add_argument("--sweeps-per-round", dest="sweeps_per_round", type=int, default=30)
    fix_p.add_argument("--query-size", dest="query_size", type=int, default=10)
    fix_p.set_defaults(func=_cmd_trace_fixture)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
