"""Command line entry points: serve the HTTP API, run benchmarks, simulate
an elicitation session, or generate recourse from a persisted session."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np


def _add_data_flag(p: argparse.ArgumentParser):
    p.add_argument(
        "--data",
        action="append",
        nargs=3,
        metavar=("NAME", "CSV", "SCHEMA"),
        default=[],
        help="load a CSV dataset under NAME (repeatable)",
    )


def _registry(args):
    from .service import build_registry

    specs = {name: (csv, schema) for name, csv, schema in args.data}
    return build_registry(specs, seed=args.seed, synthetic_n=args.synthetic_n)


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        args.store_dir,
        registry=_registry(args),
        api_key=args.api_key,
        static_dir=args.static_dir,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _experiment_config(args):
    from .experiments import ExperimentConfig
    from .gradient_recourse import GradConfig

    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    if args.dataset is not None:
        raw["dataset"] = args.dataset
    if args.schema is not None:
        raw["schema"] = args.schema
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.measure_time:
        raw["measure_time"] = True
    grad = GradConfig(**raw.pop("grad", {}))
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    for key in ("t_values", "recourse_t_values", "rank_strategies", "methods"):
        if key in raw:
            raw[key] = tuple(raw[key])
    return ExperimentConfig(grad=grad, **raw)


def _cmd_bench(args) -> int:
    from .experiments import run_experiment, selection_timing_study, write_timing_csv
    from .plots import render_report_figures

    cfg = _experiment_config(args)
    out = Path(args.out)
    report = run_experiment(cfg, out)
    if args.timing:
        rows = selection_timing_study(seed=cfg.seed)
        write_timing_csv(rows, out / "timing.csv")
    if args.figures:
        for fig in render_report_figures(out):
            print(f"wrote {fig}")
    print(f"report: {out / 'report.json'}")
    if report.failures:
        print(f"warning: {len(report.failures)} trial failures (see report.json)")
    return 0


def _cmd_elicit_sim(args) -> int:
    from .elicitation import gen_truth_random, run_session

    registry = _registry(args)
    bundle = registry.get(args.dataset)
    if bundle is None:
        raise SystemExit(f"unknown dataset {args.dataset!r}")
    if args.subject_index is not None:
        idx = args.subject_index
    else:
        idx = int(bundle.negative_indices[0])
    xt, _ = bundle.dataset.test()
    x0 = xt[idx]
    truth = gen_truth_random(
        bundle.dim, np.random.default_rng(args.truth_seed)
    )
    result, transcript = run_session(
        x0,
        bundle.pool,
        truth,
        budget=args.budget,
        strategy=args.strategy,
        k=args.k,
        gamma=args.gamma,
        margin=args.margin,
        seed=args.seed,
        indiff_band=args.indiff_band,
        flip_prob=args.flip_prob,
    )
    for entry in transcript:
        print(json.dumps(entry))
    print(
        json.dumps(
            {
                "final_center": result.center.to_lists(),
                "final_radius": result.radius,
                "subject_index": idx,
            }
        )
    )
    return 0


def _cmd_recourse(args) -> int:
    from .service import SessionStore, request_recourse

    store = SessionStore(args.store_dir, _registry(args))
    plan = request_recourse(store, args.session_id, {"method": args.method})
    print(json.dumps(plan, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prefcourse",
        description="preference elicitation and cost-adaptive recourse",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP session API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--store-dir", default="./sessions")
    p.add_argument("--api-key", default=None)
    p.add_argument("--static-dir", default=None, help="built frontend to serve at /ui")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic-n", type=int, default=2000)
    _add_data_flag(p)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="run an experiment config and write reports")
    p.add_argument("--config", default=None, help="ExperimentConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dataset", default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--measure-time", action="store_true")
    p.add_argument("--timing", action="store_true", help="include the selection timing study")
    p.add_argument(
        "--no-figures", dest="figures", action="store_false", help="skip PNG rendering"
    )
    p.set_defaults(func=_cmd_bench, figures=True)

    p = sub.add_parser("elicit-sim", help="simulate one session, print the transcript")
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--budget", type=int, default=5)
    p.add_argument("--strategy", default="exhaustive")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--margin", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth-seed", type=int, default=0)
    p.add_argument("--subject-index", type=int, default=None)
    p.add_argument("--indiff-band", type=float, default=0.0)
    p.add_argument("--flip-prob", type=float, default=0.0)
    p.add_argument("--synthetic-n", type=int, default=2000)
    _add_data_flag(p)
    p.set_defaults(func=_cmd_elicit_sim)

    p = sub.add_parser("recourse", help="generate recourse for a stored session")
    p.add_argument("--store-dir", required=True)
    p.add_argument("--session-id", required=True)
    p.add_argument("--method", default="grad", choices=["grad", "graph", "graph-worst-case"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic-n", type=int, default=2000)
    _add_data_flag(p)
    p.set_defaults(func=_cmd_recourse)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
