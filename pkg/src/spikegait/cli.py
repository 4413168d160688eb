"""Command-line entry points for running and exporting experiments.

    spikegait train <config.json>      train + evaluate per the config kind
    spikegait evaluate <weights> <config.json>   closed-loop eval of stored weights
    spikegait search <config.json>     gait-parameter search
    spikegait sweep <config.json> --param a.b.c --values v1 v2 ...
    spikegait export <run-dir>         regenerate plot-ready CSVs from a run

Common flags: --seed, --out, --scale {full,ci}.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import (
    ExperimentConfig,
    Report,
    export_traces,
    run_evaluation,
    run_experiment,
)
from .force_learning import load_weights
from .trace import Trace


def _load_config(path: str, args) -> ExperimentConfig:
    with open(path) as f:
        data = json.load(f)
    if args.scale:
        data["scale"] = args.scale
    config = ExperimentConfig.from_dict(data)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _finish(report: Report, out: str | None) -> int:
    print(f"status: {report.status}")
    for key, value in report.metrics.items():
        print(f"  {key}: {value}")
    if out:
        files = export_traces(report, out)
        print(f"wrote {len(files)} files to {out}")
    return 0 if report.status == "ok" else 1


def _cmd_train(args) -> int:
    config = _load_config(args.config, args)
    report = run_experiment(config)
    return _finish(report, args.out)


def _cmd_evaluate(args) -> int:
    config = _load_config(args.config, args)
    weights, _meta = load_weights(args.weights)
    report = run_evaluation(config, weights)
    return _finish(report, args.out)


def _cmd_search(args) -> int:
    config = _load_config(args.config, args)
    config.kind = "gait-search"
    report = run_experiment(config)
    return _finish(report, args.out)


def _set_by_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _cmd_sweep(args) -> int:
    with open(args.config) as f:
        base = json.load(f)
    if args.scale:
        base["scale"] = args.scale
    out_root = Path(args.out or "sweep_out")
    status = 0
    for raw in args.values:
        value = _parse_value(raw)
        data = json.loads(json.dumps(base))
        _set_by_path(data, args.param, value)
        config = ExperimentConfig.from_dict(data)
        if args.seed is not None:
            config.seed = args.seed
        print(f"== {args.param} = {value}")
        report = run_experiment(config)
        run_dir = out_root / f"{args.param.replace('.', '_')}_{raw}"
        export_traces(report, run_dir)
        print(f"   status: {report.status} -> {run_dir}")
        if report.status != "ok":
            status = 1
    return status


def _cmd_export(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        print(f"not a run directory: {run_dir}", file=sys.stderr)
        return 2
    from .experiments import _downsample_plot_csv

    n = 0
    for trace_file in sorted(run_dir.glob("trace_*.csv")):
        trace = Trace.from_csv(trace_file)
        name = trace_file.stem.removeprefix("trace_")
        out = Path(args.out) if args.out else run_dir
        out.mkdir(parents=True, exist_ok=True)
        _downsample_plot_csv(out / f"plot_{name}.csv", trace)
        n += 1
    print(f"exported {n} plot CSV(s)")
    return 0 if n else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spikegait", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="run output directory")
        p.add_argument("--scale", choices=("full", "ci"), default=None)

    p_train = sub.add_parser("train", help="train + evaluate an experiment")
    p_train.add_argument("config")
    common(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate stored weights")
    p_eval.add_argument("weights")
    p_eval.add_argument("config")
    common(p_eval)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_search = sub.add_parser("search", help="gait-parameter search")
    p_search.add_argument("config")
    common(p_search)
    p_search.set_defaults(func=_cmd_search)

    p_sweep = sub.add_parser("sweep", help="re-run with a config field swept")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True, help="dotted config path")
    p_sweep.add_argument("--values", nargs="+", required=True)
    common(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_export = sub.add_parser("export", help="regenerate plot CSVs from a run dir")
    p_export.add_argument("run_dir")
    p_export.add_argument("--out", default=None)
    p_export.set_defaults(func=_cmd_export)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
