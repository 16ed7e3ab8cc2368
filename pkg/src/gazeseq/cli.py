"""Command-line entry point wiring the full pipeline.

Subcommands: scenario validate|rasterize, gen, preprocess, train, kfold,
stream, export-plot. Exit codes: 0 success, 1 runtime failure, 2 usage error.
All randomness is governed by explicit --seed flags.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .modelio import load_weights, save_weights
from .oracle import (
    PersonaRanges,
    load_traces_csv,
    population_stats,
    sample_population,
    save_personas_json,
    save_traces_csv,
    simulate_population,
)
from .preprocess import (
    augment_balance,
    build_dataset,
    default_bins,
    export_dataset_csv,
    kfold_split,
    load_dataset,
    save_dataset,
)
from .runtime import StreamSession, run_stream
from .scenario import rasterize, resolve_scenario, validate_scenario
from .trainer import (
    TrainConfig,
    dataset_arrays,
    report_to_dict,
    run_kfold,
    save_report,
    train_model,
)


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _provenance(seed, inputs=()):
    return {
        "tool": "gazeseq",
        "version": __version__,
        "seed": seed,
        "inputs": {str(p): _digest(p) for p in inputs},
    }


def cmd_scenario(args) -> int:
    spec = resolve_scenario(args.scenario)
    violations = validate_scenario(spec)
    if args.action == "validate":
        if violations:
            for v in violations:
                print(f"violation: {v}")
            return 1
        print(f"scenario {spec.id}: ok ({len(spec.events)} events, "
              f"{spec.duration_s:g} s, {spec.n_classes} classes)")
        return 0
    # rasterize
    matrix = rasterize(spec)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + matrix.labels)
        writer.writerows(matrix.values.tolist())
    print(f"wrote {matrix.n_frames}x{matrix.values.shape[1]} matrix to {args.out}")
    return 0


def cmd_gen(args) -> int:
    spec = resolve_scenario(args.scenario)
    ranges = PersonaRanges()
    if args.ranges:
        with open(args.ranges, encoding="utf-8") as fh:
            ranges = PersonaRanges.from_dict(json.load(fh))
    personas = sample_population(args.participants, base_seed=args.seed, ranges=ranges)
    traces = simulate_population(spec, personas, base_seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        save_traces_csv([trace], out / f"trace_{trace.participant_id:03d}.csv")
    save_traces_csv(traces, out / "traces.csv")
    save_personas_json(
        personas,
        out / "personas.json",
        meta={"provenance": _provenance(args.seed), "scenario": spec.id},
    )
    print(f"wrote {len(traces)} traces and personas.json to {out}")
    return 0


def _load_traces_arg(path, scenario_id):
    p = Path(path)
    if p.is_dir():
        combined = p / "traces.csv"
        if combined.exists():
            return load_traces_csv(combined, scenario_id), combined
        raise FileNotFoundError(f"no traces.csv in {p}")
    return load_traces_csv(p, scenario_id), p


def cmd_preprocess(args) -> int:
    spec = resolve_scenario(args.scenario)
    traces, traces_path = _load_traces_arg(args.traces, spec.id)
    bins = default_bins(spec)
    matrix = rasterize(spec)
    dataset = build_dataset(matrix, traces, bins, spec.id, stride=args.stride)
    if args.balance:
        dataset = augment_balance(dataset, seed=args.seed)
    if args.kfold:
        dataset = kfold_split(
            dataset, k=args.kfold, seed=args.seed,
            by_participant=args.group_by_participant,
        )
    save_dataset(dataset, args.out)
    meta = {
        "provenance": _provenance(args.seed, [traces_path]),
        "scenario": spec.id,
        "n_samples": len(dataset.samples),
        "class_histogram": dataset.class_histogram.tolist(),
    }
    with open(str(args.out) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.csv:
        export_dataset_csv(dataset, args.csv)
    print(f"wrote {len(dataset.samples)} samples to {args.out} "
          f"(histogram {dataset.class_histogram.tolist()})")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        arch=args.arch,
        seed=args.seed,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
    )


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    X, y, _ = dataset_arrays(dataset)
    config = _train_config(args)
    model, log = train_model(X, y, dataset.n_classes, config)
    save_weights(model, args.out)
    print(f"trained {args.arch} for {len(log.epochs)} epochs, "
          f"best val top-1 {log.best_val_top1:.4f}; weights -> {args.out}")
    return 0


def cmd_kfold(args) -> int:
    dataset = load_dataset(args.dataset)
    config = _train_config(args)
    reports, summary, blobs = run_kfold(
        dataset, config, k=args.k, workers=args.workers
    )
    if args.weights_dir:
        wdir = Path(args.weights_dir)
        wdir.mkdir(parents=True, exist_ok=True)
        for fold, blob in enumerate(blobs):
            (wdir / f"fold_{fold}.gzwt").write_bytes(blob)
    doc = report_to_dict(
        args.arch,
        args.scenario,
        reports,
        summary,
        provenance=_provenance(args.seed, [args.dataset]),
    )
    save_report(doc, args.report)
    mean = summary["test_top1"]["mean"]
    print(f"{args.k}-fold {args.arch}: mean test top-1 {mean:.4f} -> {args.report}")
    return 0


def cmd_stream(args) -> int:
    model = load_weights(args.weights)
    spec = resolve_scenario(args.scenario_meta)
    session = StreamSession(model, spec, policy=args.policy)
    run_stream(session, sys.stdin, sys.stdout)
    return 0


def cmd_export_plot(args) -> int:
    from .plots import render_command_figure, render_population_figure

    out_csv = Path(args.out)
    fig_path = args.figure or out_csv.with_suffix(".png")
    if args.traces:
        traces = load_traces_csv(args.traces)
        mean, std = population_stats(traces)
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "t_s", "mean_yaw_deg", "std_yaw_deg"])
            for f, (m, s) in enumerate(zip(mean, std)):
                writer.writerow([f, f / 10.0, repr(float(m)), repr(float(s))])
        render_population_figure(mean, std, fig_path)
    else:
        with open(args.commands, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        t = [float(r["t_s"]) for r in rows]
        yaw = [float(r["yaw_deg"]) for r in rows]
        cls = [int(r["class"]) for r in rows]
        switched = [bool(int(r["switched"])) for r in rows]
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "class", "yaw_deg", "switched"])
            for row in zip(t, cls, yaw, (int(s) for s in switched)):
                writer.writerow(row)
        render_command_figure(t, yaw, switched, fig_path)
    print(f"wrote {out_csv} and {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazeseq",
        description="Social-scene gaze prediction pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="validate or rasterize a scenario")
    p.add_argument("action", choices=["validate", "rasterize"])
    p.add_argument("scenario", help="built-in id (s1, s2) or scenario JSON path")
    p.add_argument("--out", help="output CSV (rasterize)")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("gen", help="generate a synthetic gaze population")
    p.add_argument("--scenario", required=True)
    p.add_argument("--participants", type=int, default=41)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ranges", help="persona range overrides (JSON)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="traces -> windowed GZDS dataset")
    p.add_argument("--traces", required=True, help="traces CSV or gen output dir")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="output .gzds path")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--kfold", type=int, default=0, metavar="K")
    p.add_argument("--group-by-participant", action="store_true")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="also export an inspection CSV")
    p.set_defaults(func=cmd_preprocess)

    def add_train_flags(p):
        p.add_argument("--arch", required=True, choices=["lstm", "transformer"])
        p.add_argument("--dataset", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--max-epochs", type=int, default=100)
        p.add_argument("--patience", type=int, default=10)

    p = sub.add_parser("train", help="train one model on a full dataset")
    add_train_flags(p)
    p.add_argument("--out", required=True, help="output .gzwt weights path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="k-fold cross-validation")
    add_train_flags(p)
    p.add_argument("--report", required=True, help="output metrics JSON")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--weights-dir", help="also write per-fold .gzwt weights here")
    p.add_argument("--scenario", default="", help="scenario label for the report")
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("stream", help="serve the EVT/TICK line protocol on stdio")
    p.add_argument("--weights", required=True)
    p.add_argument("--scenario-meta", required=True,
                   help="scenario providing feature layout and class bins")
    p.add_argument("--policy", choices=["argmax", "top3-hysteresis"],
                   default="argmax")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("export-plot", help="plot-data CSV + rendered figure")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--traces", help="population traces CSV")
    group.add_argument("--commands", help="session command log CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--figure", help="figure path (default: out with .png)")
    p.set_defaults(func=cmd_export_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "scenario" and args.action == "rasterize" and not args.out:
        parser.error("rasterize requires --out")
    try:
        return args.func(args)
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
