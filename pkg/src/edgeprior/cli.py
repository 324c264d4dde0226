"""Command line entry point: ``edgeprior <convert|evaluate|compare|sweep|noise-report>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .stats import format_table

SWEEP_HELP = """Two-stage Canny sweep. Stage 1 evaluates C1-C4 at aperture 3, Stage 2
re-runs the Stage 1 winner's thresholds at apertures 5 and 7. Configs are
ranked by micro node F1 + edge F1; on equal scores the lower config index
(earlier evaluated) wins."""


def _add_run_flags(p: argparse.ArgumentParser, condition: bool = True) -> None:
    p.add_argument("--manifest", required=True, type=Path, help="JSON/YAML dataset manifest")
    p.add_argument("--config", type=Path, help="YAML/JSON run configuration; flags override it")
    if condition:
        p.add_argument("--condition", choices=("baseline", "edgeflow"))
    p.add_argument("--runs", type=int)
    p.add_argument("--canny", help="low,high,aperture or a config name such as C3")
    p.add_argument("--out", type=Path)
    p.add_argument("--mock", type=Path, help="fixture directory laid out as <id>/<condition>/run<k>.txt")
    p.add_argument("--endpoint", help="base URL of an OpenAI-compatible API")
    p.add_argument("--model", help="vision model id")
    p.add_argument("--fixer-model", help="code model id used by the repair loop")
    p.add_argument("--workers", type=int)


def _config(args) -> pipeline.RunConfig:
    return pipeline.load_config(
        args.config,
        condition=getattr(args, "condition", None),
        runs=args.runs,
        canny=args.canny,
        out=args.out,
        mock=args.mock,
        endpoint_url=args.endpoint,
        model=args.model,
        fixer_model=args.fixer_model,
        workers=args.workers,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeprior", description="Flowchart image to Mermaid conversion and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert flowchart images to Mermaid code")
    _add_run_flags(p)

    p = sub.add_parser("evaluate", help="score converted runs against ground truth")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--runs-dir", required=True, type=Path, help="<out>/<condition> directory")
    p.add_argument("--runs", type=int, help="expected runs per flowchart; missing ones score as empty")

    p = sub.add_parser("compare", help="paired statistics of condition A over condition B")
    p.add_argument("a", type=Path, help="results.json (or its directory) of the treatment")
    p.add_argument("b", type=Path, help="results.json (or its directory) of the baseline")
    p.add_argument("--out", type=Path, help="where to write stats.json and stats.txt")
    p.add_argument("--paired-delta", action="store_true",
                   help="use within-pair dominance for Cliff's delta instead of all cross pairs")

    p = sub.add_parser("sweep", help="two-stage Canny hyperparameter sweep", description=SWEEP_HELP)
    _add_run_flags(p, condition=False)

    p = sub.add_parser("noise-report", help="background noise and colour instability per image")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "convert":
        cfg = _config(args)
        manifest = pipeline.load_manifest(args.manifest)
        records = pipeline.convert(manifest, cfg)
        ev = pipeline.evaluate(cfg.out / cfg.condition, manifest, runs=cfg.runs)
        valid = sum(r.valid for r in records)
        print(f"{len(records)} records, {valid} valid; results in {cfg.out / cfg.condition}")
        print(json.dumps(ev.micro, indent=2))
    elif args.command == "evaluate":
        manifest = pipeline.load_manifest(args.manifest)
        ev = pipeline.evaluate(args.runs_dir, manifest, runs=args.runs)
        print(json.dumps(ev.micro, indent=2))
    elif args.command == "compare":
        ev_a, ev_b = pipeline.load_evaluation(args.a), pipeline.load_evaluation(args.b)
        reports = pipeline.compare(ev_a, ev_b, out_dir=args.out, paired_delta=args.paired_delta)
        print(format_table(reports, f"{ev_a.condition} vs {ev_b.condition}"), end="")
    elif args.command == "sweep":
        cfg = _config(args)
        manifest = pipeline.load_manifest(args.manifest)
        result = pipeline.sweep(manifest, cfg)
        print(pipeline.format_sweep(result), end="")
    elif args.command == "noise-report":
        manifest = pipeline.load_manifest(args.manifest)
        doc = pipeline.noise_report(manifest, out_dir=args.out)
        for row in doc["entries"]:
            if row["sigma"] is None:
                print(f"{row['id']:<24} error: {row['error']}")
            else:
                print(f"{row['id']:<24} sigma={row['sigma']:.2f} mu={row['mu']:.2f}")
        if doc["mean_sigma"] is not None:
            print(f"{'mean':<24} sigma={doc['mean_sigma']:.2f} mu={doc['mean_mu']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
