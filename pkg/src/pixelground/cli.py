"""Command-line entry point.

Subcommands:
  build-bench    synthesize a multiple-choice benchmark from a raster directory
  evaluate       score a responses file against a benchmark file
  simulate       run a scripted inference scenario and write its trace
  make-fixtures  write the bundled synthetic rasters and scenarios
  mask-ops       spot-check the segmentation losses on a pair of mask files

Every command is deterministic given its inputs and --seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchforge, evalharness, fixtures, losses
from .geoquery import BuildingSet, SemanticRaster
from .raster import BinaryMask, RleMask, rle_decode
from .scenario import ScenarioError, load_scenario


def _fail(msg: str, code: int = 2) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_build_bench(args) -> int:
    raster_dir = Path(args.raster_dir)
    if not raster_dir.is_dir():
        return _fail(f"raster directory not readable: {raster_dir}")
    raster_paths = sorted(p for p in raster_dir.glob("*.json")
                          if not p.name.endswith(".buildings.json"))
    building_paths = sorted(raster_dir.glob("*.buildings.json"))
    if not raster_paths and not building_paths:
        return _fail(f"no raster or building files in {raster_dir}")

    tasks = args.tasks.split(",") if args.tasks else list(benchforge.TASK_SHARES)
    raster_tasks = [t for t in tasks if t in benchforge.RASTER_TASKS]
    pools: dict = {t: [] for t in tasks}
    for path in raster_paths:
        raster = SemanticRaster.load(path)
        for s in benchforge.generate_l1(raster, seed=args.seed, tasks=raster_tasks,
                                        raster_path=str(path)):
            pools.setdefault(s.task, []).append(s)
    if "building_change" in tasks:
        for path in building_paths:
            for s in benchforge.generate_building_change(
                    BuildingSet.load(path), fixtures.BUILDING_CANVAS,
                    fixtures.BUILDING_CANVAS, seed=args.seed, source_path=str(path)):
                pools["building_change"].append(s)

    shares = {t: benchforge.TASK_SHARES.get(t, 100) for t in tasks}
    chosen = benchforge.select_samples(pools, seed=args.seed, shares=shares)
    if not chosen:
        return _fail("no valid samples could be generated")
    stats = benchforge.assemble_benchmark(chosen, args.out)
    print(json.dumps(stats.to_json(), sort_keys=True, indent=1))
    return 0


def cmd_evaluate(args) -> int:
    try:
        records, report = evalharness.evaluate_files(args.bench, args.responses)
    except (evalharness.ResponseSchemaError, FileNotFoundError, KeyError) as exc:
        return _fail(str(exc))
    print(json.dumps(report.to_json(), sort_keys=True, indent=1))
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(json.dumps(
            {"report": report.to_json(),
             "records": [r.to_json() for r in records]}, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError) as exc:
        return _fail(str(exc))
    if args.token_cap:
        from dataclasses import replace
        scenario = type(scenario)(question=scenario.question,
                                  generator=scenario.generator,
                                  decoder=scenario.decoder,
                                  provider=scenario.provider,
                                  config=replace(scenario.config, token_cap=args.token_cap))
    trace = scenario.run()
    out = Path(args.out) if args.out else Path(args.scenario).with_suffix(".trace.jsonl")
    record = dict(trace.to_json())
    record["id"] = Path(args.scenario).stem
    out.write_text(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {out} ({len(trace.seg_events())} seg events, answer={trace.answer!r})")
    return 0


def cmd_make_fixtures(args) -> int:
    written = fixtures.write_all(Path(args.out))
    for group, paths in written.items():
        print(f"{group}: {len(paths)} files")
    return 0


def cmd_mask_ops(args) -> int:
    pred = RleMask.from_json(json.loads(Path(args.pred).read_text()))
    gt = RleMask.from_json(json.loads(Path(args.gt).read_text()))
    gt_mask = rle_decode(gt)
    prob = losses.ProbMask(probs=rle_decode(pred).pixels.astype(float))
    d, _ = losses.dice_loss(prob, gt_mask)
    c, _ = losses.pixel_ce(prob, gt_mask)
    breakdown = losses.total_loss(0.0, d, c, lambda_seg=args.lambda_seg)
    print(json.dumps({"dice": d, "ce": c, "lambda_seg": args.lambda_seg,
                      "seg_total": breakdown.total,
                      "iou": evalharness.mask_iou(pred, gt)}, sort_keys=True, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pixelground")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-bench", help="synthesize a benchmark from rasters")
    p.add_argument("raster_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", default="", help="comma-separated task filter")
    p.set_defaults(func=cmd_build_bench)

    p = sub.add_parser("evaluate", help="score responses against a benchmark")
    p.add_argument("bench")
    p.add_argument("responses")
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="run a scripted inference scenario")
    p.add_argument("scenario")
    p.add_argument("--out", default="")
    p.add_argument("--token-cap", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-fixtures", help="write bundled fixture files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_fixtures)

    p = sub.add_parser("mask-ops", help="loss/IoU spot checks on two RLE mask files")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--lambda-seg", type=float, default=losses.DEFAULT_LAMBDA_SEG)
    p.set_defaults(func=cmd_mask_ops)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
