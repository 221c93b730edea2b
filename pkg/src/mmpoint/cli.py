"""``mmpoint`` command line: run | eval-masks | afm."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from mmpoint import __version__
from mmpoint.array import build_virtual_array, compute_afm, load_layout, resolution_cuts
from mmpoint.errors import MmpointError, SchemaError
from mmpoint.io import write_pgm
from mmpoint.pipeline import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, evaluate_masks, load_run_config, run_pipeline


def _cmd_run(args) -> int:
    try:
        cfg = load_run_config(args.config, seed=args.seed, output_dir=args.out, products=args.products)
    except MmpointError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_pipeline(cfg)
    if result.status != EXIT_OK:
        print(f"stage '{result.manifest['failed_stage']}' failed: {result.manifest['error']}", file=sys.stderr)
    print(f"{result.manifest_path} sha256={result.manifest_sha256}")
    return result.status


def _cmd_eval_masks(args) -> int:
    for p in (args.ram, args.pred, args.truth):
        if not Path(p).is_file():
            print(f"config error: file not found: {p}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        report = evaluate_masks(args.ram, args.pred, args.truth)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MmpointError as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_afm(args) -> int:
    try:
        layout = load_layout(Path(args.layout).read_text())
    except (OSError, MmpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        array = build_virtual_array(layout)
        steer_az, steer_el = math.radians(args.steer_az), math.radians(args.steer_el)
        az_res, el_res = resolution_cuts(array, steer_az, steer_el)
        report = {"elements": len(array), "duplicates": len(array.duplicates), "az_res_deg": az_res, "el_res_deg": el_res}
        if args.out:
            az = np.radians(np.arange(-60.0, 60.0 + 1e-9, 0.25))
            el = np.radians(np.arange(-40.0, 40.0 + 1e-9, 0.5))
            afm = compute_afm(array, steer_az, steer_el, az, el)
            write_pgm(args.out, afm.values, {"el_rad": el, "az_rad": az}, scale=1.0)
            report["afm"] = str(args.out)
    except MmpointError as exc:
        print(f"afm failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(json.dumps(report, indent=1, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmpoint", description="Synthetic mmWave radar point-cloud toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate and process a scene from a run config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", type=Path, help="override the output directory")
    run.add_argument("--products", help="comma-separated subset of rdm,ram,cloud,ply,clusters,metrics ('' for none)")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval-masks", help="IoU of a predicted RAM mask against a truth mask or regions")
    ev.add_argument("ram", type=Path, help="RAM Cartesian PGM (its sidecar defines the grid)")
    ev.add_argument("pred", type=Path, help="predicted mask PGM")
    ev.add_argument("truth", type=Path, help="truth mask PGM or YAML region list")
    ev.add_argument("--out", type=Path, help="also write the JSON report here")
    ev.set_defaults(func=_cmd_eval_masks)

    afm = sub.add_parser("afm", help="angular resolution (and optional AFM image) of an array layout")
    afm.add_argument("layout", type=Path)
    afm.add_argument("--steer-az", type=float, default=0.0, help="degrees")
    afm.add_argument("--steer-el", type=float, default=0.0, help="degrees")
    afm.add_argument("--out", type=Path, help="write the AFM as a 16-bit PGM")
    afm.set_defaults(func=_cmd_afm)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
