"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Log verbosity comes from the ``TSDFPP_LOG_LEVEL`` environment variable
(DEBUG, INFO, WARNING, ...; default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .frontend import FrontendConfig
from .pipeline import (
    ConfigError,
    DataError,
    PipelineConfig,
    compare_modes,
    export_dataset,
    run_pipeline,
)
from .simulator import load_scene
from .voxel_core import GridParams, MapMode

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
LOG_ENV = "TSDFPP_LOG_LEVEL"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="tsdfpp",
        description="Multi-object volumetric mapping of a simulated scene or a recorded sequence.",
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", type=Path, help="scene script (YAML)")
    src.add_argument("--dataset", type=Path, help="recorded sequence directory")
    p.add_argument("--mode", choices=[m.value for m in MapMode], default=MapMode.TSDF_PLUS_PLUS.value)
    p.add_argument("--voxel-size", type=float, default=0.01, help="meters (default 0.01)")
    p.add_argument("--truncation-mult", type=float, default=10.0,
                   help="truncation distance in voxels (default 10)")
    p.add_argument("--tau-overlap", type=float, default=0.8,
                   help="segment/mask overlap needed to match (default 0.8)")
    p.add_argument("--seed", type=int, default=None, help="overrides the scene's noise seed")
    p.add_argument("--out", type=Path, default=None, help="output directory for artifacts")
    p.add_argument("--save-map", type=Path, default=None, help="write the final map here")
    p.add_argument("--load-map", type=Path, default=None, help="start from this saved map")
    p.add_argument("--compare", action="store_true", help="run both map modes and report the delta")
    p.add_argument("--export-dataset", type=Path, default=None, metavar="DIR",
                   help="write the scene's frames as a dataset and exit")
    return p


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    try:
        grid = GridParams.from_multiplier(args.voxel_size, args.truncation_mult)
        frontend = FrontendConfig(tau_overlap=args.tau_overlap)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(
        mode=MapMode(args.mode),
        grid=grid,
        frontend=frontend,
        scene_path=args.scene,
        dataset=args.dataset,
        out=args.out,
        seed=args.seed,
        save_map=args.save_map,
        load_map=args.load_map,
    )


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def _summary(report) -> str:
    lines = [f"mode {report.mode}: {report.frames} frames, peak blocks {report.peak_blocks}"]
    for o in report.objects:
        lines.append(
            f"  object {o.object_id}: {o.observed_voxels} voxels, completeness {_fmt(o.completeness)}"
        )
    if report.revealed is not None:
        r = report.revealed
        lines.append(
            f"  revealed region: completeness {_fmt(r.completeness)}, holes {r.holes}, "
            f"background voxels changed {r.changed_voxels}/{r.compared_voxels}"
        )
    t = report.mean_timing()
    lines.append("  mean seconds per frame: " + ", ".join(f"{k} {v:.3f}" for k, v in t.items()))
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
        if args.export_dataset is not None:
            if args.scene is None:
                raise UsageError("--export-dataset needs --scene")
            try:
                export_dataset(load_scene(args.scene), args.export_dataset)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{args.scene}: {exc}") from None
            print(f"wrote dataset to {args.export_dataset}")
            return EXIT_OK
        if args.compare:
            comp, _ = compare_modes(cfg)
            print(_summary(comp.tsdfpp))
            print(_summary(comp.standard))
            delta = comp.delta()
            print("delta (tsdfpp - standard): " + ", ".join(f"{k} {v}" for k, v in sorted(delta.items())))
        else:
            print(_summary(run_pipeline(cfg).report))
    except UsageError as exc:
        print(f"tsdfpp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"tsdfpp: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"tsdfpp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
