"""Command line front end.

Two subcommands: ``extract`` runs the full pipeline from a frames directory
and a regions file to a feature pack on disk, and ``synth-regions`` writes a
regular grid of region boxes for every discovered frame.  Reports go to
stdout as JSON; diagnostics go to stderr.  Exit codes: 0 on success, 2 for
input or configuration problems, 3 for unexpected failures.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ExtractorConfig
from .errors import ExtractorError
from .extract import extract
from .frames import scan_frames
from .packio import write_pack
from .regions import read_regions, synth_regions, write_regions


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="packextract",
        description="Extract region features and task scores into a feature pack.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_extract = sub.add_parser(
        "extract", help="score regions from frame images and write a pack"
    )
    p_extract.add_argument("--frames", required=True, help="frame image directory")
    p_extract.add_argument("--regions", required=True, help="regions JSONL file")
    p_extract.add_argument("--config", required=True, help="extraction config JSON")
    p_extract.add_argument("--out", required=True, help="output pack directory")

    p_synth = sub.add_parser(
        "synth-regions", help="write a grid of region boxes covering every frame"
    )
    p_synth.add_argument("--frames", required=True, help="frame image directory")
    p_synth.add_argument(
        "--grid", type=int, default=4, help="boxes per side (default 4)"
    )
    p_synth.add_argument("--out", required=True, help="output regions JSONL file")
    return parser


def _run_extract(args) -> dict:
    config = ExtractorConfig.from_json(args.config)
    frames = scan_frames(args.frames)
    regions = read_regions(args.regions)
    print(
        f"scoring {len(regions)} regions with {config.backbone}/{config.layer}",
        file=sys.stderr,
    )
    result = extract(frames, regions, config)
    write_pack(args.out, result)
    return {
        "out": args.out,
        "records": len(result.records),
        "videos": len(result.frame_sizes),
        "feature_dim": int(result.features.shape[1]),
        "tasks": list(result.tasks),
    }


def _run_synth_regions(args) -> dict:
    frames = scan_frames(args.frames)
    regions = synth_regions(frames, args.grid)
    write_regions(args.out, regions)
    return {
        "out": args.out,
        "regions": len(regions),
        "frames": len(frames.paths),
        "grid": args.grid,
    }


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"extract": _run_extract, "synth-regions": _run_synth_regions}
    try:
        report = handlers[args.command](args)
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last resort boundary
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
