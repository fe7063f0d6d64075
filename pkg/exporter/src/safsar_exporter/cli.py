"""Command line for the exporter."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backbones import BackboneError
from .export import (
    ExportError,
    ExportJob,
    load_descriptions,
    load_split_map,
    plan_manifest,
    run_export,
)
from .videos import DecodeError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="safsar-export",
        description="Extract per-video features and per-class text features "
                    "into a safsar feature cache.",
    )
    p.add_argument("--videos", required=True,
                   help="root directory with one subfolder of videos per class")
    p.add_argument("--descriptions", required=True,
                   help="JSON file mapping class folder name to description sentence")
    p.add_argument("--out", required=True, help="cache directory to write")
    p.add_argument("--video-backbone", default="toy",
                   help="'toy' or 'torchvision:r3d_18' (default: toy)")
    p.add_argument("--text-backbone", default="toy",
                   help="'toy' or 'hf:bert-base-uncased' (default: toy)")
    p.add_argument("--no-text", action="store_true",
                   help="skip text features entirely")
    p.add_argument("--frames", type=int, default=8,
                   help="uniformly sampled frames per video (default: 8)")
    p.add_argument("--dim", type=int, default=64,
                   help="feature width for the toy backbones (default: 64)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the toy video backbone weights")
    p.add_argument("--split", default="test", choices=("train", "val", "test"),
                   help="split tag for classes not covered by --split-map")
    p.add_argument("--split-map", default=None,
                   help="JSON file mapping class folder name to train/val/test")
    p.add_argument("--dry-run", action="store_true",
                   help="print the planned manifest and exit without extracting")
    return p


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return exc.code if isinstance(exc.code, int) else 2
    try:
        job = ExportJob(
            video_root=Path(args.videos),
            descriptions=load_descriptions(args.descriptions),
            out_dir=Path(args.out),
            video_backbone=args.video_backbone,
            text_backbone=args.text_backbone,
            frames=args.frames,
            dim=args.dim,
            seed=args.seed,
            split_map=load_split_map(args.split_map),
            default_split=args.split,
            with_text=not args.no_text,
        )
        if args.dry_run:
            print(json.dumps(plan_manifest(job), indent=2, sort_keys=True))
            return 0
        result = run_export(job)
        print(f"exported {result.exported} videos at d={result.dim} to {args.out} "
              f"({len(result.skipped)} skipped)")
        return 0
    except (ExportError, BackboneError, DecodeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
