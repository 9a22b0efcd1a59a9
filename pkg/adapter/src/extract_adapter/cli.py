"""Command-line entry point for feature extraction."""

from __future__ import annotations

import argparse
import json
import sys

from .backbones import BackboneUnavailable
from .extract import ExtractionJob, ImageLoadError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract-adapter",
        description="Export promptable-segmentation and geometry-encoder "
        "outputs for a bi-temporal image pair into the manifest layout "
        "consumed by the change-detection CLI.",
    )
    parser.add_argument("--image-a", help="date-a RGB image (PNG/JPEG)")
    parser.add_argument("--image-b", help="date-b RGB image")
    parser.add_argument("--prompts", help="comma-separated vocabulary")
    parser.add_argument("--mode", choices=("real", "mock"), default="mock")
    parser.add_argument("--seed", type=int, help="required in mock mode")
    parser.add_argument("--layer", type=int, default=23, help="token layer index")
    parser.add_argument("--resolution", type=int, default=336,
                        help="geometry-encoder processing resolution")
    parser.add_argument("--fallback-mock", action="store_true",
                        help="in real mode, degrade to mock when weights are absent")
    parser.add_argument("--config", help="job JSON overriding the flags above")
    parser.add_argument("--out-dir", required=True)
    return parser


def job_from_args(args: argparse.Namespace) -> ExtractionJob:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            return ExtractionJob.from_dict(json.load(fh))
    if not (args.image_a and args.image_b and args.prompts):
        raise ValueError("--image-a, --image-b and --prompts are required "
                         "unless --config is given")
    return ExtractionJob(
        image_a=args.image_a,
        image_b=args.image_b,
        vocabulary=[p.strip() for p in args.prompts.split(",") if p.strip()],
        mode=args.mode,
        seed=args.seed,
        token_layer=args.layer,
        resolution=args.resolution,
        fallback_to_mock=args.fallback_mock,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        job = job_from_args(args)
        manifest = extract(job, args.out_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ImageLoadError, BackboneUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
