"""Command-line interface: detect, evaluate, synth and bench subcommands.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure.
The OVCHANGE_CONFIG environment variable supplies a default --config path.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import decode, synth, tensorio
from .errors import DataError, UsageError
from .pipeline import ABLATIONS, PipelineConfig, run_bench, run_detect, run_evaluate

ENV_CONFIG = "OVCHANGE_CONFIG"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config JSON (defaults from "
                        f"${ENV_CONFIG}, then built-ins)")
    parser.add_argument(
        "--ablate",
        action="append",
        default=[],
        metavar="NAME[,NAME...]",
        help=f"disable stages; names: {', '.join(ABLATIONS)}",
    )
    parser.add_argument("--workers", type=int, help="worker pool size")
    parser.add_argument("--tau-u8", type=int, help="override the 8-bit threshold")
    parser.add_argument("--segments", type=int, help="override the superpixel count")
    parser.add_argument(
        "--exclude-bank-competitors",
        action="store_true",
        help="drop a bank's own prompts from each member's competitor set",
    )
    parser.add_argument(
        "--gate-off-mode",
        choices=("constant_one", "pure_delta"),
        help="what --ablate no_geogate substitutes: a neutral constant-1 "
        "gate (default) or skipping fusion entirely",
    )


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    path = args.config or os.environ.get(ENV_CONFIG)
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    names: set[str] = set()
    for chunk in args.ablate:
        names.update(n.strip() for n in chunk.split(",") if n.strip())
    if names:
        cfg = cfg.with_ablations(sorted(names))
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.tau_u8 is not None:
        cfg = replace(cfg, decode=replace(cfg.decode, tau_u8=args.tau_u8))
    if args.segments is not None:
        cfg = replace(cfg, slic=replace(cfg.slic, n_segments=args.segments))
    if args.exclude_bank_competitors:
        cfg = replace(cfg, exclude_bank_competitors=True)
    if args.gate_off_mode is not None:
        cfg = replace(cfg, gate_off_mode=args.gate_off_mode)
    return cfg


def _print_report_table(report_dict: dict) -> None:
    cols = ("precision", "recall", "iou", "f1")
    header = f"{'class':<16}" + "".join(f"{c:>11}" for c in cols)
    print(header)
    for name, vals in report_dict["per_class"].items():
        print(f"{name:<16}" + "".join(f"{vals[c]:>11.2f}" for c in cols))
    avg = report_dict["class_average"]
    print(f"{'class avg.':<16}" + "".join(f"{avg[c]:>11.2f}" for c in cols))


def _write_report(report_dict: dict, out_dir: Path, stem: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(report_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision", "recall", "iou", "f1", "tp", "fp", "fn", "tn"])
        for name, vals in report_dict["per_class"].items():
            c = vals["counts"]
            writer.writerow(
                [name, vals["precision"], vals["recall"], vals["iou"], vals["f1"],
                 c["tp"], c["fp"], c["fn"], c["tn"]]
            )
        avg = report_dict["class_average"]
        writer.writerow(
            ["class_average", avg["precision"], avg["recall"], avg["iou"], avg["f1"],
             "", "", "", ""]
        )


def _cmd_detect(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out_dir = Path(args.out_dir)
    dump = out_dir if args.dump_intermediates else None
    for manifest in args.manifest:
        result = run_detect(manifest, args.class_name, cfg, dump_dir=dump)
        out_dir.mkdir(parents=True, exist_ok=True)
        tensorio.write_dense_array(
            out_dir / f"{result.pair_id}.mask.npy", result.mask.astype(np.uint8)
        )
        decode.write_mask_png(out_dir / f"{result.pair_id}.mask.png", result.mask)
        print(
            f"{result.pair_id}: {int(result.mask.sum())} changed px "
            f"of {result.mask.size} -> {out_dir / (result.pair_id + '.mask.png')}"
        )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out_dir = Path(args.out_dir)
    report = run_evaluate(
        args.dataset,
        args.class_name or [],
        cfg,
        mask_dir=out_dir / "masks" if args.write_masks else None,
        per_pair_average=args.per_pair_average,
    )
    payload = report.as_dict()
    payload["config_hash"] = cfg.config_hash()
    payload["ablations"] = sorted(cfg.ablations)
    _write_report(payload, out_dir, args.report_name)
    _print_report_table(payload)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    region = synth.Region(*args.region, kind=args.region_kind)
    spec = synth.SceneSpec(
        seed=args.seed,
        height=args.size,
        width=args.size,
        k=args.vocab,
        token_depth=args.token_depth,
        grid_h=args.grid,
        grid_w=args.grid,
        planted_region=region,
        queried_class=args.queried_class,
        competitor_strength=args.competitor_strength,
        pseudo_change_noise=args.noise,
        token_change_magnitude=args.token_change,
        token_noise=args.token_noise,
    )
    dataset = synth.gen_dataset(spec, args.pairs, args.out_dir)
    print(f"wrote {args.pairs} pair(s); dataset index at {dataset}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    report = run_bench(args.manifest, args.class_name, cfg, repetitions=args.repetitions)
    out = json.dumps(report, indent=2, sort_keys=True)
    print(out)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.json").write_text(out + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovchange",
        description="Training-free open-vocabulary change detection over "
        "precomputed concept scores and geometry tokens.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="infer a change mask for one or more pairs")
    p.add_argument("manifest", nargs="+", help="pair manifest JSON path(s)")
    p.add_argument("--class", dest="class_name", required=True, help="queried class")
    p.add_argument("--out-dir", default="out", help="where masks (and dumps) go")
    p.add_argument(
        "--dump-intermediates",
        action="store_true",
        help="write {pair}.{delta,gate,fused,pooled,y0}.npy next to the masks",
    )
    _add_common(p)
    p.set_defaults(fn=_cmd_detect)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("dataset", help="dataset index JSON listing pairs and GT")
    p.add_argument(
        "--class",
        dest="class_name",
        action="append",
        help="class to evaluate (repeatable; defaults to the dataset's class_ids)",
    )
    p.add_argument("--out-dir", default="out", help="report output directory")
    p.add_argument("--report-name", default="report", help="report file stem")
    p.add_argument("--write-masks", action="store_true", help="keep per-pair masks")
    p.add_argument(
        "--per-pair-average",
        action="store_true",
        help="macro-average metrics over pairs instead of summing counts",
    )
    _add_common(p)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("synth", help="generate deterministic synthetic fixtures")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pairs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="image height and width")
    p.add_argument("--vocab", type=int, default=4, help="vocabulary size")
    p.add_argument("--grid", type=int, default=8, help="token grid side")
    p.add_argument("--token-depth", type=int, default=8)
    p.add_argument(
        "--region",
        type=int,
        nargs=4,
        default=(20, 20, 44, 44),
        metavar=("ROW0", "COL0", "ROW1", "COL1"),
    )
    p.add_argument("--region-kind", choices=("rect", "ellipse"), default="rect")
    p.add_argument("--queried-class", type=int, default=0)
    p.add_argument("--competitor-strength", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.0, help="appearance noise std")
    p.add_argument("--token-change", type=float, default=float(np.pi),
                   help="token rotation inside the region (radians)")
    p.add_argument("--token-noise", type=float, default=0.0,
                   help="token jitter outside the region")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("bench", help="latency/throughput over repeated runs")
    p.add_argument("manifest", nargs="+", help="pair manifest JSON path(s)")
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out-dir", help="also write bench.json here")
    _add_common(p)
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors
        return 1 if exc.code else 0
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # invariant violation or bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
