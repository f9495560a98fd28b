"""Command-line entry point: ``crrs <command> ...``.

Exit codes: 0 success, 2 malformed input or rejected configuration,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .evaluation import Detection, EvaluationError, GroundTruthRecord, mean_ap, write_report
from .geometry import GeometryError, PolyBox, poly_iou
from .harness import FitError, ablate, config_from_json, fit, ingest_masks
from .io import InputError, load_json, load_polybox
from .loss import CONSTRUCTIONS, crrs_loss

EXIT_INPUT = 2
EXIT_DIVERGED = 3


def _grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return w, h


def _field(path, obj, key):
    if not isinstance(obj, dict) or key not in obj:
        raise InputError(f"{path}: missing field '{key}'")
    return obj[key]


def cmd_iou(args) -> int:
    a, b = load_polybox(args.a), load_polybox(args.b)
    print(poly_iou(a, b, *args.grid))
    return 0


def cmd_loss(args) -> int:
    gt, pd = load_polybox(args.gt), load_polybox(args.pd)
    vec = crrs_loss(gt, pd, *args.grid, construction=CONSTRUCTIONS[args.mode], with_circles=args.circles)
    print(json.dumps(vec.to_json()))
    return 0


def cmd_fit(args) -> int:
    obj = load_json(args.config)
    gt = _polybox_field(args.config, obj, "gt")
    init = _polybox_field(args.config, obj, "init")
    try:
        config = config_from_json(obj)
    except (FitError, TypeError) as exc:
        raise InputError(f"{args.config}: {exc}") from None
    trace = fit(gt, init, config)
    trace.write_csv(args.out)
    if trace.status == "diverged":
        print(f"fit diverged after {len(trace.losses)} steps; partial trace in {args.out}", file=sys.stderr)
        return EXIT_DIVERGED
    note = " (stopped early: no descent step left)" if trace.status == "converged" else ""
    print(f"final poly_iou {trace.final_poly_iou:.6f} after {len(trace.losses)} steps{note}; trace in {args.out}")
    return 0


def _polybox_field(path, obj, key) -> PolyBox:
    value = _field(path, obj, key)
    try:
        return PolyBox.from_json(value)
    except (GeometryError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {key}: {exc}") from None


def cmd_ingest(args) -> int:
    manifest, skipped = ingest_masks(args.masks)
    Path(args.out).write_text(json.dumps(manifest, indent=1))
    print(f"ingested {len(manifest['annotations'])} object(s), skipped {skipped}")
    return EXIT_INPUT if skipped else 0


def cmd_map(args) -> int:
    obj = load_json(args.gt)
    images = _field(args.gt, obj, "images")
    annotations = _field(args.gt, obj, "annotations")
    try:
        grid = {str(im["id"]): (int(im["width"]), int(im["height"])) for im in images}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.gt}: images: bad entry ({exc})") from None
    gts = []
    for n, ann in enumerate(annotations):
        try:
            gts.append(GroundTruthRecord.from_json(ann))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{args.gt}: annotations[{n}]: {exc}") from None
    dets = []
    with open(args.dets) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                dets.append(Detection.from_json(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{args.dets}: line {lineno}: {exc}") from None
    missing = {d.image_id for d in dets} - grid.keys()
    if missing:
        raise InputError(f"{args.dets}: image_id {sorted(missing)[0]!r} not in {args.gt}")
    report = mean_ap(dets, gts, args.iou_thresh, grid)
    write_report(report, args.out)
    print(f"mAP@{args.iou_thresh:g} = {report.map:.4f}")
    return 0


def cmd_ablate(args) -> int:
    result = ablate(steps=args.steps, seeds=tuple(range(args.seeds)))
    summary = result["summary"]
    print(f"{'variant':<20} {'mean final poly_iou':>20}")
    for name, value in sorted(summary.items(), key=lambda kv: -kv[1]):
        print(f"{name:<20} {value:>20.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crrs", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("iou", help="pixel IoU of two PolyBox JSON files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--grid", type=_grid, default=(512, 512))
    p.set_defaults(func=cmd_iou)

    p = sub.add_parser("loss", help="print the loss vector of a prediction against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pd", required=True)
    p.add_argument("--mode", choices=sorted(CONSTRUCTIONS), default="concentric")
    p.add_argument("--circles", action="store_true", help="include the 24-circle GIoU baseline terms")
    p.add_argument("--grid", type=_grid, default=(512, 512))
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("fit", help="fit a prediction to ground truth and write the trace CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ingest", help="build a ground-truth manifest from PGM instance masks")
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("map", help="evaluate detections against a manifest")
    p.add_argument("--dets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--out", default="report.json")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("ablate", help="run every loss configuration on the synthetic suite")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, GeometryError, EvaluationError, FitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
