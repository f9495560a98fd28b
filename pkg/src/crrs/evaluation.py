"""Detection matching and mAP with polygon IoU as the overlap measure."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .geometry import PolyBox, poly_iou

CLASS_NAMES = ("person", "bicycle", "car", "motorcycle", "bus", "train", "truck", "traffic light")


class EvaluationError(ValueError):
    pass


@dataclass
class Detection:
    image_id: str
    class_id: int
    score: float
    box: PolyBox

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise EvaluationError(f"score must lie in [0, 1], got {self.score}")

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "class_id": self.class_id, "score": self.score, "box": self.box.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> Detection:
        return cls(str(obj["image_id"]), int(obj["class_id"]), float(obj["score"]), PolyBox.from_json(obj["box"]))


@dataclass
class GroundTruthRecord:
    image_id: str
    class_id: int
    box: PolyBox
    matched: bool = False

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "class_id": self.class_id, "box": self.box.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> GroundTruthRecord:
        return cls(str(obj["image_id"]), int(obj["class_id"]), PolyBox.from_json(obj["box"]))


def _grid_for(grid, image_id):
    if isinstance(grid, dict):
        return grid[image_id]
    return grid


def match_detections(dets, gts, iou_threshold: float = 0.5, grid_w: int = 0, grid_h: int = 0, *, grid=None):
    """Greedy matching in descending-score order.

    Returns ``(order, labels)``: indices of ``dets`` sorted by score (stable,
    so ties keep input order) and a boolean TP flag for each of them.  Grid
    dimensions come from ``grid_w, grid_h`` or from ``grid``, which may be a
    ``(w, h)`` pair or a dict keyed by image id.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise EvaluationError("iou_threshold must lie in (0, 1)")
    grid = grid if grid is not None else (grid_w, grid_h)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    pool = defaultdict(list)
    for g in gts:
        g.matched = False
        pool[(g.image_id, g.class_id)].append(g)

    labels = []
    for i in order:
        det = dets[i]
        w, h = _grid_for(grid, det.image_id)
        best, best_iou = None, -1.0
        for g in pool.get((det.image_id, det.class_id), ()):
            if g.matched:
                continue
            iou = poly_iou(det.box, g.box, w, h)
            if iou > best_iou:
                best, best_iou = g, iou
        if best is not None and best_iou >= iou_threshold:
            best.matched = True
            labels.append(True)
        else:
            labels.append(False)
    return order, np.array(labels, dtype=bool)


def pr_curve(labels, n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(labels, dtype=float))
    fp = np.cumsum(~np.asarray(labels, dtype=bool))
    recall = tp / max(n_gt, 1)
    precision = tp / np.maximum(tp + fp, np.finfo(float).eps)
    return recall, precision


def average_precision(labels, n_gt: int) -> float:
    """All-point interpolated AP for TP/FP labels in descending-score order.

    Recall rises by ``1 / n_gt`` at each TP, so the area under the
    precision envelope is the mean, over TPs, of the best precision at or
    after that rank.  Counts are integers, so the sum is kept as an exact
    fraction and rounded once.
    """
    labels = np.asarray(labels, dtype=bool)
    if n_gt == 0 or labels.size == 0:
        return 0.0
    tp = np.cumsum(labels)
    best, area = Fraction(0), Fraction(0)
    for k in range(labels.size - 1, -1, -1):
        best = max(best, Fraction(int(tp[k]), k + 1))
        if labels[k]:
            area += best
    return float(area / n_gt)


@dataclass
class EvalReport:
    map: float
    per_class: dict
    iou_threshold: float
    curves: dict

    def to_json(self) -> dict:
        return {"map": self.map, "per_class": self.per_class, "iou_threshold": self.iou_threshold}


def mean_ap(dets, gts, iou_threshold: float = 0.5, grid=(0, 0)) -> EvalReport:
    """Unweighted mean of per-class AP over classes that have ground truth."""
    if not gts:
        raise EvaluationError("no ground truth")
    classes = sorted({g.class_id for g in gts})
    per_class, curves = {}, {}
    for c in classes:
        cdets = [d for d in dets if d.class_id == c]
        cgts = [g for g in gts if g.class_id == c]
        _, labels = match_detections(cdets, cgts, iou_threshold, grid=grid)
        ap = average_precision(labels, len(cgts))
        per_class[str(c)] = {"ap": ap, "n_gt": len(cgts), "n_det": len(cdets)}
        curves[c] = pr_curve(labels, len(cgts))
    return EvalReport(float(np.mean([v["ap"] for v in per_class.values()])), per_class, iou_threshold, curves)


def load_manifest(path) -> tuple[dict, list[GroundTruthRecord]]:
    """Read a ground-truth manifest; returns ``({image_id: (w, h)}, records)``."""
    with open(path) as fh:
        obj = json.load(fh)
    grid = {str(im["id"]): (int(im["width"]), int(im["height"])) for im in obj["images"]}
    return grid, [GroundTruthRecord.from_json(a) for a in obj["annotations"]]


def save_manifest(path, images, records) -> None:
    obj = {"images": images, "annotations": [r.to_json() for r in records]}
    Path(path).write_text(json.dumps(obj, indent=1))


def load_detections(path) -> list[Detection]:
    dets = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                dets.append(Detection.from_json(json.loads(line)))
    return dets


def write_report(report: EvalReport, path) -> list[Path]:
    """Write the JSON report and one PR-curve CSV per class next to it."""
    path = Path(path)
    path.write_text(json.dumps(report.to_json(), indent=1))
    written = [path]
    for c, (recall, precision) in report.curves.items():
        out = path.with_name(f"{path.stem}_pr_class{c}.csv")
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "recall", "precision"])
            for i, (r, p) in enumerate(zip(recall, precision), start=1):
                writer.writerow([i, f"{r:.6f}", f"{p:.6f}"])
        written.append(out)
    return written
