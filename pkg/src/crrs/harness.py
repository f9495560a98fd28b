"""Desk-scale fitting of polygon boxes under the regression-loss variants.

A predicted box's 26 parameters are fitted to a fixed ground-truth box by
plain gradient descent.  Each loss configuration supplies a set of loss
streams (22 rectangle terms, 24 circle terms, the pixel IoU term, or a
combination) that are balanced per step by dynamic weight averaging.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .evaluation import GroundTruthRecord
from .geometry import COS, N_POINTS, SIN, GeometryError, InstanceMask, PolyBox, centroid_from_mask, sample_boundary
from .io import InputError, read_pgm
from .loss import (
    CONSTRUCTIONS,
    N_PARAMS,
    N_RECTS,
    circle_giou_loss,
    circle_losses_and_jacobian,
    rect_losses,
    rect_losses_and_jacobian,
)
from .weighting import WeightState

log = logging.getLogger(__name__)

LOSS_MODES = ("poly_only", "circles_giou", "rects_eiou", "circles_plus_poly", "rects_plus_poly")
SCHEDULES = ("cosine", "constant")


class FitError(ValueError):
    pass


@dataclass
class FitConfig:
    loss_mode: str = "rects_plus_poly"
    steps: int = 500
    step_size: float = 0.1
    temperature: float = 20.0
    ratio_mode: str = "mean"
    grid_w: int = 200
    grid_h: int = 200
    seed: int = 0
    poly_gradient_step: float = 0.5
    construction: str = "concentric"
    schedule: str = "cosine"
    backtracks: int = 20
    center_rate: float = 1.0 / 22

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise FitError(f"loss_mode must be one of {LOSS_MODES}")
        if self.steps < 1:
            raise FitError("steps must be >= 1")
        if not self.step_size > 0:
            raise FitError("step_size must be positive")
        if not self.temperature > 0:
            raise FitError("temperature must be positive")
        if not self.poly_gradient_step > 0:
            raise FitError("poly_gradient_step must be positive")
        if self.construction not in CONSTRUCTIONS:
            raise FitError(f"construction must be one of {sorted(CONSTRUCTIONS)}")
        if self.grid_w < 1 or self.grid_h < 1:
            raise FitError("grid dimensions must be positive")
        if self.schedule not in SCHEDULES:
            raise FitError(f"schedule must be one of {SCHEDULES}")
        if not self.center_rate > 0:
            raise FitError("center_rate must be positive")
        if self.backtracks < 0:
            raise FitError("backtracks must be >= 0")

    def step_at(self, step: int) -> float:
        if self.schedule == "constant":
            return self.step_size
        return 0.5 * self.step_size * (1.0 + math.cos(math.pi * step / self.steps))


@dataclass
class FitTrace:
    term_names: list[str]
    params: list[np.ndarray] = field(default_factory=list)
    losses: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    poly_iou: list[float] = field(default_factory=list)
    status: str = "ok"  # or "converged" (stopped early), "diverged"
    final_params: np.ndarray | None = None
    final_poly_iou: float = float("nan")

    @property
    def total_loss(self) -> list[float]:
        return [float(w @ l) for w, l in zip(self.weights, self.losses)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "total_loss", "poly_iou"]
                            + [f"loss_{n}" for n in self.term_names] + [f"weight_{n}" for n in self.term_names])
            for step, (tot, iou, l, w) in enumerate(zip(self.total_loss, self.poly_iou, self.losses, self.weights)):
                writer.writerow([step, repr(tot), repr(iou)] + [repr(float(v)) for v in l] + [repr(float(v)) for v in w])


class PolyIoUTerm:
    """Pixel IoU against a fixed target, with a central-difference gradient."""

    def __init__(self, gt: PolyBox, width: int, height: int, step: float):
        self.width, self.height, self.step = width, height, step
        self._gt = self._window(gt.params)
        if self._gt[2].sum() == 0:
            raise FitError("ground truth rasterizes empty on the grid")

    def _window(self, params):
        cx, cy, r = params[0], params[1], np.maximum(params[2:], 0.0)
        xs, ys = cx + r * COS, cy + r * SIN
        i0, j0, i1, j1 = _kernels.window_bounds(xs, ys, cx, cy, self.width, self.height)
        return i0, j0, _kernels.fan_coverage(xs, ys, cx, cy, i0, j0, i1, j1)

    def iou(self, params) -> float:
        gi, gj, gbits = self._gt
        pi, pj, pbits = self._window(params)
        return float(_kernels.window_iou(pbits, pi, pj, gbits, gi, gj))

    def loss_and_grad(self, params):
        loss = 1.0 - self.iou(params)
        grad = np.zeros(N_PARAMS)
        if loss == 0.0:
            # already at the minimum; zero is a valid subgradient
            return loss, grad
        h = self.step
        for p in range(N_PARAMS):
            up, down = params.copy(), params.copy()
            up[p] += h
            down[p] -= h
            grad[p] = ((1.0 - self.iou(up)) - (1.0 - self.iou(down))) / (2.0 * h)
        return loss, grad


def term_names(mode: str) -> list[str]:
    names = []
    if "rects" in mode:
        names += [f"rect{i}" for i in range(N_POINTS - 2)]
    if "circles" in mode:
        names += [f"circle{k}" for k in range(N_POINTS)]
    if "poly" in mode:
        names.append("poly")
    return names


def loss_streams(gt: PolyBox, params: np.ndarray, config: FitConfig, poly: PolyIoUTerm | None):
    """Per-stream losses (n,) and their Jacobian (n, 26) at ``params``."""
    pd = PolyBox(params[0], params[1], params[2:])
    parts, jacs = [], []
    if "rects" in config.loss_mode:
        l, j = rect_losses_and_jacobian(gt, pd, CONSTRUCTIONS[config.construction])
        parts.append(l)
        jacs.append(j)
    if "circles" in config.loss_mode:
        l, j = circle_losses_and_jacobian(gt, pd)
        parts.append(l)
        jacs.append(j)
    if poly is not None:
        l, g = poly.loss_and_grad(params)
        parts.append(np.array([l]))
        jacs.append(g[None, :])
    return np.concatenate(parts), np.vstack(jacs)


def loss_values(gt: PolyBox, params: np.ndarray, config: FitConfig, poly: PolyIoUTerm | None) -> np.ndarray:
    """The stream losses of ``loss_streams`` without their Jacobian."""
    pd = PolyBox(params[0], params[1], params[2:])
    parts = []
    if "rects" in config.loss_mode:
        parts.append(rect_losses(gt, pd, CONSTRUCTIONS[config.construction]))
    if "circles" in config.loss_mode:
        parts.append(circle_giou_loss(gt, pd))
    if poly is not None:
        parts.append([1.0 - poly.iou(params)])
    return np.concatenate(parts)


def _descend(params, grad, lr):
    out = params - lr * grad
    out[2:] = np.maximum(out[2:], 0.0)
    return out


def _line_search(params, grad, lr, accept, halvings):
    """Largest of ``lr, lr/2, ...`` whose step passes ``accept``; ``None`` if none does."""
    for _ in range(halvings + 1):
        trial = _descend(params, grad, lr)
        if accept(trial):
            return trial
        lr *= 0.5
    return None


def _guarded_step(gt, params, grad, lr, here, state, config, poly):
    """A step whose next recorded total loss does not exceed ``here``, or ``None``."""
    def accept(trial):
        if not np.all(np.isfinite(trial)):
            return True  # let the caller report the divergence
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = loss_values(gt, trial, config, poly)
        if not np.all(np.isfinite(nxt)):
            return False
        return bool(state.preview(nxt) @ nxt <= here)

    radii_only, center_only = grad.copy(), grad.copy()
    radii_only[:2] = 0.0
    center_only[2:] = 0.0
    for direction in (grad, radii_only, center_only):
        trial = _line_search(params, direction, lr, accept, config.backtracks)
        if trial is not None:
            return trial
    return None


def fit(gt: PolyBox, init: PolyBox, config: FitConfig) -> FitTrace:
    """Fit ``init`` towards ``gt`` by weighted gradient descent.

    The objective is the DWA-weighted sum of the active streams divided by
    the fixed number of per-point terms (22), so every mode shares one
    learning rate.  Steps are taken in units of the initial box's mean
    radius, so the step size means the same thing for small and large
    objects.  Radii are clamped at zero after every step.

    The centroid feeds every term while each radius feeds one or two, so
    its gradient is scaled by ``center_rate`` to keep the two in step.

    The IoU terms have kinks at the optimum, where a fixed step bounces
    from side to side.  Unless ``backtracks`` is 0, a step is accepted only
    if the weighted total loss that the next step will record does not
    exceed the current one; otherwise it is halved up to ``backtracks``
    times.  If the joint step never passes, the radii alone and then the
    centroid alone are tried.  When nothing passes the fit stops early with
    status ``"converged"``.
    """
    poly = PolyIoUTerm(gt, config.grid_w, config.grid_h, config.poly_gradient_step)
    uses_poly = "poly" in config.loss_mode
    names = term_names(config.loss_mode)
    state = WeightState(len(names), config.temperature, config.ratio_mode)
    trace = FitTrace(names)
    scale = max(float(np.mean(init.radii)), 1.0)
    params = init.params

    losses, jac = loss_streams(gt, params, config, poly if uses_poly else None)
    weights = state.update(losses)
    for step in range(config.steps):
        trace.params.append(params.copy())
        trace.losses.append(losses)
        trace.weights.append(weights)
        trace.poly_iou.append(poly.iou(params))

        # objective: weighted stream sum averaged over the 22 per-point terms
        grad = weights @ jac / N_RECTS
        grad[:2] *= config.center_rate
        lr = config.step_at(step) * scale**2
        if not config.backtracks:
            params = _descend(params, grad, lr)
        else:
            trial = _guarded_step(gt, params, grad, lr, float(weights @ losses), state, config,
                                  poly if uses_poly else None)
            if trial is None:
                trace.status = "converged"
                break
            params = trial
        if not np.all(np.isfinite(params)):
            trace.status = "diverged"
            return trace
        with np.errstate(over="ignore", invalid="ignore"):
            losses, jac = loss_streams(gt, params, config, poly if uses_poly else None)
        if not (np.all(np.isfinite(losses)) and np.all(np.isfinite(jac))):
            trace.status = "diverged"
            return trace
        weights = state.update(losses)

    trace.final_params = params
    trace.final_poly_iou = poly.iou(params)
    return trace


# synthetic target suite ----------------------------------------------------

SUITE_SCALES = (12.0, 22.0, 36.0)
SUITE_SHAPES = ("regular", "ellipse", "star", "lshape")


def _grid_size(scale: float) -> int:
    return int(math.ceil(6.0 * scale)) + 20


def _mask_target(values: np.ndarray) -> PolyBox:
    mask = InstanceMask(values)
    cx, cy = centroid_from_mask(mask)
    return sample_boundary(mask, cx, cy)


def make_target(shape: str, scale: float) -> tuple[PolyBox, int]:
    """One synthetic ground-truth box and its (square) grid size."""
    size = _grid_size(scale)
    c = size / 2.0
    if shape == "regular":
        return PolyBox.regular(c, c, scale), size
    if shape == "star":
        theta = np.arange(N_POINTS) * 2 * np.pi / N_POINTS
        return PolyBox(c, c, scale * (1.0 + 0.35 * np.cos(5 * theta))), size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    if shape == "ellipse":
        a, b, phi = 1.3 * scale, 0.7 * scale, np.deg2rad(30.0)
        u = (xx - c) * np.cos(phi) + (yy - c) * np.sin(phi)
        v = -(xx - c) * np.sin(phi) + (yy - c) * np.cos(phi)
        return _mask_target(((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)), size
    if shape == "lshape":
        s, t = 1.2 * scale, 1.2 * scale
        x, y = xx - c + 0.4 * s, yy - c + 0.4 * s
        leg1 = (x >= 0) & (x <= 2 * s) & (y >= 0) & (y <= t)
        leg2 = (x >= 0) & (x <= t) & (y >= 0) & (y <= 2 * s)
        return _mask_target((leg1 | leg2).astype(np.uint8)), size
    raise FitError(f"unknown shape {shape!r}")


def synthetic_suite() -> list[tuple[str, PolyBox, int]]:
    suite = []
    for shape in SUITE_SHAPES:
        for scale in SUITE_SCALES:
            box, size = make_target(shape, scale)
            suite.append((f"{shape}_{scale:g}", box, size))
    return suite


def initial_guess(gt: PolyBox, seed: int) -> PolyBox:
    """A prior-like first prediction: a circle of roughly the right size, displaced."""
    rng = np.random.default_rng(seed)
    mean_r = float(np.mean(gt.radii))
    angle = rng.uniform(0.0, 2.0 * np.pi)
    offset = rng.uniform(0.3, 0.7) * mean_r
    radius = mean_r * rng.uniform(0.7, 1.3)
    return PolyBox.regular(gt.cx + offset * np.cos(angle), gt.cy + offset * np.sin(angle), radius)


def _run_one(job):
    name, gt, size, seed, cfg = job
    config = FitConfig(**{**cfg, "grid_w": size, "grid_h": size, "seed": seed})
    trace = fit(gt, initial_guess(gt, seed), config)
    final = float("nan") if trace.status == "diverged" else trace.final_poly_iou
    return {"target": name, "seed": seed, "loss_mode": config.loss_mode, "construction": config.construction,
            "initial_poly_iou": trace.poly_iou[0], "final_poly_iou": final, "status": trace.status}


def worker_count() -> int:
    env = os.environ.get("POLYBOX_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_suite(variants, seeds=(0, 1, 2), steps: int = 500, suite=None, workers: int | None = None) -> list[dict]:
    """Run every (variant, target, seed) fit; ``variants`` maps a label to FitConfig overrides.

    Variants that resolve to the same FitConfig are fitted once and share results.
    """
    suite = suite if suite is not None else synthetic_suite()
    jobs, slots, keys = [], [], {}
    for label, overrides in variants.items():
        cfg = {"steps": steps, **overrides}
        key = tuple(sorted(asdict(FitConfig(**cfg)).items()))
        for n, (name, gt, size) in enumerate(suite):
            for seed in seeds:
                if (key, n, seed) not in keys:
                    keys[key, n, seed] = len(jobs)
                    jobs.append((name, gt, size, seed, cfg))
                slots.append((label, keys[key, n, seed]))
    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_one, jobs))
    else:
        done = [_run_one(job) for job in jobs]
    return [{**done[i], "variant": label} for label, i in slots]


TABLE2_VARIANTS = {mode: {"loss_mode": mode} for mode in LOSS_MODES}
TABLE1_VARIANTS = {
    "center_shared": {"loss_mode": "rects_eiou", "construction": "concentric"},
    "vertex_shared": {"loss_mode": "rects_eiou", "construction": "vertex_shared"},
}


def summarize(results) -> dict[str, float]:
    by_variant: dict[str, list[float]] = {}
    for res in results:
        by_variant.setdefault(res["variant"], []).append(res["final_poly_iou"])
    return {k: float(np.mean(v)) for k, v in by_variant.items()}


def ablate(steps: int = 500, seeds=(0, 1, 2), workers: int | None = None) -> dict:
    results = run_suite({**TABLE2_VARIANTS, **TABLE1_VARIANTS}, seeds, steps, workers=workers)
    return {"summary": summarize(results), "runs": results}


# mask ingestion -------------------------------------------------------------

_MASK_NAME = re.compile(r"^(?P<image>.+)_(?P<cls>\d+)_(?P<obj>\d+)\.pgm$")


def _ingest_one(path: Path):
    m = _MASK_NAME.match(path.name)
    if not m:
        raise InputError(f"{path}: name does not match <image_id>_<class_id>_<obj>.pgm")
    mask = read_pgm(path)
    cx, cy = centroid_from_mask(mask)
    box = sample_boundary(mask, cx, cy)
    return m["image"], int(m["cls"]), int(m["obj"]), mask.width, mask.height, box


def ingest_masks(directory) -> tuple[dict, int]:
    """Build a ground-truth manifest from per-object PGM masks.

    Returns the manifest and the number of skipped files.  Output order is
    by (image id, object index) regardless of file listing order.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm"))
    if not paths:
        log.warning("no masks found in %s", directory)
    rows, skipped = [], 0
    for path in paths:
        try:
            rows.append(_ingest_one(path))
        except (InputError, GeometryError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped += 1
    rows.sort(key=lambda r: (r[0], r[2], r[1]))
    images, annotations = {}, []
    for image_id, cls, _, w, h, box in rows:
        prev = images.setdefault(image_id, {"id": image_id, "width": w, "height": h})
        if (prev["width"], prev["height"]) != (w, h):
            log.warning("image %s: masks disagree on dimensions", image_id)
        annotations.append(GroundTruthRecord(image_id, cls, box).to_json())
    return {"images": list(images.values()), "annotations": annotations}, skipped


def config_from_json(obj: dict) -> FitConfig:
    known = {k: obj[k] for k in asdict(FitConfig()) if k in obj}
    return FitConfig(**known)
