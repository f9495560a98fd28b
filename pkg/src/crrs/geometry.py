"""Polygon boxes: mask moments, ray sampling, rasterization and pixel IoU.

Coordinates follow the image convention: x grows to the right (column
index), y grows downward (row index), and pixel ``(i, j)`` has its center
at the integer point ``(i, j)``.  Angles are measured from the positive
x-axis, so increasing angle runs clockwise on screen.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels

N_POINTS = 24
RAY_STEP = 0.5


class GeometryError(ValueError):
    pass


class EmptyRayWarning(UserWarning):
    """A sampling ray found no object pixel beyond the centroid."""


def ray_angles(n: int = N_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Cosines and sines of ``k * 360 / n`` degrees, exact on the axes."""
    k = np.arange(n)
    theta = 2.0 * np.pi * k / n
    cos, sin = np.cos(theta), np.sin(theta)
    if n % 4 == 0:
        q = n // 4
        cos[::q] = [1.0, 0.0, -1.0, 0.0]
        sin[::q] = [0.0, 1.0, 0.0, -1.0]
    return cos, sin


COS, SIN = ray_angles()


@dataclass
class InstanceMask:
    """Grayscale grid of one object; nonzero pixels belong to it."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise GeometryError(f"mask must be a non-empty 2-D grid, got shape {self.values.shape}")
        if np.any(self.values < 0):
            raise GeometryError("mask values must be non-negative")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> InstanceMask:
        values = np.asarray(values)
        if values.size != width * height:
            raise GeometryError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))


@dataclass
class PolyBox:
    """Centroid plus radial distances at equally spaced angles."""

    cx: float
    cy: float
    radii: np.ndarray

    def __post_init__(self):
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.radii = np.asarray(self.radii, dtype=float).copy()
        if self.radii.shape != (N_POINTS,):
            raise GeometryError(f"radii must have {N_POINTS} entries, got shape {self.radii.shape}")
        if not (np.all(np.isfinite(self.radii)) and math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise GeometryError("PolyBox parameters must be finite")
        if np.any(self.radii < 0):
            raise GeometryError("radii must be non-negative")

    @property
    def n_points(self) -> int:
        return N_POINTS

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector ``(cx, cy, r_0, ..., r_23)``."""
        return np.concatenate([[self.cx, self.cy], self.radii])

    @classmethod
    def from_params(cls, params) -> PolyBox:
        params = np.asarray(params, dtype=float)
        return cls(params[0], params[1], params[2:])

    @classmethod
    def regular(cls, cx: float, cy: float, radius: float) -> PolyBox:
        return cls(cx, cy, np.full(N_POINTS, float(radius)))

    def translated(self, dx: float, dy: float) -> PolyBox:
        return PolyBox(self.cx + dx, self.cy + dy, self.radii)

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "radii": [float(r) for r in self.radii]}

    @classmethod
    def from_json(cls, obj: dict) -> PolyBox:
        missing = [key for key in ("cx", "cy", "radii") if key not in obj]
        if missing:
            raise GeometryError(f"PolyBox is missing field(s): {', '.join(missing)}")
        return cls(obj["cx"], obj["cy"], obj["radii"])


@dataclass
class PixelCoverage:
    width: int
    height: int
    bits: np.ndarray

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def centroid_from_mask(mask: InstanceMask) -> tuple[float, float]:
    """First-moment centroid ``(M10 / M00, M01 / M00)`` over all mask pixels."""
    v = mask.values.astype(float)
    m00 = v.sum()
    if m00 == 0:
        raise GeometryError("empty mask")
    rows, cols = np.indices(v.shape)
    m10 = (cols * v).sum()
    m01 = (rows * v).sum()
    return float(m10 / m00), float(m01 / m00)


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def sample_boundary(mask: InstanceMask, cx: float, cy: float, n: int = N_POINTS) -> PolyBox:
    """Cast ``n`` equal-angle rays from the centroid and measure the object extent.

    Each ray is marched in half-pixel steps, visiting the pixel nearest to
    every sample point.  The boundary is placed halfway between the center
    of the farthest object pixel visited and the center of the pixel visited
    by the next sample (background, or off the grid).  Rays that visit no
    object pixel other than the centroid's own get radius 0 and raise an
    ``EmptyRayWarning``.
    """
    if n != N_POINTS:
        raise GeometryError(f"only n={N_POINTS} is supported")
    on = mask.values != 0
    h, w = on.shape
    ci, cj = int(_round_half_up(cx)), int(_round_half_up(cy))
    if not (0 <= ci < w and 0 <= cj < h and on[cj, ci]):
        raise GeometryError("centroid outside object")

    cos, sin = ray_angles(n)
    t = np.arange(0.0, math.hypot(w, h) + 2.0, RAY_STEP)
    radii = np.zeros(n)
    empty = []
    for k in range(n):
        pi = _round_half_up(cx + t * cos[k])
        pj = _round_half_up(cy + t * sin[k])
        hit = (pi >= 0) & (pi < w) & (pj >= 0) & (pj < h)
        hit[hit] = on[pj[hit], pi[hit]]
        hit &= (pi != ci) | (pj != cj)
        if not hit.any():
            empty.append(k)
            continue
        last = np.flatnonzero(hit)[-1]
        inner = math.hypot(pi[last] - cx, pj[last] - cy)
        outer = math.hypot(pi[last + 1] - cx, pj[last + 1] - cy)
        radii[k] = 0.5 * (inner + outer)
    if empty:
        warnings.warn(f"rays {empty} found no object pixel beyond the centroid", EmptyRayWarning, stacklevel=2)
    return PolyBox(cx, cy, radii)


def polygon_vertices(box: PolyBox) -> np.ndarray:
    """Vertex array of shape (24, 2): ``(cx + r_k cos, cy + r_k sin)``."""
    return np.stack([box.cx + box.radii * COS, box.cy + box.radii * SIN], axis=1)


def point_in_triangle(a, b, c, j) -> bool:
    """Cross-product test; points on an edge count as inside."""
    return bool(_kernels.in_triangle(float(a[0]), float(a[1]), float(b[0]), float(b[1]),
                                     float(c[0]), float(c[1]), float(j[0]), float(j[1])))


def shoelace_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def coverage_window(box: PolyBox, width: int, height: int) -> tuple[int, int, np.ndarray]:
    """Coverage restricted to the clipped circumscribed rectangle.

    Returns the window's top-left pixel ``(i0, j0)`` and its boolean bits.
    """
    xs = box.cx + box.radii * COS
    ys = box.cy + box.radii * SIN
    i0, j0, i1, j1 = _kernels.window_bounds(xs, ys, box.cx, box.cy, width, height)
    return i0, j0, _kernels.fan_coverage(xs, ys, box.cx, box.cy, i0, j0, i1, j1)


def rasterize(box: PolyBox, width: int, height: int) -> PixelCoverage:
    if width < 1 or height < 1:
        raise GeometryError("grid dimensions must be positive")
    i0, j0, window = coverage_window(box, width, height)
    bits = np.zeros((height, width), dtype=bool)
    bits[j0:j0 + window.shape[0], i0:i0 + window.shape[1]] = window
    return PixelCoverage(width, height, bits)


def poly_iou(a: PolyBox, b: PolyBox, width: int, height: int) -> float:
    """Pixel IoU of two polygon boxes rasterized on the same grid; 0 for an empty union."""
    ia, ja, wa = coverage_window(a, width, height)
    ib, jb, wb = coverage_window(b, width, height)
    return float(_kernels.window_iou(wa, ia, ja, wb, ib, jb))
