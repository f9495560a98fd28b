"""Concentric-rectangle EIoU loss for 24-point polygon boxes.

Every rectangle is axis-aligned and each of its four edges is a linear
function of the box parameters: ``edge = centroid_coord + coef * r[idx]``.
A construction is therefore just a ``(22, 4)`` table of coefficients and
radius indices, which gives both the rectangles and their Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import COS, N_POINTS, SIN, PolyBox, poly_iou

EPS = 1e-7
N_RECTS = N_POINTS - 2
AXIS_POINTS = (0, 6, 12, 18)
OFF_AXIS = tuple(k for k in range(N_POINTS) if k not in AXIS_POINTS)
N_PARAMS = N_POINTS + 2

# edge order used throughout: x1, y1, x2, y2
_IS_X = np.array([True, False, True, False])


@dataclass(frozen=True)
class CenteredRect:
    cx: float
    cy: float
    half_w: float
    half_h: float

    @property
    def width(self) -> float:
        return 2.0 * self.half_w

    @property
    def height(self) -> float:
        return 2.0 * self.half_h

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.half_w, self.cy - self.half_h, self.cx + self.half_w, self.cy + self.half_h)


@dataclass(frozen=True)
class AxisRect:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class RectPairGeometry:
    iou: float
    rho_sq: float
    c_w: float
    c_h: float
    c_diag: float


@dataclass
class LossVector:
    rect_losses: np.ndarray
    poly_loss: float
    circle_losses: np.ndarray | None = field(default=None)

    def to_json(self) -> dict:
        out = {"rect": [float(v) for v in self.rect_losses], "poly": float(self.poly_loss)}
        if self.circle_losses is not None:
            out["circle"] = [float(v) for v in self.circle_losses]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> LossVector:
        circle = obj.get("circle")
        return cls(np.asarray(obj["rect"], dtype=float), float(obj["poly"]),
                   None if circle is None else np.asarray(circle, dtype=float))


@dataclass(frozen=True)
class Construction:
    """Edge table: ``edge[i, e] = (cx or cy) + coef[i, e] * r[ridx[i, e]]``."""

    name: str
    coef: np.ndarray
    ridx: np.ndarray

    def edges(self, params: np.ndarray) -> np.ndarray:
        base = np.where(_IS_X, params[0], params[1])
        return base + self.coef * params[2:][self.ridx]

    def jacobian(self) -> np.ndarray:
        """d edges / d params, shape (22, 4, 26)."""
        jac = np.zeros((N_RECTS, 4, N_PARAMS))
        jac[:, _IS_X, 0] = 1.0
        jac[:, ~_IS_X, 1] = 1.0
        rows, cols = np.indices(self.ridx.shape)
        jac[rows, cols, 2 + self.ridx] = self.coef
        return jac


def _concentric_table(name: str, axis_pairs) -> Construction:
    coef = np.zeros((N_RECTS, 4))
    ridx = np.zeros((N_RECTS, 4), dtype=int)
    for i, (kx, ky) in enumerate(axis_pairs):
        coef[i] = (-1.0, -1.0, 1.0, 1.0)
        ridx[i] = (kx, ky, kx, ky)
    for i, k in enumerate(OFF_AXIS, start=2):
        c, s = abs(COS[k]), abs(SIN[k])
        coef[i] = (-c, -s, c, s)
        ridx[i] = k
    return Construction(name, coef, ridx)


def _vertex_shared_table() -> Construction:
    coef = np.zeros((N_RECTS, 4))
    ridx = np.zeros((N_RECTS, 4), dtype=int)
    # diagonal P0-P6 spans [cx, cx + r0] x [cy, cy + r6]
    coef[0] = (0.0, 0.0, 1.0, 1.0)
    ridx[0] = (0, 6, 0, 6)
    # diagonal P12-P18 spans [cx - r12, cx] x [cy - r18, cy]
    coef[1] = (-1.0, -1.0, 0.0, 0.0)
    ridx[1] = (12, 18, 12, 18)
    for i, k in enumerate(OFF_AXIS, start=2):
        c, s = COS[k], SIN[k]
        coef[i] = (min(c, 0.0), min(s, 0.0), max(c, 0.0), max(s, 0.0))
        ridx[i] = k
    return Construction("vertex_shared", coef, ridx)


CONCENTRIC = _concentric_table("concentric", ((0, 6), (12, 18)))
# alternative axis pairing: (P0, P18) and (P12, P6)
TRANSPOSED = _concentric_table("concentric_transposed", ((0, 18), (12, 6)))
VERTEX_SHARED = _vertex_shared_table()
CONSTRUCTIONS = {c.name: c for c in (CONCENTRIC, TRANSPOSED, VERTEX_SHARED)}


def concentric_rects(box: PolyBox, axis_pairs=((0, 6), (12, 18))) -> list[CenteredRect]:
    """22 rectangles centered on the centroid; the off-axis ones have half-diagonal r_k."""
    r = box.radii
    rects = [CenteredRect(box.cx, box.cy, r[kx], r[ky]) for kx, ky in axis_pairs]
    rects += [CenteredRect(box.cx, box.cy, r[k] * abs(COS[k]), r[k] * abs(SIN[k])) for k in OFF_AXIS]
    return rects


def vertex_shared_rects(box: PolyBox) -> list[AxisRect]:
    """22 rectangles that each have the centroid as one corner."""
    e = VERTEX_SHARED.edges(box.params)
    return [AxisRect(*row) for row in e]


def eiou_edges(gt: np.ndarray, pd: np.ndarray, with_grad: bool = False):
    """Vectorized EIoU over rows of ``(x1, y1, x2, y2)``.

    Returns ``(eiou, parts)`` where ``parts`` holds iou, rho_sq, c_w, c_h;
    with ``with_grad`` also returns d eiou / d pd-edges, shape (m, 4).
    Coincident edges take the mean of the two one-sided derivatives.
    """
    gt = np.atleast_2d(np.asarray(gt, dtype=float))
    pd = np.atleast_2d(np.asarray(pd, dtype=float))
    gx1, gy1, gx2, gy2 = gt.T
    x1, y1, x2, y2 = pd.T
    gw, gh = gx2 - gx1, gy2 - gy1
    w, h = x2 - x1, y2 - y1

    iw_raw = np.minimum(x2, gx2) - np.maximum(x1, gx1)
    ih_raw = np.minimum(y2, gy2) - np.maximum(y1, gy1)
    iw, ih = np.maximum(iw_raw, 0.0), np.maximum(ih_raw, 0.0)
    inter = iw * ih
    union = w * h + gw * gh - inter
    union_d = np.maximum(union, EPS)
    iou = np.minimum(inter / union_d, 1.0)

    cw = np.maximum(x2, gx2) - np.minimum(x1, gx1)
    ch = np.maximum(y2, gy2) - np.minimum(y1, gy1)
    cw_d, ch_d = np.maximum(cw, EPS), np.maximum(ch, EPS)
    diag_sq = cw_d**2 + ch_d**2

    dx = 0.5 * (x1 + x2 - gx1 - gx2)
    dy = 0.5 * (y1 + y2 - gy1 - gy2)
    rho_sq = dx**2 + dy**2
    dw, dh = gw - w, gh - h

    eiou = iou - rho_sq / diag_sq - dw**2 / cw_d**2 - dh**2 / ch_d**2
    same = np.all(gt == pd, axis=1)
    eiou = np.where(same, 1.0, eiou)
    parts = {"iou": np.where(same, 1.0, iou), "rho_sq": rho_sq, "c_w": cw, "c_h": ch}
    if not with_grad:
        return eiou, parts

    m = len(eiou)
    overlap_x = (iw_raw >= 0.0).astype(float)
    overlap_y = (ih_raw >= 0.0).astype(float)
    # d iw / d (x1, x2), d ih / d (y1, y2)
    # coincident edges: mean of the two one-sided derivatives
    ge = lambda u, v: (u > v) + 0.5 * (u == v)  # noqa: E731
    d_iw = np.stack([-ge(x1, gx1), ge(gx2, x2)], axis=1) * overlap_x[:, None]
    d_ih = np.stack([-ge(y1, gy1), ge(gy2, y2)], axis=1) * overlap_y[:, None]
    d_cw = np.stack([-ge(gx1, x1), ge(x2, gx2)], axis=1) * (cw >= EPS)[:, None]
    d_ch = np.stack([-ge(gy1, y1), ge(y2, gy2)], axis=1) * (ch >= EPS)[:, None]
    live_union = (union >= EPS)[:, None]

    grad = np.zeros((m, 4))
    for axis, (lo, hi) in enumerate(((0, 2), (1, 3))):
        if axis == 0:
            d_inter = d_iw * ih[:, None]
            d_area = np.stack([-h, h], axis=1)
            d_c, c_d, d_rho = d_cw, cw_d, dx
            d_size, size_diff = np.array([-1.0, 1.0]), dw
        else:
            d_inter = d_ih * iw[:, None]
            d_area = np.stack([-w, w], axis=1)
            d_c, c_d, d_rho = d_ch, ch_d, dy
            d_size, size_diff = np.array([-1.0, 1.0]), dh
        d_union = (d_area - d_inter) * live_union
        d_iou = (d_inter * union_d[:, None] - inter[:, None] * d_union) / union_d[:, None] ** 2
        d_diag = 2.0 * c_d[:, None] * d_c
        d_dist = (d_rho[:, None] * diag_sq[:, None] - rho_sq[:, None] * d_diag) / diag_sq[:, None] ** 2
        # size penalty (g - s)^2 / c^2 with ds/d(lo, hi) = (-1, 1)
        d_pen = (-2.0 * size_diff[:, None] * d_size[None, :] * c_d[:, None] ** 2
                 - size_diff[:, None] ** 2 * 2.0 * c_d[:, None] * d_c) / c_d[:, None] ** 4
        g = d_iou - d_dist - d_pen
        grad[:, lo], grad[:, hi] = g[:, 0], g[:, 1]
    return eiou, parts, grad


def rect_eiou(gt, pd) -> tuple[float, RectPairGeometry]:
    """EIoU of two axis-aligned rectangles (``CenteredRect`` or ``AxisRect``)."""
    eiou, parts = eiou_edges(np.array([gt.corners]), np.array([pd.corners]))
    cw, ch = float(parts["c_w"][0]), float(parts["c_h"][0])
    geom = RectPairGeometry(float(parts["iou"][0]), float(parts["rho_sq"][0]), cw, ch, math.hypot(cw, ch))
    return float(eiou[0]), geom


def rect_losses(gt: PolyBox, pd: PolyBox, construction: Construction = CONCENTRIC) -> np.ndarray:
    eiou, _ = eiou_edges(construction.edges(gt.params), construction.edges(pd.params))
    return 1.0 - eiou


def rect_losses_and_jacobian(gt: PolyBox, pd: PolyBox, construction: Construction = CONCENTRIC):
    """Per-rectangle losses (22,) and their Jacobian w.r.t. the 26 prediction parameters."""
    eiou, _, d_edges = eiou_edges(construction.edges(gt.params), construction.edges(pd.params), with_grad=True)
    jac = -np.einsum("ie,iep->ip", d_edges, construction.jacobian())
    return 1.0 - eiou, jac


def crrs_loss(gt: PolyBox, pd: PolyBox, grid_w: int, grid_h: int, *,
              construction: Construction = CONCENTRIC, with_circles: bool = False) -> LossVector:
    circles = circle_giou_loss(gt, pd) if with_circles else None
    return LossVector(rect_losses(gt, pd, construction), 1.0 - poly_iou(gt, pd, grid_w, grid_h), circles)


def crrs_gradient(gt: PolyBox, pd: PolyBox, construction: Construction = CONCENTRIC) -> np.ndarray:
    """Gradient of the summed rectangle losses w.r.t. ``(cx, cy, r_0..r_23)`` of ``pd``."""
    _, jac = rect_losses_and_jacobian(gt, pd, construction)
    return jac.sum(axis=0)


def _circle_terms(a, b, d):
    """Intersection area of circles with radii a, b at distance d, and its partials in b and d."""
    inter = np.zeros_like(b)
    d_b = np.zeros_like(b)
    d_d = np.zeros_like(b)
    contained = d <= np.abs(a - b)
    lens = ~contained & (d < a + b)
    m = np.minimum(a, b)
    inter[contained] = np.pi * m[contained] ** 2
    ac, bc = a[contained], b[contained]
    d_b[contained] = 2.0 * np.pi * bc * ((bc < ac) + 0.5 * (bc == ac))
    if lens.any():
        al, bl, dl = a[lens], b[lens], d[lens]
        alpha = np.arccos(np.clip((dl**2 + al**2 - bl**2) / (2 * dl * al), -1.0, 1.0))
        beta = np.arccos(np.clip((dl**2 + bl**2 - al**2) / (2 * dl * bl), -1.0, 1.0))
        k = (-dl + al + bl) * (dl + al - bl) * (dl - al + bl) * (dl + al + bl)
        root = np.sqrt(np.maximum(k, 0.0))
        # arccos near +-1 loses precision; keep the area inside its true range
        inter[lens] = np.clip(al**2 * alpha + bl**2 * beta - 0.5 * root, 0.0, np.pi * m[lens] ** 2)
        d_b[lens] = 2.0 * bl * beta
        d_d[lens] = -root / dl
    return inter, d_b, d_d


def _circle_giou(gt: PolyBox, pd: PolyBox, with_grad: bool = False):
    a, b = gt.radii, pd.radii
    ddx, ddy = pd.cx - gt.cx, pd.cy - gt.cy
    dist = math.hypot(ddx, ddy)
    d = np.full(N_POINTS, dist)
    inter, di_b, di_d = _circle_terms(a, b, d)
    union = np.pi * (a**2 + b**2) - inter
    union_d = np.maximum(union, EPS)
    nested = d + np.minimum(a, b) <= np.maximum(a, b)
    r_enc = np.where(nested, np.maximum(a, b), 0.5 * (d + a + b))
    enclose = np.maximum(np.pi * r_enc**2, EPS)
    giou = inter / union_d - (enclose - union) / enclose
    trivial = (a == 0) & (b == 0) & (dist == 0)
    loss = np.where(trivial, 0.0, 1.0 - giou)
    if not with_grad:
        return loss

    live = union >= EPS
    du_b = (2 * np.pi * b - di_b) * live
    du_d = -di_d * live
    dr_b = np.where(nested, (b > a) + 0.5 * (b == a), 0.5)
    dr_d = np.where(nested, 0.0, 0.5)
    de_b = 2 * np.pi * r_enc * dr_b * (np.pi * r_enc**2 >= EPS)
    de_d = 2 * np.pi * r_enc * dr_d * (np.pi * r_enc**2 >= EPS)

    def d_loss(di, du, de):
        # loss = 2 - I/U - U/E
        return -(di * union_d - inter * du) / union_d**2 - (du * enclose - union * de) / enclose**2

    g_b = np.where(trivial, 0.0, d_loss(di_b, du_b, de_b))
    g_d = np.where(trivial, 0.0, d_loss(di_d, du_d, de_d))
    jac = np.zeros((N_POINTS, N_PARAMS))
    if dist > 0:
        jac[:, 0] = g_d * ddx / dist
        jac[:, 1] = g_d * ddy / dist
    jac[np.arange(N_POINTS), 2 + np.arange(N_POINTS)] = g_b
    return loss, jac


def circle_giou_loss(gt: PolyBox, pd: PolyBox) -> np.ndarray:
    """24 concentric-circle GIoU losses, enclosing shape = smallest enclosing circle."""
    return _circle_giou(gt, pd)


def circle_losses_and_jacobian(gt: PolyBox, pd: PolyBox):
    return _circle_giou(gt, pd, with_grad=True)
