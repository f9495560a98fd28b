"""Compiled pixel kernels shared by rasterization and IoU."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def in_triangle(ax, ay, bx, by, cx, cy, jx, jy):
    c1 = (bx - ax) * (jy - ay) - (by - ay) * (jx - ax)
    c2 = (cx - bx) * (jy - by) - (cy - by) * (jx - bx)
    c3 = (ax - cx) * (jy - cy) - (ay - cy) * (jx - cx)
    area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if area == 0.0:
        # collinear or point triangle: only points on the segment hull
        if c1 != 0.0 or c2 != 0.0 or c3 != 0.0:
            return False
        return (min(ax, bx, cx) <= jx <= max(ax, bx, cx)
                and min(ay, by, cy) <= jy <= max(ay, by, cy))
    return (c1 >= 0.0 and c2 >= 0.0 and c3 >= 0.0) or (c1 <= 0.0 and c2 <= 0.0 and c3 <= 0.0)


@njit(cache=True)
def window_bounds(xs, ys, cx, cy, width, height):
    """Inclusive pixel bounds of the circumscribed rectangle, clipped to the grid."""
    x_lo = min(cx, xs.min())
    x_hi = max(cx, xs.max())
    y_lo = min(cy, ys.min())
    y_hi = max(cy, ys.max())
    i0 = max(0, int(math.ceil(x_lo)))
    i1 = min(width - 1, int(math.floor(x_hi)))
    j0 = max(0, int(math.ceil(y_lo)))
    j1 = min(height - 1, int(math.floor(y_hi)))
    return i0, j0, i1, j1


@njit(cache=True)
def fan_coverage(xs, ys, cx, cy, i0, j0, i1, j1):
    """Mark pixel centers of the window [i0..i1] x [j0..j1] covered by any fan triangle."""
    out = np.zeros((max(j1 - j0 + 1, 0), max(i1 - i0 + 1, 0)), dtype=np.bool_)
    if i1 < i0 or j1 < j0:
        return out
    n = xs.shape[0]
    for k in range(n):
        k2 = (k + 1) % n
        ax, ay, bx, by = xs[k], ys[k], xs[k2], ys[k2]
        # pixels outside a triangle's bounding box can never pass the test
        ti0 = max(i0, int(math.ceil(min(ax, bx, cx))))
        ti1 = min(i1, int(math.floor(max(ax, bx, cx))))
        tj0 = max(j0, int(math.ceil(min(ay, by, cy))))
        tj1 = min(j1, int(math.floor(max(ay, by, cy))))
        for j in range(tj0, tj1 + 1):
            for i in range(ti0, ti1 + 1):
                if out[j - j0, i - i0]:
                    continue
                if in_triangle(ax, ay, bx, by, cx, cy, float(i), float(j)):
                    out[j - j0, i - i0] = True
    return out


@njit(cache=True)
def window_iou(bits_a, ia, ja, bits_b, ib, jb):
    """IoU of two coverage windows placed at pixel offsets (ia, ja) and (ib, jb)."""
    area_a = bits_a.sum()
    area_b = bits_b.sum()
    inter = 0
    i0 = max(ia, ib)
    j0 = max(ja, jb)
    i1 = min(ia + bits_a.shape[1], ib + bits_b.shape[1])
    j1 = min(ja + bits_a.shape[0], jb + bits_b.shape[0])
    for j in range(j0, j1):
        for i in range(i0, i1):
            if bits_a[j - ja, i - ia] and bits_b[j - jb, i - ib]:
                inter += 1
    union = area_a + area_b - inter
    if union == 0:
        return 0.0
    return inter / union
