import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crrs.geometry import PolyBox
from crrs.loss import (
    CONCENTRIC,
    CONSTRUCTIONS,
    N_RECTS,
    TRANSPOSED,
    VERTEX_SHARED,
    AxisRect,
    CenteredRect,
    LossVector,
    circle_giou_loss,
    circle_losses_and_jacobian,
    concentric_rects,
    crrs_gradient,
    crrs_loss,
    eiou_edges,
    rect_eiou,
    rect_losses,
    rect_losses_and_jacobian,
    vertex_shared_rects,
)

from oracles import central_difference, lens_area_by_chords, scalar_eiou
from test_geometry import L_RADII


def random_pair(rng):
    gt = PolyBox(rng.uniform(40, 60), rng.uniform(40, 60), rng.uniform(5, 40, 24))
    pd = PolyBox(gt.cx + rng.uniform(-8, 8), gt.cy + rng.uniform(-8, 8), gt.radii * rng.uniform(0.6, 1.4, 24))
    return gt, pd


def hand_concentric(box):
    rects = [(box.radii[0], box.radii[6]), (box.radii[12], box.radii[18])]
    for k in range(24):
        if k % 6:
            t = math.radians(15 * k)
            rects.append((box.radii[k] * abs(math.cos(t)), box.radii[k] * abs(math.sin(t))))
    return rects


radii_st = st.lists(st.floats(0.0, 50.0), min_size=24, max_size=24)
box_st = st.builds(PolyBox, st.floats(-100, 100), st.floats(-100, 100), radii_st)
# multiples of 1/16 keep translation exact in floating point
dyadic = st.integers(-1600, 1600).map(lambda v: v / 16)
dyadic_box_st = st.builds(PolyBox, dyadic, dyadic,
                          st.lists(st.integers(0, 800).map(lambda v: v / 16), min_size=24, max_size=24))
# the epsilon fallback for degenerate rectangles is deliberately not scale-free
solid_box_st = st.builds(PolyBox, st.floats(-100, 100), st.floats(-100, 100),
                         st.lists(st.floats(0.5, 50.0), min_size=24, max_size=24))


# constructions ---------------------------------------------------------------

def test_concentric_regular_box():
    rects = concentric_rects(PolyBox.regular(3, 4, 10))
    assert len(rects) == 22
    assert rects[0] == rects[1] == CenteredRect(3, 4, 10, 10)
    assert rects[2].half_w == pytest.approx(9.659258262890683, abs=1e-12)
    assert rects[2].half_h == pytest.approx(2.5881904510252074, abs=1e-12)
    assert rects[2].width == 2 * rects[2].half_w


def test_concentric_zero_radii():
    rects = concentric_rects(PolyBox(7, 8, np.zeros(24)))
    assert all(r.corners == (7, 8, 7, 8) for r in rects)


def test_concentric_matches_hand_rolled_on_l_shape():
    box = PolyBox(11 / 3, 11 / 3, L_RADII)
    for rect, (hw, hh) in zip(concentric_rects(box), hand_concentric(box)):
        assert (rect.cx, rect.cy) == (box.cx, box.cy)
        assert rect.half_w == pytest.approx(hw, abs=1e-12)
        assert rect.half_h == pytest.approx(hh, abs=1e-12)


def test_concentric_off_axis_half_diagonal_is_radius():
    box = PolyBox(0, 0, np.arange(1, 25, dtype=float))
    off = [k for k in range(24) if k % 6]
    for rect, k in zip(concentric_rects(box)[2:], off):
        assert math.hypot(rect.half_w, rect.half_h) == pytest.approx(k + 1, rel=1e-14)


def test_construction_table_matches_rects():
    box = PolyBox(12.5, -3, np.linspace(1, 9, 24))
    edges = CONCENTRIC.edges(box.params)
    np.testing.assert_allclose(edges, [r.corners for r in concentric_rects(box)], atol=1e-12)
    edges = TRANSPOSED.edges(box.params)
    np.testing.assert_allclose(edges, [r.corners for r in concentric_rects(box, ((0, 18), (12, 6)))], atol=1e-12)


def test_vertex_shared_first_rect():
    r = np.zeros(24)
    r[0], r[6] = 10, 8
    rects = vertex_shared_rects(PolyBox(0, 0, r))
    assert rects[0] == AxisRect(0, 0, 10, 8)
    assert all(rect.corners == (0, 0, 0, 0) for rect in rects[2:])


@given(box_st)
def test_vertex_shared_has_centroid_corner(box):
    for rect in vertex_shared_rects(box):
        assert rect.x1 <= rect.x2 and rect.y1 <= rect.y2
        assert box.cx in (rect.x1, rect.x2) and box.cy in (rect.y1, rect.y2)


@given(box_st)
def test_concentric_centered_on_centroid(box):
    for rect in concentric_rects(box):
        assert (rect.cx, rect.cy) == (box.cx, box.cy)


def test_jacobian_is_exact_for_linear_edges():
    rng = np.random.default_rng(3)
    for c in CONSTRUCTIONS.values():
        p, dp = rng.uniform(1, 20, 26), rng.normal(size=26)
        np.testing.assert_allclose(c.edges(p + dp) - c.edges(p), c.jacobian() @ dp, atol=1e-12)


# EIoU ----------------------------------------------------------------------

def test_eiou_shifted_squares():
    e, geom = rect_eiou(CenteredRect(0, 0, 5, 5), CenteredRect(10, 0, 5, 5))
    assert e == pytest.approx(-0.2, abs=1e-9)
    assert (geom.iou, geom.rho_sq, geom.c_w, geom.c_h) == (0.0, 100.0, 20.0, 10.0)
    assert geom.c_diag**2 == pytest.approx(500)


def test_eiou_nested_squares():
    e, geom = rect_eiou(CenteredRect(0, 0, 5, 5), CenteredRect(0, 0, 10, 10))
    assert e == pytest.approx(-0.25, abs=1e-9)
    assert geom.iou == 0.25 and geom.rho_sq == 0


def test_eiou_identity():
    assert rect_eiou(CenteredRect(1, 2, 3, 4), CenteredRect(1, 2, 3, 4))[0] == 1.0
    assert rect_eiou(CenteredRect(1, 2, 0, 0), CenteredRect(1, 2, 0, 0))[0] == 1.0


def test_eiou_lower_bound_is_attained():
    # a point ground truth on the corner of a unit square
    assert eiou_edges([0, 0, 0, 0], [0, 0, 1, 1])[0][0] == pytest.approx(-2.25, abs=1e-12)


def test_eiou_degenerate_distinct_points_finite():
    e, _ = rect_eiou(CenteredRect(0, 0, 0, 0), CenteredRect(0, 3, 0, 0))
    assert math.isfinite(e) and e > -3


def test_eiou_accepts_axis_rects():
    e, _ = rect_eiou(AxisRect(-5, -5, 5, 5), AxisRect(5, -5, 15, 5))
    assert e == pytest.approx(-0.2, abs=1e-12)


def test_eiou_vectorized_matches_scalar_oracle():
    rng = np.random.default_rng(11)
    lo = rng.uniform(-20, 20, (500, 2, 2))
    size = rng.uniform(0, 30, (500, 2, 2))
    g = np.concatenate([lo[:, 0], lo[:, 0] + size[:, 0]], axis=1)
    p = np.concatenate([lo[:, 1], lo[:, 1] + size[:, 1]], axis=1)
    got, _ = eiou_edges(g, p)
    np.testing.assert_allclose(got, [scalar_eiou(a, b) for a, b in zip(g, p)], rtol=0, atol=1e-12)


@settings(max_examples=200)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.lists(st.floats(-50, 50), min_size=4, max_size=4))
def test_eiou_range(a, b):
    g = [min(a[0], a[2]), min(a[1], a[3]), max(a[0], a[2]), max(a[1], a[3])]
    p = [min(b[0], b[2]), min(b[1], b[3]), max(b[0], b[2]), max(b[1], b[3])]
    e = eiou_edges(g, p)[0][0]
    # the center term is at most 1/4 and each size term at most 1
    assert -2.25 <= e <= 1.0


# loss vector -----------------------------------------------------------------

def test_crrs_loss_identity():
    box = PolyBox(50, 50, np.linspace(5, 20, 24))
    vec = crrs_loss(box, box, 100, 100)
    assert np.all(vec.rect_losses == 0) and vec.poly_loss == 0
    assert vec.circle_losses is None


def test_crrs_loss_shifted_first_rect():
    gt = PolyBox.regular(50, 50, 5)
    vec = crrs_loss(gt, gt.translated(10, 0), 100, 100)
    assert vec.rect_losses.shape == (N_RECTS,)
    assert vec.rect_losses[0] == pytest.approx(1.2, abs=1e-12)
    # the two 24-gons touch along a column of pixel centers
    assert 0.99 < vec.poly_loss <= 1.0


def test_crrs_loss_matches_oracle_composition():
    rng = np.random.default_rng(5)
    for _ in range(20):
        gt, pd = random_pair(rng)
        want = [1 - scalar_eiou(g.corners, p.corners) for g, p in zip(concentric_rects(gt), concentric_rects(pd))]
        np.testing.assert_allclose(rect_losses(gt, pd), want, atol=1e-12)


def test_loss_vector_json_round_trip():
    gt, pd = random_pair(np.random.default_rng(0))
    vec = crrs_loss(gt, pd, 100, 100, with_circles=True)
    obj = vec.to_json()
    assert sorted(obj) == ["circle", "poly", "rect"] and len(obj["circle"]) == 24
    again = LossVector.from_json(obj)
    np.testing.assert_array_equal(again.rect_losses, vec.rect_losses)
    np.testing.assert_array_equal(again.circle_losses, vec.circle_losses)


@settings(max_examples=100)
@given(box_st, box_st)
def test_rect_loss_bounds(gt, pd):
    for c in CONSTRUCTIONS.values():
        losses = rect_losses(gt, pd, c)
        assert np.all(losses >= 0) and np.all(losses <= 3.25)


@settings(max_examples=100)
@given(dyadic_box_st, dyadic_box_st, dyadic, dyadic)
def test_translation_covariance(gt, pd, dx, dy):
    np.testing.assert_allclose(rect_losses(gt.translated(dx, dy), pd.translated(dx, dy)), rect_losses(gt, pd),
                               rtol=0, atol=1e-12)


@settings(max_examples=100)
@given(solid_box_st, solid_box_st, st.floats(0.05, 20))
def test_scale_invariance(gt, pd, s):
    def scaled(b):
        return PolyBox(b.cx * s, b.cy * s, b.radii * s)
    np.testing.assert_allclose(rect_losses(scaled(gt), scaled(pd)), rect_losses(gt, pd), rtol=0, atol=1e-9)


# gradients -------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(CONSTRUCTIONS))
def test_rect_gradient_matches_finite_differences(name):
    c = CONSTRUCTIONS[name]
    rng = np.random.default_rng(7)
    for _ in range(30):
        gt, pd = random_pair(rng)
        _, jac = rect_losses_and_jacobian(gt, pd, c)
        fd = np.array([central_difference(lambda p, i=i: rect_losses(gt, PolyBox.from_params(p), c)[i], pd.params)
                       for i in range(N_RECTS)])
        np.testing.assert_allclose(jac, fd, rtol=1e-4, atol=1e-5)


def test_summed_gradient_is_row_sum():
    gt, pd = random_pair(np.random.default_rng(2))
    _, jac = rect_losses_and_jacobian(gt, pd)
    np.testing.assert_allclose(crrs_gradient(gt, pd), jac.sum(0), atol=0)


def test_gradient_zero_at_identity():
    box = PolyBox(30, 40, np.linspace(3, 17, 24))
    assert np.all(crrs_gradient(box, box) == 0)
    assert np.all(circle_losses_and_jacobian(box, box)[1] == 0)


def test_gradient_vertical_shift_moves_centroid_back():
    gt = PolyBox.regular(50, 50, 10)
    g = crrs_gradient(gt, gt.translated(0, 4))
    assert g[0] == pytest.approx(0, abs=1e-12)
    assert g[1] > 0


# circles -------------------------------------------------------------------

def test_circle_identity():
    box = PolyBox(5, 5, np.linspace(1, 9, 24))
    assert np.all(circle_giou_loss(box, box) == 0)


def test_circle_concentric():
    np.testing.assert_allclose(circle_giou_loss(PolyBox.regular(0, 0, 5), PolyBox.regular(0, 0, 10)), 0.75,
                               rtol=0, atol=1e-12)


def test_circle_disjoint():
    np.testing.assert_allclose(circle_giou_loss(PolyBox.regular(0, 0, 5), PolyBox.regular(20, 0, 5)), 16 / 9,
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("a,b,d", [(5, 5, 6), (10, 4, 9), (3, 8, 7.5), (6, 6, 0.5)])
def test_circle_lens_matches_chord_integration(a, b, d):
    gt, pd = PolyBox.regular(0, 0, a), PolyBox.regular(d, 0, b)
    inter = lens_area_by_chords(a, b, d)
    union = math.pi * (a * a + b * b) - inter
    enclose = math.pi * (0.5 * (a + b + d)) ** 2
    want = 1 - inter / union + (enclose - union) / enclose
    np.testing.assert_allclose(circle_giou_loss(gt, pd), want, rtol=1e-8)


def test_circle_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(30):
        gt, pd = random_pair(rng)
        _, jac = circle_losses_and_jacobian(gt, pd)
        fd = np.array([central_difference(lambda p, k=k: circle_giou_loss(gt, PolyBox.from_params(p))[k], pd.params)
                       for k in range(24)])
        np.testing.assert_allclose(jac, fd, rtol=1e-4, atol=1e-5)
