"""Concentric-rectangle regression tools for 24-point polygon boxes."""

from .evaluation import Detection, GroundTruthRecord, average_precision, match_detections, mean_ap
from .geometry import (
    InstanceMask,
    PixelCoverage,
    PolyBox,
    centroid_from_mask,
    point_in_triangle,
    poly_iou,
    polygon_vertices,
    rasterize,
    sample_boundary,
)
from .harness import FitConfig, FitTrace, fit, ingest_masks
from .loss import (
    CenteredRect,
    LossVector,
    circle_giou_loss,
    concentric_rects,
    crrs_gradient,
    crrs_loss,
    rect_eiou,
    vertex_shared_rects,
)
from .weighting import WeightState, welford_mean

__version__ = "0.1.0"
