"""Selective alignment filters.

A fitted box is always banked; these filters only decide whether its crop
is trustworthy enough to align feature embeddings against. Three checks
must all pass: the instance mask has to dominate its crop (little
occlusion), the crop has to be big enough to carry detail, and the fitted
box re-projected into the image has to land on the 2D detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .assoc import Proposal2D
from .errors import UnknownClassError
from .geom import Box2D, BoxParams, CameraCalib, iou_2d, project_box_to_2d

# Per-class occlusion thresholds: minimum mask-to-crop area ratio that still
# counts as unoccluded. Small or thin classes tolerate sparser masks.
DEFAULT_TAU_OCC: dict[str, float] = {
    "car": 0.5,
    "truck": 0.5,
    "pedestrian": 0.25,
    "bicycle": 0.4,
    "motorcycle": 0.4,
    "bus": 0.5,
    "traffic_cone": 0.25,
    "barrier": 0.35,
    "construction_vehicle": 0.5,
}


@dataclass(eq=False)
class FilterThresholds:
    """Thresholds for the three alignment filters.

    ``tau_occ`` maps class id to the minimum mask coverage ratio,
    ``tau_res`` is the minimum crop area in pixels, and ``tau_mv`` the
    minimum image IoU between the re-projected box and its 2D proposal.
    """

    tau_occ: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TAU_OCC))
    tau_res: float = 4000.0
    tau_mv: float = 0.5

    def __post_init__(self) -> None:
        for cls, v in self.tau_occ.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 < v < 1.0):
                raise ValueError(f"tau_occ[{cls!r}] must be in (0, 1), got {v}")
        if not (math.isfinite(self.tau_res) and self.tau_res > 0):
            raise ValueError(f"tau_res must be positive, got {self.tau_res}")
        if not (math.isfinite(self.tau_mv) and 0.0 < self.tau_mv <= 1.0):
            raise ValueError(f"tau_mv must be in (0, 1], got {self.tau_mv}")


@dataclass(frozen=True)
class AlignmentVerdict:
    """Result of the three filters for one fitted target."""

    not_occluded: bool
    high_res: bool
    mv_aligned: bool

    @property
    def fit_for_alignment(self) -> bool:
        return self.not_occluded and self.high_res and self.mv_aligned


def occlusion_filter(
    mask_pixel_count: int,
    crop_w: int,
    crop_h: int,
    class_id: str,
    thresholds: FilterThresholds,
) -> bool:
    """True when the mask fills strictly more of the crop than the class bar.

    An unknown class is a configuration hole, not a pass or a fail.
    """
    try:
        tau = thresholds.tau_occ[class_id]
    except KeyError:
        known = sorted(thresholds.tau_occ)
        raise UnknownClassError(
            f"no occlusion threshold configured for class {class_id!r}; have {known}"
        ) from None
    if crop_w < 1 or crop_h < 1:
        raise ValueError(f"crop size must be at least 1x1, got {crop_w}x{crop_h}")
    area = crop_w * crop_h
    if not 0 <= mask_pixel_count <= area:
        raise ValueError(f"mask_pixel_count {mask_pixel_count} outside crop of {area} pixels")
    return mask_pixel_count / area > tau


def resolution_filter(crop_w: int, crop_h: int, thresholds: FilterThresholds) -> bool:
    """True when the crop area is strictly above the resolution bar."""
    if crop_w < 1 or crop_h < 1:
        raise ValueError(f"crop size must be at least 1x1, got {crop_w}x{crop_h}")
    return crop_w * crop_h > thresholds.tau_res


def multiview_filter(
    box: BoxParams,
    proposal_box: Box2D,
    calib: CameraCalib,
    thresholds: FilterThresholds,
) -> bool:
    """True when the fitted box re-projects onto the proposal with enough IoU.

    A box that does not project to a usable hull cannot be checked and fails.
    """
    hull = project_box_to_2d(box, calib)
    if hull is None:
        return False
    return iou_2d(hull, proposal_box) >= thresholds.tau_mv


def verdict(
    proposal: Proposal2D,
    box: BoxParams,
    calib: CameraCalib,
    thresholds: FilterThresholds,
) -> AlignmentVerdict:
    """Run all three filters for one fitted target."""
    return AlignmentVerdict(
        not_occluded=occlusion_filter(
            proposal.mask_pixel_count, proposal.crop_w, proposal.crop_h,
            proposal.class_id, thresholds,
        ),
        high_res=resolution_filter(proposal.crop_w, proposal.crop_h, thresholds),
        mv_aligned=multiview_filter(box, proposal.box, calib, thresholds),
    )
