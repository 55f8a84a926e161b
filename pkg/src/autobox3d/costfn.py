"""Cost terms scored against a candidate box, and their weighted total.

A candidate is scored against one cluster / 2D-proposal pairing with four
terms, all phrased so that lower is better:

* density: negated fraction of cluster points enclosed by the box.
* lshape: mean distance from enclosed points to the two nearest
  non-parallel top edges of the box, the visible "L" of the roofline.
* surface: negated distance from the ego to the box center in the ground
  plane, clipped, which pushes the box toward the visible near surface.
* iou2d: negated, weighted image IoU between the projected box hull and
  the 2D proposal rectangle.

``cost_total`` is the readable single-box reference. ``BoxCostBatch``
evaluates many candidates at once with identical results; the swarm search
calls it tens of thousands of times per proposal, so it avoids all
per-candidate Python work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom import (
    BOUNDARY_TOL,
    Box2D,
    BoxParams,
    CameraCalib,
    EgoPose,
    TOP_EDGES_ALONG_LENGTH,
    TOP_EDGES_ALONG_WIDTH,
    _CORNER_SIGNS,
    box_corners,
    iou_2d,
    points_in_box,
    project_box_to_2d,
)


@dataclass(frozen=True)
class CostWeights:
    """Weights of the four cost terms plus the surface clip distance.

    ``lambda1`` scales the density term, ``lambda2`` the top-edge term,
    ``lambda3`` the near-surface term, and ``gamma`` the image-IoU reward.
    ``c_surface`` caps how far the surface term can pull; the pipeline
    usually overrides it per proposal (see ``adaptive_surface_clip``).
    """

    lambda1: float = 5.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    gamma: float = 3.0
    c_surface: float = 10.0

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "gamma", "c_surface"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.c_surface <= 0:
            raise ValueError(f"c_surface must be positive, got {self.c_surface}")


@dataclass(eq=False)
class AnchorRange:
    """Per-class bounds on box dimensions (l, w, h), both ends inclusive."""

    class_id: str
    dims_min: np.ndarray
    dims_max: np.ndarray

    def __post_init__(self) -> None:
        self.dims_min = np.asarray(self.dims_min, dtype=float)
        self.dims_max = np.asarray(self.dims_max, dtype=float)
        if self.dims_min.shape != (3,) or self.dims_max.shape != (3,):
            raise ValueError("anchor dims must have shape (3,)")
        if not (np.all(np.isfinite(self.dims_min)) and np.all(np.isfinite(self.dims_max))):
            raise ValueError("anchor dims must be finite")
        if np.any(self.dims_min <= 0):
            raise ValueError(f"anchor minimum dims must be positive, got {self.dims_min}")
        if np.any(self.dims_min > self.dims_max):
            raise ValueError(
                f"anchor minimum must not exceed maximum, got {self.dims_min} > {self.dims_max}"
            )

    def contains(self, dims: np.ndarray, tol: float = 0.0) -> bool:
        d = np.asarray(dims, dtype=float)
        return bool(np.all(d >= self.dims_min - tol) and np.all(d <= self.dims_max + tol))


@dataclass(frozen=True)
class CostBreakdown:
    """Per-term values for one evaluated box.

    ``density``, ``lshape`` and ``surface`` are stored unweighted; ``iou2d``
    is stored as its weighted contribution (already negated and scaled), and
    ``total`` is the weighted sum actually minimized.
    """

    density: float
    lshape: float
    surface: float
    iou2d: float
    total: float


def cost_density(box: BoxParams, obj_points: np.ndarray) -> float:
    """Negated enclosed fraction of the cluster, in [-1, 0]."""
    pts = np.asarray(obj_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"obj_points must be (N, 3), got {pts.shape}")
    if len(pts) == 0:
        raise ValueError("obj_points is empty; cannot score an empty cluster")
    inside = points_in_box(pts, box)
    return -float(inside.sum()) / len(pts)


def anchor_edges(
    box: BoxParams, ego: EgoPose
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """The two ego-nearest, non-parallel top edges of the box.

    One edge runs along the box length, one along the width; within each
    parallel pair the edge whose midpoint is closer to the ego wins. Each
    edge is returned as a pair of corner points in the ego frame.
    """
    corners = box_corners(box)
    ego_pt = ego.as_array()

    def nearest(pairs: tuple[tuple[int, int], ...]) -> tuple[np.ndarray, np.ndarray]:
        best = None
        best_d = math.inf
        for i, j in pairs:
            mid = 0.5 * (corners[i] + corners[j])
            d = float(np.linalg.norm(mid - ego_pt))
            if d < best_d:
                best_d = d
                best = (corners[i], corners[j])
        assert best is not None
        return best

    return nearest(TOP_EDGES_ALONG_LENGTH), nearest(TOP_EDGES_ALONG_WIDTH)


def _point_segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from each point (N, 3) to the 3D segment from a to b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def cost_lshape(box: BoxParams, obj_points: np.ndarray, ego: EgoPose) -> float:
    """Mean distance from enclosed points to the two ego-facing top edges.

    Points outside the box are ignored; with no enclosed points the term
    is 0 so that an empty box is penalized only through the density term.
    """
    pts = np.asarray(obj_points, dtype=float)
    if len(pts) == 0:
        raise ValueError("obj_points is empty; cannot score an empty cluster")
    inside = points_in_box(pts, box)
    if not np.any(inside):
        return 0.0
    enclosed = pts[inside]
    (e0a, e0b), (e1a, e1b) = anchor_edges(box, ego)
    d0 = _point_segment_distances(enclosed, e0a, e0b)
    d1 = _point_segment_distances(enclosed, e1a, e1b)
    return float(np.mean(np.minimum(d0, d1)))


def cost_surface(box: BoxParams, ego: EgoPose, weights: CostWeights) -> float:
    """Negated clipped ground-plane distance from ego to the box center."""
    d = math.hypot(box.x - ego.x, box.y - ego.y)
    return -min(d, weights.c_surface)


def cost_iou2d(
    box: BoxParams, proposal: Box2D, calib: CameraCalib, weights: CostWeights
) -> float:
    """Weighted, negated image IoU of the projected box against the proposal.

    A box that does not project to a usable hull scores 0: no reward, and no
    penalty beyond losing the reward.
    """
    hull = project_box_to_2d(box, calib)
    if hull is None:
        return 0.0
    return -weights.gamma * iou_2d(hull, proposal)


def cost_total(
    box: BoxParams,
    obj_points: np.ndarray,
    ego: EgoPose,
    proposal: Box2D,
    calib: CameraCalib,
    weights: CostWeights,
) -> CostBreakdown:
    """Score one candidate box; the containment mask is computed once."""
    pts = np.asarray(obj_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"obj_points must be (N, 3), got {pts.shape}")
    if len(pts) == 0:
        raise ValueError("obj_points is empty; cannot score an empty cluster")
    inside = points_in_box(pts, box)
    density = -float(inside.sum()) / len(pts)
    if np.any(inside):
        enclosed = pts[inside]
        (e0a, e0b), (e1a, e1b) = anchor_edges(box, ego)
        d0 = _point_segment_distances(enclosed, e0a, e0b)
        d1 = _point_segment_distances(enclosed, e1a, e1b)
        lshape = float(np.mean(np.minimum(d0, d1)))
    else:
        lshape = 0.0
    surface = cost_surface(box, ego, weights)
    iou_term = cost_iou2d(box, proposal, calib, weights)
    total = (
        weights.lambda1 * density
        + weights.lambda2 * lshape
        + weights.lambda3 * surface
        + iou_term
    )
    return CostBreakdown(density, lshape, surface, iou_term, total)


def clamp_to_constraints(box: BoxParams, anchor: AnchorRange) -> BoxParams:
    """Project a box onto the feasible set: anchor dims, yaw wrapped to [0, pi)."""
    dims = np.clip(box.dims, anchor.dims_min, anchor.dims_max)
    ry = float(np.mod(box.ry, np.pi))
    return BoxParams(box.x, box.y, box.z, float(dims[0]), float(dims[1]), float(dims[2]), ry)


def adaptive_surface_clip(ego: EgoPose, cluster_centroid: np.ndarray, anchor: AnchorRange) -> float:
    """Surface clip distance tuned to one cluster.

    Ego-to-centroid ground distance plus a small outward margin scaled to
    the anchor footprint. Visible-surface points bias the centroid toward
    the ego, so the margin lets the term keep nudging the center outward
    roughly until it reaches the true one; past that it saturates, which
    matters, because an unclipped term would happily push an empty box far
    beyond the cluster while the image IoU stays put along the view ray.
    """
    c = np.asarray(cluster_centroid, dtype=float)
    d = math.hypot(c[0] - ego.x, c[1] - ego.y)
    margin = max(0.5, 0.1 * math.hypot(float(anchor.dims_max[0]), float(anchor.dims_max[1])))
    return d + margin


@dataclass(eq=False)
class BatchEval:
    """Arrays of per-candidate cost values from one batched evaluation."""

    totals: np.ndarray
    density: np.ndarray
    lshape: np.ndarray
    surface: np.ndarray
    iou2d: np.ndarray

    def breakdown_at(self, i: int) -> CostBreakdown:
        return CostBreakdown(
            float(self.density[i]),
            float(self.lshape[i]),
            float(self.surface[i]),
            float(self.iou2d[i]),
            float(self.totals[i]),
        )


class BoxCostBatch:
    """Vectorized ``cost_total`` over many candidate boxes at once.

    Bound to one cluster / ego / 2D-proposal / camera at construction; each
    ``evaluate`` call scores an (S, 7) array of candidates. Agreement with
    the scalar reference path is asserted in the test suite.
    """

    def __init__(
        self,
        obj_points: np.ndarray,
        ego: EgoPose,
        proposal: Box2D,
        calib: CameraCalib,
        weights: CostWeights,
    ) -> None:
        pts = np.asarray(obj_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"obj_points must be (N, 3), got {pts.shape}")
        if len(pts) == 0:
            raise ValueError("obj_points is empty; cannot score an empty cluster")
        self.points = pts
        self.n_points = len(pts)
        self.ego = ego
        self.proposal = proposal
        self.weights = weights
        self._px = pts[:, 0][None, :]
        self._py = pts[:, 1][None, :]
        self._pz = pts[:, 2][None, :]
        self._rot = calib.extrinsic[:3, :3]
        self._t = calib.extrinsic[:3, 3]
        k = calib.intrinsic
        self._fx, self._skew, self._cu = k[0, 0], k[0, 1], k[0, 2]
        self._fy, self._cv = k[1, 1], k[1, 2]
        self._k22 = k[2, 2]
        self._img_w = float(calib.image_width)
        self._img_h = float(calib.image_height)
        self._signs = _CORNER_SIGNS

    def evaluate(self, thetas: np.ndarray) -> BatchEval:
        """Score candidates of shape (S, 7) laid out as (x, y, z, l, w, h, ry)."""
        th = np.asarray(thetas, dtype=float)
        if th.ndim != 2 or th.shape[1] != 7:
            raise ValueError(f"thetas must be (S, 7), got {th.shape}")
        w = self.weights
        cx, cy, cz = th[:, 0], th[:, 1], th[:, 2]
        bl, bw, bh = th[:, 3], th[:, 4], th[:, 5]
        cos = np.cos(th[:, 6])
        sin = np.sin(th[:, 6])

        # Cluster points in each candidate's box frame, (S, N).
        dx = self._px - cx[:, None]
        dy = self._py - cy[:, None]
        lx = cos[:, None] * dx + sin[:, None] * dy
        ly = cos[:, None] * dy - sin[:, None] * dx
        lz = self._pz - cz[:, None]
        half_l = 0.5 * bl[:, None] + BOUNDARY_TOL
        half_w = 0.5 * bw[:, None] + BOUNDARY_TOL
        half_h = 0.5 * bh[:, None] + BOUNDARY_TOL
        inside = (
            (np.abs(lx) <= half_l) & (np.abs(ly) <= half_w) & (np.abs(lz) <= half_h)
        )
        counts = inside.sum(axis=1)
        density = -counts / self.n_points

        # Ego position in each box frame picks the near top edges by sign.
        edx = self.ego.x - cx
        edy = self.ego.y - cy
        e_lx = cos * edx + sin * edy
        e_ly = cos * edy - sin * edx
        sx = np.where(e_lx > 0.0, 0.5, -0.5) * bl
        sy = np.where(e_ly > 0.0, 0.5, -0.5) * bw
        # Edge at x = sx running along y, and edge at y = sy running along x,
        # both at the top face z = h/2. Segment distance clamps the running
        # coordinate to the face extent.
        dz_top = lz - 0.5 * bh[:, None]
        run_y = ly - np.clip(ly, -0.5 * bw[:, None], 0.5 * bw[:, None])
        run_x = lx - np.clip(lx, -0.5 * bl[:, None], 0.5 * bl[:, None])
        d_edge_x = np.sqrt((lx - sx[:, None]) ** 2 + run_y**2 + dz_top**2)
        d_edge_y = np.sqrt(run_x**2 + (ly - sy[:, None]) ** 2 + dz_top**2)
        d_near = np.minimum(d_edge_x, d_edge_y)
        d_near_sum = np.where(inside, d_near, 0.0).sum(axis=1)
        lshape = np.where(counts > 0, d_near_sum / np.maximum(counts, 1), 0.0)

        surface = -np.minimum(np.hypot(cx - self.ego.x, cy - self.ego.y), w.c_surface)

        iou_term = -w.gamma * self._image_iou(cx, cy, cz, bl, bw, bh, cos, sin)

        totals = w.lambda1 * density + w.lambda2 * lshape + w.lambda3 * surface + iou_term
        return BatchEval(totals, density, lshape, surface, iou_term)

    def _image_iou(self, cx, cy, cz, bl, bw, bh, cos, sin) -> np.ndarray:
        """IoU of each candidate's projected hull with the proposal, (S,)."""
        sg = self._signs
        klx = sg[None, :, 0] * bl[:, None]
        kly = sg[None, :, 1] * bw[:, None]
        klz = sg[None, :, 2] * bh[:, None]
        wx = cos[:, None] * klx - sin[:, None] * kly + cx[:, None]
        wy = sin[:, None] * klx + cos[:, None] * kly + cy[:, None]
        wz = klz + cz[:, None]
        r, t = self._rot, self._t
        camx = r[0, 0] * wx + r[0, 1] * wy + r[0, 2] * wz + t[0]
        camy = r[1, 0] * wx + r[1, 1] * wy + r[1, 2] * wz + t[1]
        camz = r[2, 0] * wx + r[2, 1] * wy + r[2, 2] * wz + t[2]
        valid = camz > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            hw = self._k22 * camz
            u = (self._fx * camx + self._skew * camy + self._cu * camz) / hw
            v = (self._fy * camy + self._cv * camz) / hw
        u_min = np.maximum(np.where(valid, u, np.inf).min(axis=1), 0.0)
        u_max = np.minimum(np.where(valid, u, -np.inf).max(axis=1), self._img_w)
        v_min = np.maximum(np.where(valid, v, np.inf).min(axis=1), 0.0)
        v_max = np.minimum(np.where(valid, v, -np.inf).max(axis=1), self._img_h)
        ok = (valid.sum(axis=1) >= 2) & (u_min < u_max) & (v_min < v_max)
        p = self.proposal
        iw = np.minimum(u_max, p.u_max) - np.maximum(u_min, p.u_min)
        ih = np.minimum(v_max, p.v_max) - np.maximum(v_min, p.v_min)
        inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
        union = (u_max - u_min) * (v_max - v_min) + p.area - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            iou = np.where(ok & (inter > 0.0), inter / union, 0.0)
        return iou
