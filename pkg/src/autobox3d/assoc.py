"""Pairing 2D detections with 3D point clusters through camera frustums.

A 2D proposal rectangle back-projects to a frustum in the ego frame. Its
center ray is the matching reference: a cluster pairs with the proposal
when the cluster reaches within ``tau_match`` meters of that ray inside
the usable depth band. One proposal may pair with several clusters; the
downstream pipeline resolves those conflicts by fit cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geom import Box2D, CameraCalib
from .sceneprep import Cluster, Scene


@dataclass(eq=False)
class Ray:
    """Half-line from ``origin`` along unit vector ``direction``."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        if self.origin.shape != (3,) or self.direction.shape != (3,):
            raise ValueError("ray origin and direction must have shape (3,)")
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got norm {norm}")

    @classmethod
    def through(cls, origin: np.ndarray, target: np.ndarray) -> "Ray":
        """Ray from ``origin`` toward ``target``, normalizing the direction."""
        origin = np.asarray(origin, dtype=float)
        d = np.asarray(target, dtype=float) - origin
        norm = float(np.linalg.norm(d))
        if norm <= 0.0:
            raise ValueError("ray target coincides with origin")
        return cls(origin, d / norm)


@dataclass(eq=False)
class Frustum:
    """Back-projection of an image rectangle between two depths.

    ``corner_rays`` follow the rectangle corners in the order (u_min, v_min),
    (u_max, v_min), (u_max, v_max), (u_min, v_max); ``center`` passes through
    the rectangle center.
    """

    corner_rays: tuple[Ray, Ray, Ray, Ray]
    center: Ray
    d_min: float
    d_max: float

    def __post_init__(self) -> None:
        if len(self.corner_rays) != 4:
            raise ValueError("frustum needs exactly 4 corner rays")
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError(
                f"frustum depths must satisfy 0 < d_min < d_max, got {self.d_min}, {self.d_max}"
            )


@dataclass(eq=False)
class Proposal2D:
    """One 2D detection: rectangle, class, score, and crop statistics.

    ``mask_pixel_count`` counts foreground pixels of the instance mask inside
    the ``crop_w`` x ``crop_h`` detection crop. ``embedding`` is an optional
    feature vector carried through to the output bank untouched. ``index``
    records the position in the proposal file the entry came from.
    """

    box: Box2D
    camera_id: str
    class_id: str
    score: float
    mask_pixel_count: int
    crop_w: int
    crop_h: int
    embedding: np.ndarray | None = None
    index: int = -1

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.crop_w < 1 or self.crop_h < 1:
            raise ValueError(f"crop size must be at least 1x1, got {self.crop_w}x{self.crop_h}")
        if self.mask_pixel_count < 0 or self.mask_pixel_count > self.crop_w * self.crop_h:
            raise ValueError(
                f"mask_pixel_count {self.mask_pixel_count} outside crop of "
                f"{self.crop_w * self.crop_h} pixels"
            )
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=float)
            if self.embedding.ndim != 1 or len(self.embedding) == 0:
                raise ValueError("embedding must be a non-empty 1D vector")


@dataclass(eq=False)
class CrossModalProposal:
    """A matched (2D proposal, 3D cluster) pair ready for box fitting."""

    proposal: Proposal2D
    cluster: Cluster
    scene: Scene
    distance_to_ray: float
    ray: Ray

    @property
    def points(self) -> np.ndarray:
        return self.scene.cloud[self.cluster.point_indices]

    @property
    def calib(self) -> CameraCalib:
        return self.scene.camera(self.proposal.camera_id)


def camera_center(calib: CameraCalib) -> np.ndarray:
    """Camera optical center in the ego frame."""
    rot = calib.extrinsic[:3, :3]
    t = calib.extrinsic[:3, 3]
    return -rot.T @ t


def unproject_pixel(u: float, v: float, calib: CameraCalib) -> Ray:
    """Ray in the ego frame through pixel (u, v)."""
    k = calib.intrinsic
    det = np.linalg.det(k)
    if abs(det) < 1e-12:
        raise ValidationError(f"camera {calib.camera_id}: intrinsic matrix is singular")
    dir_cam = np.linalg.solve(k, np.array([u, v, 1.0]))
    rot = calib.extrinsic[:3, :3]
    dir_ego = rot.T @ dir_cam
    norm = float(np.linalg.norm(dir_ego))
    return Ray(camera_center(calib), dir_ego / norm)


def frustum_from_box(box: Box2D, calib: CameraCalib, d_min: float, d_max: float) -> Frustum:
    """Back-project a 2D rectangle into an ego-frame frustum."""
    corners_uv = (
        (box.u_min, box.v_min),
        (box.u_max, box.v_min),
        (box.u_max, box.v_max),
        (box.u_min, box.v_max),
    )
    rays = tuple(unproject_pixel(u, v, calib) for u, v in corners_uv)
    cu, cv = box.center
    center = unproject_pixel(cu, cv, calib)
    return Frustum(rays, center, d_min, d_max)


def center_ray(frustum: Frustum) -> Ray:
    return frustum.center


def points_to_ray_distances(points: np.ndarray, ray: Ray) -> np.ndarray:
    """Distance from each point (N, 3) to the half-line of ``ray``.

    Points behind the origin measure to the origin itself, not to the
    backward extension of the line.
    """
    pts = np.asarray(points, dtype=float)
    rel = pts - ray.origin
    t = np.maximum(rel @ ray.direction, 0.0)
    closest = ray.origin + t[:, None] * ray.direction
    return np.linalg.norm(pts - closest, axis=1)


def point_to_ray_distance(point: np.ndarray, ray: Ray) -> float:
    return float(points_to_ray_distances(np.asarray(point, dtype=float).reshape(1, 3), ray)[0])


def ray_depth(point: np.ndarray, ray: Ray) -> float:
    """Signed distance of a point along the ray direction from its origin."""
    return float((np.asarray(point, dtype=float) - ray.origin) @ ray.direction)


def associate(
    scene: Scene,
    proposals: list[Proposal2D],
    clusters: list[Cluster],
    tau_match: float = 2.0,
    d_min: float = 0.5,
    d_max: float = 60.0,
    criterion: str = "closest_point",
) -> list[CrossModalProposal]:
    """Pair proposals with clusters by proximity to the frustum center ray.

    ``criterion`` selects the cluster reference: ``closest_point`` uses the
    cluster point nearest the ray (default), ``centroid`` the cluster mean.
    A pair forms when the reference lies within ``tau_match`` of the ray and
    its depth along the ray falls inside [d_min, d_max]. Pairs come back
    grouped per proposal; the pair set does not depend on cluster order.
    """
    if criterion not in ("closest_point", "centroid"):
        raise ValidationError(f"unknown association criterion {criterion!r}")
    if not (0.0 < d_min < d_max):
        raise ValidationError(f"need 0 < d_min < d_max, got {d_min}, {d_max}")
    if tau_match <= 0.0:
        raise ValidationError(f"tau_match must be positive, got {tau_match}")
    pairs: list[CrossModalProposal] = []
    for prop in proposals:
        calib = scene.camera(prop.camera_id)
        frustum = frustum_from_box(prop.box, calib, d_min, d_max)
        ray = frustum.center
        for cluster in clusters:
            if criterion == "centroid":
                ref = cluster.centroid
                dist = point_to_ray_distance(ref, ray)
            else:
                pts = scene.cloud[cluster.point_indices]
                dists = points_to_ray_distances(pts, ray)
                k = int(np.argmin(dists))
                ref = pts[k]
                dist = float(dists[k])
            if dist > tau_match:
                continue
            depth = ray_depth(ref, ray)
            if not (d_min <= depth <= d_max):
                continue
            pairs.append(CrossModalProposal(prop, cluster, scene, dist, ray))
    return pairs


def load_proposals(path: str | Path) -> list[Proposal2D]:
    """Read a JSON array of 2D proposals.

    Each entry carries ``camera_id``, ``box`` as [u_min, v_min, u_max, v_max],
    ``class``, ``score``, ``mask_pixel_count``, ``crop_w``, ``crop_h``, and an
    optional ``embedding`` list. Malformed entries fail loudly with their
    array index; embeddings must share one dimension across the file.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: expected a JSON array of proposals")
    out: list[Proposal2D] = []
    embed_dim: int | None = None
    for i, entry in enumerate(raw):
        try:
            if not isinstance(entry, dict):
                raise ValueError("entry is not an object")
            box_vals = entry["box"]
            if not isinstance(box_vals, list) or len(box_vals) != 4:
                raise ValueError("box must be a list of 4 numbers")
            box = Box2D(*(float(v) for v in box_vals))
            embedding = entry.get("embedding")
            if embedding is not None:
                embedding = np.asarray(embedding, dtype=float)
            prop = Proposal2D(
                box=box,
                camera_id=str(entry["camera_id"]),
                class_id=str(entry["class"]),
                score=float(entry["score"]),
                mask_pixel_count=int(entry["mask_pixel_count"]),
                crop_w=int(entry["crop_w"]),
                crop_h=int(entry["crop_h"]),
                embedding=embedding,
                index=i,
            )
        except (KeyError, TypeError, ValueError) as exc:
            detail = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
            raise ValidationError(f"{path}: proposal {i}: {detail}") from exc
        if prop.embedding is not None:
            if embed_dim is None:
                embed_dim = len(prop.embedding)
            elif len(prop.embedding) != embed_dim:
                raise ValidationError(
                    f"{path}: proposal {i}: embedding dimension {len(prop.embedding)} "
                    f"differs from earlier {embed_dim}"
                )
        out.append(prop)
    return out
