"""Deterministic synthetic LiDAR scenes with exact per-point ground truth.

Scenes are ray-cast on the exact pixel grid of a projection model, so every
generated point lies on its generating ray and projects back to its pixel.
That gives property tests an analytic oracle: known normals, known ground
membership, known ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .io_kitti import (
    LabelArray,
    PointCloud,
    SENSOR_FRAME_ID,
    write_labels,
    write_point_cloud,
)
from .projection import ProjectionModel

SCENE_KINDS = ("plane", "ramp", "plane_with_boxes", "wall")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; extents are full side lengths."""

    center: tuple[float, float, float]
    extents: tuple[float, float, float]

    def __post_init__(self):
        if any(e <= 0 for e in self.extents):
            raise ValueError(f"box extents must be positive, got {self.extents}")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.extents) / 2.0

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.extents) / 2.0


@dataclass(frozen=True)
class SceneSpec:
    """A scene to ray-cast: geometry kind, sampling model, noise, and seed."""

    kind: str
    model: ProjectionModel
    sensor_height: float = 1.8
    grade: float = 0.12  # ramp rise per unit run, along +x
    boxes: tuple[Box, ...] = ()
    wall_distance: float = 5.0
    noise_sigma: float = 0.0  # Gaussian range noise, meters, along the ray
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}, expected one of {SCENE_KINDS}")
        if self.grade < 0:
            raise ValueError(f"grade must be >= 0, got {self.grade}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.kind == "wall" and self.wall_distance <= 0:
            raise ValueError("wall_distance must be positive")


@dataclass(frozen=True)
class GroundTruth:
    """Exact per-point truth plus the scene's analytic ground elevation."""

    is_ground: np.ndarray  # (N,) bool
    true_normal: np.ndarray  # (N, 3) float64, unit
    ground_z: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(
        default=None, compare=False
    )


def ramp_normal(grade: float) -> np.ndarray:
    """Unit normal of a ramp rising along +x: (-sin a, 0, cos a), a = atan(grade)."""
    if grade < 0:
        raise ValueError(f"grade must be >= 0, got {grade}")
    alpha = math.atan(grade)
    return np.array([-math.sin(alpha), 0.0, math.cos(alpha)])


def _ray_plane(dirs: np.ndarray, p0: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Distances along unit rays from the origin to a plane; inf where the ray
    misses or approaches from behind the normal."""
    denom = dirs @ normal
    t = np.full(dirs.shape[0], np.inf)
    hit = denom < -1e-12
    t[hit] = (p0 @ normal) / denom[hit]
    t[t <= 1e-9] = np.inf
    return t


def _ray_box(dirs: np.ndarray, box: Box) -> tuple[np.ndarray, np.ndarray]:
    """Slab-method ray/AABB intersection from the origin.

    Returns (t, normals): entry distance (inf on miss) and the outward normal
    of the entered face.
    """
    lo, hi = box.lo, box.hi
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = lo / dirs
        t_hi = hi / dirs
    t_near_ax = np.minimum(t_lo, t_hi)
    t_far_ax = np.maximum(t_lo, t_hi)
    # A ray parallel to a slab it is inside produces nan; it imposes no bound.
    t_near_ax = np.nan_to_num(t_near_ax, nan=-np.inf, posinf=np.inf, neginf=-np.inf)
    t_far_ax = np.nan_to_num(t_far_ax, nan=np.inf, posinf=np.inf, neginf=-np.inf)
    entry_axis = np.argmax(t_near_ax, axis=1)
    t_near = t_near_ax[np.arange(dirs.shape[0]), entry_axis]
    t_far = t_far_ax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 1e-9)

    t = np.where(hit, t_near, np.inf)
    normals = np.zeros_like(dirs)
    rows = np.flatnonzero(hit)
    axes = entry_axis[rows]
    normals[rows, axes] = -np.sign(dirs[rows, axes])
    return t, normals


def _pixel_rays(model: ProjectionModel) -> np.ndarray:
    """Unit direction of every pixel center, row-major (v, u)."""
    vv, uu = np.meshgrid(np.arange(model.height), np.arange(model.width), indexing="ij")
    phi, theta = model.ray_angles(uu.ravel(), vv.ravel())
    cos_t = np.cos(theta)
    return np.column_stack([cos_t * np.cos(phi), cos_t * np.sin(phi), np.sin(theta)])


def generate(spec: SceneSpec) -> tuple[PointCloud, GroundTruth]:
    """Ray-cast the scene on the model's pixel grid (first hit per ray).

    Rays that miss all geometry produce no point; the output is row-major in
    (v, u) over the hitting rays. Range noise is radial, applied after the
    hit query, and rays pushed behind the sensor by noise are dropped.
    Deterministic for a fixed spec.
    """
    dirs = _pixel_rays(spec.model)
    n_rays = dirs.shape[0]
    h_s = spec.sensor_height
    ground_plane_z = -h_s

    t_best = np.full(n_rays, np.inf)
    normals = np.zeros((n_rays, 3))
    is_ground = np.zeros(n_rays, dtype=bool)
    ground_z: Optional[Callable] = None

    def consider(t: np.ndarray, surf_normals: np.ndarray, ground: bool) -> None:
        closer = t < t_best
        t_best[closer] = t[closer]
        normals[closer] = surf_normals[closer] if surf_normals.ndim == 2 else surf_normals
        is_ground[closer] = ground

    if spec.kind in ("plane", "plane_with_boxes"):
        n = np.array([0.0, 0.0, 1.0])
        consider(_ray_plane(dirs, np.array([0.0, 0.0, ground_plane_z]), n), n, True)
        ground_z = lambda x, y: np.full_like(np.asarray(x, dtype=float), ground_plane_z)
        for box in spec.boxes:
            t_box, n_box = _ray_box(dirs, box)
            consider(t_box, n_box, False)
    elif spec.kind == "ramp":
        n = ramp_normal(spec.grade)
        consider(_ray_plane(dirs, np.array([0.0, 0.0, ground_plane_z]), n), n, True)
        g = spec.grade
        ground_z = lambda x, y: ground_plane_z + g * np.asarray(x, dtype=float)
    elif spec.kind == "wall":
        n = np.array([-1.0, 0.0, 0.0])
        consider(_ray_plane(dirs, np.array([spec.wall_distance, 0.0, 0.0]), n), n, False)

    hit = np.isfinite(t_best)
    t = t_best[hit]
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        t = t + rng.normal(0.0, spec.noise_sigma, size=t.shape)
        keep = t > 1e-9
        hit_idx = np.flatnonzero(hit)[keep]
        hit = np.zeros(n_rays, dtype=bool)
        hit[hit_idx] = True
        t = t[keep]

    points = dirs[hit] * t[:, None]
    cloud = PointCloud(
        xyz=points,
        intensity=np.zeros(points.shape[0]),
        frame_id=SENSOR_FRAME_ID,
    )
    gt = GroundTruth(
        is_ground=is_ground[hit],
        true_normal=normals[hit],
        ground_z=ground_z,
    )
    return cloud, gt


def write_scene(path: str | Path, cloud: PointCloud, gt: GroundTruth) -> tuple[Path, Path]:
    """Write the scene as a KITTI ``.bin`` plus a ``.label`` sidecar encoding
    ground membership as the road class (40); returns both paths."""
    bin_path = Path(path)
    label_path = bin_path.with_suffix(".label")
    write_point_cloud(bin_path, cloud)
    semantic = np.where(gt.is_ground, 40, 0).astype(np.uint16)
    write_labels(label_path, LabelArray(semantic_id=semantic, instance_id=np.zeros_like(semantic)))
    return bin_path, label_path


__all__ = [
    "Box",
    "SceneSpec",
    "GroundTruth",
    "SCENE_KINDS",
    "generate",
    "ramp_normal",
    "write_scene",
]
