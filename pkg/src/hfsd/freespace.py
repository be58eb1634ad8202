"""Ground extraction from vehicle-frame surface normals and heights.

Pixels whose normals point sufficiently upward form the candidate set V;
a statistical band around the mean candidate height then separates the ground
set G (free space) from parallel-plane surfaces like truck beds or roofs.
The remaining valid pixels form the off-ground set OG.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .io_kitti import PointClass, PointCloud, RunConfig
from .normals import GradientKernel, NormalImage, estimate_normals
from .projection import ProjectionModel, StaggeredImage, build_staggered_image

VEHICLE_FRAME_ID = "iso8855_vehicle"

# Floor on the height standard deviation so a perfectly flat scene (sigma = 0)
# does not empty G through the strict inequality.
EPS_SIGMA = 0.01


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> R p + t."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tra.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if not np.isclose(np.linalg.det(rot), 1.0, atol=1e-9):
            raise ValueError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "RigidTransform":
        return cls(cfg.rotation, cfg.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class SegmentationResult:
    """Per-pixel classes, per-point labels, and the intermediates needed to
    re-check every decision after the fact.

    ``valid_mask`` marks pixels with a usable normal; the set algebra
    g_mask <= v_mask <= valid_mask holds on every run, and OFF_GROUND is
    exactly valid_mask minus g_mask.
    """

    point_labels: np.ndarray  # (N,) uint8 PointClass codes
    pixel_classes: np.ndarray  # (h, w) uint8 PointClass codes
    valid_mask: np.ndarray  # (h, w) bool, pixels with a valid normal
    v_mask: np.ndarray  # (h, w) bool, candidate (vertical-normal) set V
    g_mask: np.ndarray  # (h, w) bool, ground set G
    cos_gamma: np.ndarray  # (h, w) float64
    z_vehicle: np.ndarray  # (h, w) float64
    source_index: np.ndarray  # (h, w) int64
    mu: float  # mean candidate height, meters
    sigma: float  # population std of candidate heights, meters
    stage_seconds: dict = field(default_factory=dict)

    @property
    def num_vertical(self) -> int:
        return int(self.v_mask.sum())

    @property
    def num_ground(self) -> int:
        return int(self.g_mask.sum())

    @property
    def og_mask(self) -> np.ndarray:
        return self.valid_mask & ~self.g_mask


def to_vehicle_frame(img: StaggeredImage, transform: RigidTransform) -> StaggeredImage:
    """Move pixel points into the ISO8855 vehicle frame (x forward, y left,
    z up). Ranges stay sensor-frame; they are a sensor property."""
    dtype = img.points.dtype
    flat = img.points.reshape(-1, 3)
    pts = flat @ transform.rotation.T.astype(dtype) + transform.translation.astype(dtype)
    pts = pts.reshape(img.points.shape)
    return StaggeredImage(
        points=pts,
        ranges=img.ranges,
        valid=img.valid,
        source_index=img.source_index,
        frame_id=VEHICLE_FRAME_ID,
        num_out_of_fov=img.num_out_of_fov,
        num_conflicts=img.num_conflicts,
        num_dropped_invalid=img.num_dropped_invalid,
    )


def rotate_normals(normals: NormalImage, transform: RigidTransform) -> NormalImage:
    """Rotate normals into the vehicle frame. Directions see only R, never t."""
    rotated = normals.normals @ transform.rotation.T.astype(normals.normals.dtype)
    return NormalImage(normals=rotated, valid=normals.valid, frame_id=VEHICLE_FRAME_ID)


def height_change_feature(normals_vehicle: NormalImage) -> tuple[np.ndarray, np.ndarray]:
    """cos(gamma): the vertical component of the vehicle-frame unit normal.

    gamma is the angle between the surface normal and the vehicle z-axis, so
    drivable surfaces sit near cos(gamma) = 1. Clamped into [-1, 1] to absorb
    normalization round-off, keeping the inclusive upper bound meaningful.
    """
    if normals_vehicle.frame_id != VEHICLE_FRAME_ID:
        raise ValueError(
            f"normals are in frame {normals_vehicle.frame_id!r}; "
            f"height change features require {VEHICLE_FRAME_ID!r}"
        )
    cos_gamma = np.clip(normals_vehicle.normals[..., 2], -1.0, 1.0)
    return cos_gamma, normals_vehicle.valid


def select_verticals(
    cos_gamma: np.ndarray, valid: np.ndarray, cfg: RunConfig
) -> np.ndarray:
    """Candidate set V: valid pixels with an upward-enough normal
    (bounds inclusive)."""
    return valid & (cos_gamma >= cfg.cos_gamma_min) & (cos_gamma <= cfg.cos_gamma_max)


def statistical_ground_filter(
    v_mask: np.ndarray, img_vehicle: StaggeredImage, cfg: RunConfig
) -> tuple[np.ndarray, float, float]:
    """Keep the candidates whose height lies strictly within
    ``sigma_multiplier`` standard deviations of the mean candidate height.

    One global pass per scan: mu and the population sigma are taken over all
    of V, assuming the surrounding ground is flat. Reported sigma is the raw
    statistic; the cutoff uses max(sigma, EPS_SIGMA) so sigma = 0 scenes keep
    their ground. An empty V yields an empty G with mu = sigma = 0.
    """
    if not v_mask.any():
        return np.zeros_like(v_mask), 0.0, 0.0
    z = img_vehicle.points[..., 2]
    heights = z[v_mask].astype(np.float64)
    mu = float(heights.mean())
    sigma = float(heights.std())
    band = cfg.sigma_multiplier * max(sigma, EPS_SIGMA)
    g_mask = v_mask & (np.abs(z - mu) < band)
    return g_mask, mu, sigma


def segment(cloud: PointCloud, cfg: RunConfig) -> SegmentationResult:
    """Full pipeline from raw scan to per-point free-space labels.

    Projection, normal estimation, vehicle-frame transfer, the cos(gamma)
    threshold, and the height band, then back-projection of pixel classes to
    the original point order. Points that never reached a pixel (out of FOV,
    conflict losers, degenerate) and pixels without a usable normal are
    INVALID.
    """
    t0 = time.perf_counter()
    model = ProjectionModel.from_fov(cfg.height, cfg.width, cfg.fov_up_deg, cfg.fov_down_deg)
    img = build_staggered_image(cloud, model)
    t1 = time.perf_counter()

    kernel = GradientKernel.from_name(cfg.gradient_kernel)
    normals = estimate_normals(img, kernel)
    t2 = time.perf_counter()

    transform = RigidTransform.from_config(cfg)
    img_vehicle = to_vehicle_frame(img, transform)
    normals_vehicle = rotate_normals(normals, transform)
    cos_gamma, valid = height_change_feature(normals_vehicle)
    t3 = time.perf_counter()

    v_mask = select_verticals(cos_gamma, valid, cfg)
    g_mask, mu, sigma = statistical_ground_filter(v_mask, img_vehicle, cfg)

    pixel_classes = np.full(img.shape, PointClass.INVALID, dtype=np.uint8)
    pixel_classes[valid] = PointClass.OFF_GROUND
    pixel_classes[g_mask] = PointClass.FREE

    point_labels = np.full(len(cloud), PointClass.INVALID, dtype=np.uint8)
    projected = img.source_index >= 0
    point_labels[img.source_index[projected]] = pixel_classes[projected]
    t4 = time.perf_counter()

    return SegmentationResult(
        point_labels=point_labels,
        pixel_classes=pixel_classes,
        valid_mask=valid,
        v_mask=v_mask,
        g_mask=g_mask,
        cos_gamma=cos_gamma,
        z_vehicle=img_vehicle.points[..., 2],
        source_index=img.source_index,
        mu=mu,
        sigma=sigma,
        stage_seconds={
            "projection": t1 - t0,
            "normals": t2 - t1,
            "features": t3 - t2,
            "filter": t4 - t3,
        },
    )


__all__ = [
    "RigidTransform",
    "SegmentationResult",
    "to_vehicle_frame",
    "rotate_normals",
    "height_change_feature",
    "select_verticals",
    "statistical_ground_filter",
    "segment",
    "VEHICLE_FRAME_ID",
    "EPS_SIGMA",
]
