"""Spherical projection of unordered point clouds into staggered range images.

The image geometry is an angular discretization: azimuth maps to columns
(full 360, periodic) and elevation maps to rows (row 0 = highest elevation).
A pixel holds at most one point; when several points discretize to the same
pixel, the one nearest the sensor wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .io_kitti import PointCloud, SENSOR_FRAME_ID

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ProjectionModel:
    """Angular discretization and principal point of the spherical image.

    ``delta_phi`` is fixed by the full horizontal FOV (2*pi / width) and
    ``delta_theta`` spreads ``height`` rows evenly over
    [theta_min, theta_max]; ``c_phi``/``c_theta`` are the pixel offsets of the
    zero angles (azimuth 0 lands at column c_phi, elevation theta_max at row 0).
    """

    width: int
    height: int
    theta_min: float  # radians, elevation of the bottom row
    theta_max: float  # radians, elevation of the top row
    delta_phi: float
    delta_theta: float
    c_phi: float
    c_theta: float

    @classmethod
    def from_fov(
        cls, height: int, width: int, fov_up_deg: float, fov_down_deg: float
    ) -> "ProjectionModel":
        if height < 3 or width < 3:
            raise ValueError(f"image must be at least 3x3, got {height}x{width}")
        theta_max = math.radians(fov_up_deg)
        theta_min = math.radians(fov_down_deg)
        if theta_max <= theta_min:
            raise ValueError("fov_up_deg must exceed fov_down_deg")
        delta_phi = TWO_PI / width
        delta_theta = (theta_max - theta_min) / (height - 1)
        return cls(
            width=width,
            height=height,
            theta_min=theta_min,
            theta_max=theta_max,
            delta_phi=delta_phi,
            delta_theta=delta_theta,
            c_phi=width / 2.0,
            c_theta=theta_max / delta_theta,
        )

    def __post_init__(self):
        if not math.isclose(self.delta_phi, TWO_PI / self.width, rel_tol=1e-9):
            raise ValueError("delta_phi must equal 2*pi / width (full 360 azimuth)")
        span = (self.theta_max - self.theta_min) / (self.height - 1)
        if not math.isclose(self.delta_theta, span, rel_tol=1e-9):
            raise ValueError("delta_theta must equal (theta_max - theta_min)/(height - 1)")

    def ray_angles(self, u: np.ndarray | int, v: np.ndarray | int):
        """Exact (phi, theta) of pixel centers; inverse of :func:`project` on
        the pixel grid."""
        phi = (np.asarray(u, dtype=np.float64) - self.c_phi) * self.delta_phi
        theta = self.theta_max - np.asarray(v, dtype=np.float64) * self.delta_theta
        return phi, theta


@dataclass(frozen=True)
class StaggeredImage:
    """Grid of per-pixel 3D points where neighboring pixels correspond to
    neighboring measurement rays.

    ``valid`` marks pixels that hold a point (range > 0, finite);
    ``source_index`` maps each valid pixel back to the originating point in
    the input cloud (-1 elsewhere) and is injective. Grids are float32: the
    native precision of the sensor data, and half the memory traffic.
    """

    points: np.ndarray  # (h, w, 3) float32
    ranges: np.ndarray  # (h, w) float32, sensor-frame range (0 where invalid)
    valid: np.ndarray  # (h, w) bool
    source_index: np.ndarray  # (h, w) int64, -1 where invalid
    frame_id: str
    num_out_of_fov: int = 0
    num_conflicts: int = 0
    num_dropped_invalid: int = 0  # zero-range or non-finite input points

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def cart_to_spherical(p) -> tuple[float, float, float]:
    """Convert one Cartesian point to (azimuth phi, elevation theta, range r).

    phi = atan2(y, x) in (-pi, pi]; theta is the elevation from the xy-plane
    in [-pi/2, pi/2]; r is the Euclidean norm. Raises on the zero vector.
    """
    x, y, z = (float(c) for c in p)
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise ValueError("zero-length point has no direction")
    return math.atan2(y, x), math.atan2(z, math.hypot(x, y)), r


def project(phi: float, theta: float, model: ProjectionModel):
    """Discretize an angle pair to integer pixel coordinates.

    Azimuth wraps modulo the image width; elevations outside the vertical FOV
    return ``None`` rather than being clamped onto the border rows.
    Rounding is nearest-integer, ties to even.
    """
    u = int(round(phi / model.delta_phi + model.c_phi)) % model.width
    v = int(round((model.theta_max - theta) / model.delta_theta))
    if v < 0 or v >= model.height:
        return None
    return u, v


def build_staggered_image(cloud: PointCloud, model: ProjectionModel) -> StaggeredImage:
    """Project a whole cloud, resolving pixel conflicts by minimum range.

    Exact range ties are broken toward the lower source index, which makes the
    result independent of input point order. Points that fall outside the
    vertical FOV, lose a conflict, or are degenerate (zero range, non-finite)
    never appear in the image and are tallied separately.
    """
    h, w = model.height, model.width
    points = np.zeros((h, w, 3), dtype=np.float32)
    ranges = np.zeros((h, w), dtype=np.float32)
    valid = np.zeros((h, w), dtype=bool)
    source = np.full((h, w), -1, dtype=np.int64)

    # Angle and range math stays float64 so pixel assignment is identical for
    # float32 and float64 clouds; only the stored grids are float32.
    xyz = np.asarray(cloud.xyz, dtype=np.float64)
    n = xyz.shape[0]
    if n == 0:
        return StaggeredImage(points, ranges, valid, source, cloud.frame_id)

    kernels = _accel.kernels()
    if kernels is not None:
        num_degenerate, num_out, num_conflicts = kernels.project_scatter(
            xyz, model.delta_phi, model.c_phi, model.delta_theta, model.theta_max,
            h, w, points, ranges, valid, source,
        )
        return StaggeredImage(
            points=points,
            ranges=ranges,
            valid=valid,
            source_index=source,
            frame_id=cloud.frame_id,
            num_out_of_fov=num_out,
            num_conflicts=num_conflicts,
            num_dropped_invalid=num_degenerate,
        )

    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    d2 = x * x
    d2 += y * y
    r = np.sqrt(d2 + z * z)
    usable = np.isfinite(r) & (r > 0.0)
    num_degenerate = int(n - usable.sum())

    phi = np.arctan2(y, x)
    theta = np.arctan2(z, np.sqrt(d2, out=d2))
    phi /= model.delta_phi
    phi += model.c_phi
    theta -= model.theta_max
    theta /= -model.delta_theta
    with np.errstate(invalid="ignore"):
        u = np.rint(phi).astype(np.int64) % w
        v = np.rint(theta).astype(np.int64)
    keep = usable & (theta >= -0.5) & (v < h)
    num_out = int(usable.sum() - keep.sum())

    idx = np.flatnonzero(keep)
    pix = v[idx] * w + u[idx]
    r = r[idx]

    flat_points = points.reshape(-1, 3)
    flat_ranges = ranges.reshape(-1)
    flat_valid = valid.reshape(-1)
    flat_source = source.reshape(-1)

    hits = np.bincount(pix, minlength=h * w)
    if hits.max(initial=0) <= 1:
        # No pixel conflicts (e.g. grid-aligned scans): plain scatter.
        flat_points[pix] = xyz[idx]
        flat_ranges[pix] = r
        flat_source[pix] = idx
        flat_valid[pix] = True
        num_conflicts = 0
    else:
        contested = hits[pix] > 1
        free_pix = pix[~contested]
        free_idx = idx[~contested]
        flat_points[free_pix] = xyz[free_idx]
        flat_ranges[free_pix] = r[~contested]
        flat_source[free_pix] = free_idx
        flat_valid[free_pix] = True
        # Among points sharing a pixel the smallest range wins; exact range
        # ties resolve to the lowest source index, so the result does not
        # depend on input order.
        c_pix, c_r, c_idx = pix[contested], r[contested], idx[contested]
        order = np.lexsort((c_idx, c_r, c_pix))
        c_pix, c_r, c_idx = c_pix[order], c_r[order], c_idx[order]
        first = np.empty(c_pix.shape, dtype=bool)
        first[0] = True
        np.not_equal(c_pix[1:], c_pix[:-1], out=first[1:])
        win_pix, win_idx = c_pix[first], c_idx[first]
        flat_points[win_pix] = xyz[win_idx]
        flat_ranges[win_pix] = c_r[first]
        flat_source[win_pix] = win_idx
        flat_valid[win_pix] = True
        num_conflicts = int(c_pix.size - win_pix.size)

    return StaggeredImage(
        points=points,
        ranges=ranges,
        valid=valid,
        source_index=source,
        frame_id=cloud.frame_id,
        num_out_of_fov=num_out,
        num_conflicts=num_conflicts,
        num_dropped_invalid=num_degenerate,
    )


_CHANNEL_INDEX = {"x": 0, "y": 1, "z": 2}


def image_channel(img: StaggeredImage, channel: str) -> tuple[np.ndarray, np.ndarray]:
    """View one scalar channel (``x``/``y``/``z``/``range``) with its validity
    mask; invalid pixels are flagged by the mask, never by sentinel values."""
    if channel == "range":
        return img.ranges, img.valid
    try:
        return img.points[..., _CHANNEL_INDEX[channel]], img.valid
    except KeyError:
        raise ValueError(f"unknown channel {channel!r}") from None


def grid_cloud_from_image(img: StaggeredImage) -> PointCloud:
    """Collect the valid pixels of an image back into a point cloud, in
    row-major (v, u) order."""
    pts = img.points[img.valid]
    return PointCloud(
        xyz=pts,
        intensity=np.zeros(pts.shape[0]),
        frame_id=img.frame_id,
    )


__all__ = [
    "ProjectionModel",
    "StaggeredImage",
    "cart_to_spherical",
    "project",
    "build_staggered_image",
    "image_channel",
    "grid_cloud_from_image",
    "SENSOR_FRAME_ID",
]
