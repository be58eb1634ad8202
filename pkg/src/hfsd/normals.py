"""Surface normal estimation on staggered range images.

Normals come from six small convolutions: a horizontal and a vertical
derivative filter applied to each of the x, y, z channels. The two resulting
per-pixel tangent vectors span the local surface, and their normalized cross
product is the normal. A covariance-eigenvector estimator over k nearest
neighbors is included as an independent verification oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _accel
from .io_kitti import PointCloud
from .projection import StaggeredImage

# Below this squared-meter cross-product magnitude the tangent vectors are
# numerically parallel and the pixel is invalidated instead of normalized.
EPS_CROSS = 1e-12

# Relative eigenvalue-gap floor under which the oracle neighborhood is
# direction-ambiguous.
EPS_EIG = 1e-3


@dataclass(frozen=True)
class GradientKernel:
    """A horizontal/vertical 3x3 derivative filter pair.

    ``s_u`` responds positively to increase along columns (azimuth), ``s_v``
    is its transpose and responds along rows. Zero weight sum keeps constant
    fields at zero response. Absolute scale is irrelevant downstream because
    the cross product is normalized.
    """

    name: str
    s_u: np.ndarray  # (3, 3)
    s_v: np.ndarray  # (3, 3)

    def __post_init__(self):
        s_u = np.asarray(self.s_u, dtype=np.float64)
        s_v = np.asarray(self.s_v, dtype=np.float64)
        if s_u.shape != (3, 3) or s_v.shape != (3, 3):
            raise ValueError("kernels must be 3x3")
        if not np.allclose(s_v, s_u.T, atol=1e-12):
            raise ValueError("s_v must be the transpose of s_u")
        if abs(s_u.sum()) > 1e-12:
            raise ValueError("derivative kernel weights must sum to 0")
        ramp_gain = float((s_u * np.arange(-1, 2)).sum())
        if ramp_gain <= 0:
            raise ValueError("s_u must respond positively toward increasing u")
        object.__setattr__(self, "s_u", s_u)
        object.__setattr__(self, "s_v", s_v)

    @classmethod
    def scharr(cls) -> "GradientKernel":
        # (-1, 0, 1) derivative crossed with (3, 10, 3)/16 smoothing: good
        # rotational symmetry for noisy scans.
        deriv = np.array([-1.0, 0.0, 1.0])
        smooth = np.array([3.0, 10.0, 3.0]) / 16.0
        s_u = np.outer(smooth, deriv)
        return cls(name="scharr", s_u=s_u, s_v=s_u.T)

    @classmethod
    def central_difference(cls) -> "GradientKernel":
        s_u = np.array([[0.0, 0.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
        return cls(name="central_difference", s_u=s_u, s_v=s_u.T)

    @classmethod
    def from_name(cls, name: str) -> "GradientKernel":
        try:
            return {"scharr": cls.scharr, "central_difference": cls.central_difference}[name]()
        except KeyError:
            raise ValueError(f"unknown gradient kernel {name!r}") from None

    def scaled(self, factor: float) -> "GradientKernel":
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return GradientKernel(self.name, self.s_u * factor, self.s_v * factor)

    def taps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Nonzero taps as (row offset, column offset, horizontal weight,
        vertical weight) arrays, offsets relative to the center pixel."""
        di, dj, wu, wv = [], [], [], []
        for i in range(3):
            for j in range(3):
                if self.s_u[i, j] != 0.0 or self.s_v[i, j] != 0.0:
                    di.append(i - 1)
                    dj.append(j - 1)
                    wu.append(self.s_u[i, j])
                    wv.append(self.s_v[i, j])
        return (
            np.array(di, dtype=np.int64),
            np.array(dj, dtype=np.int64),
            np.array(wu, dtype=np.float64),
            np.array(wv, dtype=np.float64),
        )


@dataclass(frozen=True)
class NormalImage:
    """Per-pixel unit normals with validity; same frame as the source image."""

    normals: np.ndarray  # (h, w, 3) float64, unit length where valid
    valid: np.ndarray  # (h, w) bool
    frame_id: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


def convolve_channel(
    grid: np.ndarray, valid: np.ndarray, kernel: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """3x3 cross-correlation with periodic columns.

    Azimuth is physically periodic, so columns wrap. Rows have no physical
    neighbor beyond the FOV, so the top and bottom rows are invalid, as is any
    pixel whose 3x3 support touches an invalid input pixel.
    """
    grid = np.asarray(grid)
    if not np.issubdtype(grid.dtype, np.floating):
        grid = grid.astype(np.float64)
    if grid.ndim != 2 or grid.shape[0] < 3 or grid.shape[1] < 3:
        raise ValueError(f"grid must be at least 3x3, got {grid.shape}")
    out = ndimage.correlate(grid, np.asarray(kernel, dtype=grid.dtype), mode="wrap")
    return out, _support_valid(valid)


def _support_valid(valid: np.ndarray) -> np.ndarray:
    """Pixels whose full 3x3 support (columns wrapping) is valid, excluding
    the borderless top and bottom rows."""
    h, w = valid.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = valid
    padded[1:-1, 0] = valid[:, -1]
    padded[1:-1, -1] = valid[:, 0]
    out = padded[0:h, 0:w].copy()
    for i in range(3):
        for j in range(3):
            if i or j:
                out &= padded[i : i + h, j : j + w]
    return out


def gradient_images(
    img: StaggeredImage, kernel: GradientKernel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel tangent vectors along the two image axes.

    Six convolutions: each of the x, y, z channels filtered by ``s_u`` for the
    azimuthal tangent and by ``s_v`` for the vertical tangent. Returns
    (g_u, g_v, valid) with g_* of shape (h, w, 3).
    """
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError(f"image must be at least 3x3, got {h}x{w}")
    g_u = np.empty((h, w, 3), dtype=np.float64)
    g_v = np.empty((h, w, 3), dtype=np.float64)
    for c in range(3):
        channel = img.points[..., c].astype(np.float64)
        ndimage.correlate(channel, kernel.s_u, mode="wrap", output=g_u[..., c])
        ndimage.correlate(channel, kernel.s_v, mode="wrap", output=g_v[..., c])
    return g_u, g_v, _support_valid(img.valid)


def normals_from_gradients(
    g_u: np.ndarray, g_v: np.ndarray, valid: np.ndarray, frame_id: str
) -> NormalImage:
    """Normalized cross product of the tangent vectors; pixels with a
    numerically parallel pair are invalidated."""
    if g_u.shape != g_v.shape:
        raise ValueError("gradient grids must have equal shape")
    au, bu, cu = g_u[..., 0], g_u[..., 1], g_u[..., 2]
    av, bv, cv = g_v[..., 0], g_v[..., 1], g_v[..., 2]
    cx = bu * cv - cu * bv
    cy = cu * av - au * cv
    cz = au * bv - bu * av
    norm = np.sqrt(cx * cx + cy * cy + cz * cz)
    ok = valid & (norm >= EPS_CROSS)
    inv = np.zeros_like(norm)
    np.divide(1.0, norm, out=inv, where=ok)
    cx *= inv
    cy *= inv
    cz *= inv
    normals = np.stack([cx, cy, cz], axis=-1)
    return NormalImage(normals=normals, valid=ok, frame_id=frame_id)


def orient_normals(normals: NormalImage, img: StaggeredImage) -> NormalImage:
    """Flip normals to point from the surface toward the sensor origin.

    The cross-product winding fixes a sign only up to sensor mounting; the
    one-sided vertical-component test downstream needs a deterministic
    orientation. Normals exactly perpendicular to the view ray are unchanged.
    """
    if normals.frame_id != img.frame_id:
        raise ValueError(
            f"frame mismatch: normals in {normals.frame_id!r}, image in {img.frame_id!r}"
        )
    n, p = normals.normals, img.points
    # n . (-P) < 0  <=>  n . P > 0
    dots = n[..., 0] * p[..., 0] + n[..., 1] * p[..., 1] + n[..., 2] * p[..., 2]
    sign = np.ones(dots.shape, dtype=n.dtype)
    sign[normals.valid & (dots > 0.0)] = -1.0
    oriented = n * sign[..., None]
    return NormalImage(normals=oriented, valid=normals.valid, frame_id=normals.frame_id)


def estimate_normals(img: StaggeredImage, kernel: GradientKernel) -> NormalImage:
    """Full normal estimation: gradients, cross product, orientation."""
    kernels = _accel.kernels()
    if kernels is not None and img.shape[0] >= 3 and img.shape[1] >= 3:
        h, w = img.shape
        normals = np.zeros((h, w, 3), dtype=np.float64)
        valid_out = np.zeros((h, w), dtype=bool)
        di, dj, wu, wv = kernel.taps()
        kernels.fused_normals(
            img.points, img.valid, di, dj, wu, wv, EPS_CROSS, normals, valid_out
        )
        return NormalImage(normals=normals, valid=valid_out, frame_id=img.frame_id)
    g_u, g_v, valid = gradient_images(img, kernel)
    raw = normals_from_gradients(g_u, g_v, valid, img.frame_id)
    return orient_normals(raw, img)


def oracle_normals(cloud: PointCloud, query: int, k: int):
    """Covariance-eigenvector normal at one point, for verification only.

    Exact brute-force k-nearest-neighbor search around ``query``, smallest
    eigenvector of the neighborhood covariance (query included), oriented
    toward the sensor origin. Returns None when the two smallest eigenvalues
    are too close to define a direction.
    """
    xyz = np.asarray(cloud.xyz, dtype=np.float64)
    n = xyz.shape[0]
    if k < 3:
        raise ValueError(f"need k >= 3 neighbors, got {k}")
    if n < k + 1:
        raise ValueError(f"cloud has {n} points, need at least {k + 1}")
    q = xyz[query]
    d2 = np.einsum("ij,ij->i", xyz - q, xyz - q)
    d2[query] = np.inf
    neighbors = np.argpartition(d2, k)[:k]
    pts = np.vstack([xyz[neighbors], q])
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / pts.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    scale = eigvals[2]
    if scale <= 0.0 or (eigvals[1] - eigvals[0]) <= EPS_EIG * scale:
        return None
    normal = eigvecs[:, 0]
    if normal @ (-q) < 0.0:
        normal = -normal
    return normal


__all__ = [
    "GradientKernel",
    "NormalImage",
    "convolve_channel",
    "gradient_images",
    "normals_from_gradients",
    "orient_normals",
    "estimate_normals",
    "oracle_normals",
    "EPS_CROSS",
    "EPS_EIG",
]
