"""Readers and writers for Semantic-KITTI-layout data, predictions, PLY, and run config.

File formats
------------
* scan ``.bin``: packed little-endian float32 quadruples ``(x, y, z, intensity)``,
  meters, sensor frame.
* label ``.label``: packed little-endian uint32; low 16 bits semantic class,
  high 16 bits instance id.
* prediction ``.pred``: one byte per original point, ``1`` = free, ``0`` =
  off-ground, ``2`` = invalid (never projected / no usable normal).
* export: ASCII PLY 1.0 with per-vertex color, optionally per-vertex normals.
* config: JSON with full defaulting (an empty document is a valid config).

All readers are deterministic and order-preserving; returned objects are
immutable by convention and safe to share across threads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

SENSOR_FRAME_ID = "sensor"

# Semantic KITTI ids for road, parking, sidewalk, other-ground, lane-marking:
# together these form the binary free-space ground truth.
DEFAULT_FREESPACE_LABEL_IDS = frozenset({40, 44, 48, 49, 60})


class PointClass(IntEnum):
    """Per-point segmentation classes; values are the on-disk ``.pred`` bytes."""

    OFF_GROUND = 0
    FREE = 1
    INVALID = 2


class TruncatedRecordError(ValueError):
    """File length is not a whole number of records."""

    def __init__(self, path: os.PathLike | str, record_size: int, length: int):
        self.offset = (length // record_size) * record_size
        super().__init__(
            f"{path}: truncated record, file length {length} is not divisible by "
            f"{record_size} (last whole record ends at byte offset {self.offset})"
        )


@dataclass(frozen=True)
class PointCloud:
    """Unordered sensor-frame scan. Point order is identity: index ``i`` here
    pairs with label ``i`` in the matching label file."""

    xyz: np.ndarray  # (N, 3) float, meters
    intensity: np.ndarray  # (N,) float
    frame_id: str = SENSOR_FRAME_ID
    num_dropped_nonfinite: int = 0

    def __post_init__(self):
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (N, 3), got {self.xyz.shape}")
        if self.intensity.shape != (self.xyz.shape[0],):
            raise ValueError("intensity length must match point count")

    def __len__(self) -> int:
        return self.xyz.shape[0]


@dataclass(frozen=True)
class LabelArray:
    """Per-point semantic/instance ids, paired with a PointCloud by index."""

    semantic_id: np.ndarray  # (N,) uint16
    instance_id: np.ndarray  # (N,) uint16

    def __post_init__(self):
        if self.semantic_id.shape != self.instance_id.shape:
            raise ValueError("semantic_id and instance_id must have equal length")

    def __len__(self) -> int:
        return self.semantic_id.shape[0]


@dataclass(frozen=True)
class RunConfig:
    """Pipeline hyper-parameters with defaults that work for KITTI scans.

    ``cos_gamma_min`` is the empirical lower bound on the vertical normal
    component that admits a pixel into the candidate ground set;
    ``sigma_multiplier`` scales the height band of the statistical ground
    filter.
    """

    height: int = 64
    width: int = 1024
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 1.73])
    )
    cos_gamma_min: float = 0.90
    cos_gamma_max: float = 1.0
    sigma_multiplier: float = 1.0
    freespace_label_ids: frozenset[int] = DEFAULT_FREESPACE_LABEL_IDS
    gradient_kernel: str = "scharr"

    def __post_init__(self):
        if not (0.0 < self.cos_gamma_min <= self.cos_gamma_max <= 1.0):
            raise ValueError(
                "require 0 < cos_gamma_min <= cos_gamma_max <= 1.0, got "
                f"[{self.cos_gamma_min}, {self.cos_gamma_max}]"
            )
        if self.sigma_multiplier <= 0:
            raise ValueError(f"sigma_multiplier must be > 0, got {self.sigma_multiplier}")
        if self.height < 3 or self.width < 3:
            raise ValueError(f"image must be at least 3x3, got {self.height}x{self.width}")
        if self.fov_up_deg <= self.fov_down_deg:
            raise ValueError("fov_up_deg must exceed fov_down_deg")
        if self.gradient_kernel not in ("scharr", "central_difference"):
            raise ValueError(f"unknown gradient_kernel {self.gradient_kernel!r}")
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or tra.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)
        object.__setattr__(self, "freespace_label_ids", frozenset(int(i) for i in self.freespace_label_ids))


_CONFIG_KEYS = {
    "height",
    "width",
    "fov_up_deg",
    "fov_down_deg",
    "rotation",
    "translation",
    "cos_gamma_min",
    "cos_gamma_max",
    "sigma_multiplier",
    "freespace_label_ids",
    "gradient_kernel",
}


def load_config(path: os.PathLike | str) -> RunConfig:
    """Parse a JSON config; absent keys take documented defaults, unknown keys
    are rejected to catch typos."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return RunConfig(**raw)


def read_point_cloud(path: os.PathLike | str, frame_id: str = SENSOR_FRAME_ID) -> PointCloud:
    """Read a KITTI ``.bin`` scan.

    Non-finite points are dropped (counted in ``num_dropped_nonfinite``); a file
    whose length is not a multiple of 16 bytes raises ``TruncatedRecordError``.
    """
    path = Path(path)
    size = path.stat().st_size
    if size % 16 != 0:
        raise TruncatedRecordError(path, 16, size)
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    finite = np.isfinite(raw).all(axis=1)
    dropped = int(raw.shape[0] - finite.sum())
    if dropped:
        raw = raw[finite]
    return PointCloud(
        xyz=raw[:, :3],
        intensity=raw[:, 3],
        frame_id=frame_id,
        num_dropped_nonfinite=dropped,
    )


def write_point_cloud(path: os.PathLike | str, cloud: PointCloud) -> None:
    """Write a KITTI ``.bin`` scan (float32 little-endian, bit-exact round trip
    for float32 inputs)."""
    out = np.empty((len(cloud), 4), dtype="<f4")
    out[:, :3] = cloud.xyz
    out[:, 3] = cloud.intensity
    out.tofile(path)


def read_labels(path: os.PathLike | str) -> LabelArray:
    """Read a Semantic KITTI ``.label`` file (uint32 words, low 16 bits semantic)."""
    path = Path(path)
    size = path.stat().st_size
    if size % 4 != 0:
        raise TruncatedRecordError(path, 4, size)
    words = np.fromfile(path, dtype="<u4")
    return LabelArray(
        semantic_id=(words & 0xFFFF).astype(np.uint16),
        instance_id=(words >> 16).astype(np.uint16),
    )


def write_labels(path: os.PathLike | str, labels: LabelArray) -> None:
    words = labels.semantic_id.astype("<u4") | (labels.instance_id.astype("<u4") << 16)
    words.astype("<u4").tofile(path)


def _point_labels_of(result) -> np.ndarray:
    labels = getattr(result, "point_labels", result)
    return np.asarray(labels, dtype=np.uint8)


def write_prediction(path: os.PathLike | str, result) -> None:
    """Write the 1-byte-per-point ``.pred`` sidecar (accepts a
    SegmentationResult or a raw per-point class array)."""
    _point_labels_of(result).tofile(path)


def read_prediction(path: os.PathLike | str) -> np.ndarray:
    """Read a ``.pred`` sidecar back into a per-point class array."""
    codes = np.fromfile(path, dtype=np.uint8)
    bad = ~np.isin(codes, [int(c) for c in PointClass])
    if bad.any():
        raise ValueError(f"{path}: invalid class byte {codes[bad][0]} at index {int(np.flatnonzero(bad)[0])}")
    return codes


def prediction_to_label_words(
    result,
    free_id: int = 40,
    off_ground_id: int = 0,
    invalid_id: int = 0,
) -> LabelArray:
    """Convert a prediction to Semantic-KITTI 32-bit label words for external
    tooling (default: free space as road, everything else unlabeled)."""
    codes = _point_labels_of(result)
    semantic = np.full(codes.shape, invalid_id, dtype=np.uint16)
    semantic[codes == PointClass.FREE] = free_id
    semantic[codes == PointClass.OFF_GROUND] = off_ground_id
    return LabelArray(semantic_id=semantic, instance_id=np.zeros_like(semantic))


# Visual convention: free space in orange, obstacles in gray, unusable in red.
CLASS_COLORS = {
    PointClass.FREE: (255, 165, 0),
    PointClass.OFF_GROUND: (128, 128, 128),
    PointClass.INVALID: (255, 0, 0),
}


def export_ply(path: os.PathLike | str, cloud: PointCloud, result, normals=None) -> None:
    """Export a colorized ASCII PLY of the segmentation for external viewers.

    When ``normals`` (a NormalImage) is given, per-vertex ``nx ny nz`` are
    included; points without a valid normal get a zero vector. The result must
    carry a ``source_index`` grid to map pixels back to points in that case.
    """
    codes = _point_labels_of(result)
    if len(codes) != len(cloud):
        raise ValueError(
            f"result has {len(codes)} labels but cloud has {len(cloud)} points"
        )
    n = len(cloud)
    colors = np.zeros((n, 3), dtype=np.uint8)
    for cls, rgb in CLASS_COLORS.items():
        colors[codes == cls] = rgb

    point_normals = None
    if normals is not None:
        point_normals = np.zeros((n, 3), dtype=np.float64)
        source_index = np.asarray(result.source_index)
        ok = (source_index >= 0) & normals.valid
        point_normals[source_index[ok]] = normals.normals[ok]

    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {n}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if point_normals is not None:
            fh.write("property float nx\nproperty float ny\nproperty float nz\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for i in range(n):
            x, y, z = cloud.xyz[i]
            parts = [f"{x:g}", f"{y:g}", f"{z:g}"]
            if point_normals is not None:
                parts += [f"{c:g}" for c in point_normals[i]]
            parts += [str(int(c)) for c in colors[i]]
            fh.write(" ".join(parts) + "\n")


def check_pairing(cloud: PointCloud, labels: LabelArray) -> None:
    """Refuse cloud/label pairs of unequal length (never silently truncate)."""
    if len(cloud) != len(labels):
        raise ValueError(
            f"cloud has {len(cloud)} points but labels has {len(labels)} entries"
        )
