"""Segmentation quality metrics and throughput measurement.

Free space is the positive class. Ground truth comes from aggregating the
drivable Semantic KITTI classes into one binary label; unlabeled points are
ignored. Dataset-level mIoU is computed from globally summed confusion
counts, never from averaging per-scan scores.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .freespace import SegmentationResult, segment
from .io_kitti import (
    LabelArray,
    PointClass,
    PointCloud,
    RunConfig,
    check_pairing,
    read_labels,
    read_point_cloud,
)

UNLABELED_ID = 0


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts with free space as the positive class.

    ``ignored`` tallies points excluded from scoring (unlabeled ground
    truth); tp+fp+fn+tn+ignored equals the number of evaluated points.
    Addition merges counts, so scans can be scored independently and summed.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    ignored: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn, self.ignored) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
            ignored=self.ignored + other.ignored,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn + self.ignored


def aggregate_gt(
    labels: LabelArray, freespace_ids: Iterable[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Binary ground truth: positive where the semantic id is one of the
    drivable classes, ignored where unlabeled, negative otherwise."""
    ids = np.fromiter((int(i) for i in freespace_ids), dtype=np.uint16)
    positive = np.isin(labels.semantic_id, ids)
    ignore = labels.semantic_id == UNLABELED_ID
    return positive, ignore


def confusion(pred, gt_positive: np.ndarray, ignore: np.ndarray) -> ConfusionCounts:
    """Count agreement between predicted and true free space.

    An INVALID prediction counts as not-free, so points the pipeline never
    classified cannot inflate free-space recall.
    """
    codes = np.asarray(getattr(pred, "point_labels", pred))
    if codes.shape != gt_positive.shape or codes.shape != ignore.shape:
        raise ValueError(
            f"length mismatch: {codes.shape[0]} predictions, "
            f"{gt_positive.shape[0]} ground-truth labels"
        )
    scored = ~ignore
    pred_free = codes == PointClass.FREE
    return ConfusionCounts(
        tp=int((scored & pred_free & gt_positive).sum()),
        fp=int((scored & pred_free & ~gt_positive).sum()),
        fn=int((scored & ~pred_free & gt_positive).sum()),
        tn=int((scored & ~pred_free & ~gt_positive).sum()),
        ignored=int(ignore.sum()),
    )


def miou(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(iou_free, iou_occupied, miou); an absent class predicted absent
    scores 1 (0/0 := 1)."""

    def _iou(hit: int, miss_a: int, miss_b: int) -> float:
        denom = hit + miss_a + miss_b
        return hit / denom if denom else 1.0

    iou_free = _iou(counts.tp, counts.fp, counts.fn)
    iou_occupied = _iou(counts.tn, counts.fn, counts.fp)
    return iou_free, iou_occupied, (iou_free + iou_occupied) / 2.0


@dataclass(frozen=True)
class ScanMetrics:
    scan_id: str
    counts: ConfusionCounts
    seconds: float

    @property
    def miou(self) -> float:
        return miou(self.counts)[2]


@dataclass
class TimingStats:
    """Per-scan wall-clock samples of the segmentation pipeline, I/O excluded."""

    per_scan_seconds: list[float] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    warmup: int = 0

    @property
    def num_samples(self) -> int:
        return len(self.per_scan_seconds)

    @property
    def total_seconds(self) -> float:
        return sum(self.per_scan_seconds)

    @property
    def mean_hz(self) -> float:
        return self.num_samples / self.total_seconds if self.per_scan_seconds else 0.0

    @property
    def median_hz(self) -> float:
        return 1.0 / statistics.median(self.per_scan_seconds) if self.per_scan_seconds else 0.0


@dataclass
class EvalReport:
    """Per-scan and aggregate segmentation quality plus timing."""

    per_scan: list[ScanMetrics] = field(default_factory=list)
    timing: TimingStats = field(default_factory=TimingStats)

    @property
    def counts(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for scan in self.per_scan:
            total = total + scan.counts
        return total

    @property
    def scan_count(self) -> int:
        return len(self.per_scan)

    def summary(self) -> dict:
        iou_free, iou_occupied, mean_iou = miou(self.counts)
        return {
            "scan_count": self.scan_count,
            "iou_free": iou_free,
            "iou_occupied": iou_occupied,
            "miou": mean_iou,
            "mean_hz": self.timing.mean_hz,
            "median_hz": self.timing.median_hz,
        }

    def to_json(self) -> str:
        payload = dict(self.summary())
        payload["per_scan"] = [
            {
                "scan_id": s.scan_id,
                "iou_free": miou(s.counts)[0],
                "iou_occupied": miou(s.counts)[1],
                "miou": s.miou,
                "seconds": s.seconds,
                "counts": {
                    "tp": s.counts.tp,
                    "fp": s.counts.fp,
                    "fn": s.counts.fn,
                    "tn": s.counts.tn,
                    "ignored": s.counts.ignored,
                },
            }
            for s in self.per_scan
        ]
        return json.dumps(payload, indent=2)

    def to_text(self) -> str:
        s = self.summary()
        lines = [
            f"{'scans':>12}  {s['scan_count']}",
            f"{'IoU free':>12}  {100 * s['iou_free']:.2f} %",
            f"{'IoU occupied':>12}  {100 * s['iou_occupied']:.2f} %",
            f"{'mIoU':>12}  {100 * s['miou']:.2f} %",
        ]
        if self.timing.num_samples:
            lines.append(f"{'mean speed':>12}  {s['mean_hz']:.1f} Hz")
            lines.append(f"{'median speed':>12}  {s['median_hz']:.1f} Hz")
        return "\n".join(lines)


def evaluate_scan(
    cloud: PointCloud, labels: LabelArray, cfg: RunConfig, scan_id: str = ""
) -> tuple[ScanMetrics, SegmentationResult]:
    """Segment one scan and score it against its labels."""
    check_pairing(cloud, labels)
    start = time.perf_counter()
    result = segment(cloud, cfg)
    seconds = time.perf_counter() - start
    positive, ignore = aggregate_gt(labels, cfg.freespace_label_ids)
    counts = confusion(result, positive, ignore)
    return ScanMetrics(scan_id=scan_id, counts=counts, seconds=seconds), result


def find_scan_pairs(root: str | Path, sequences: Sequence[str]) -> list[tuple[Path, Path]]:
    """Scan/label file pairs under the published layout
    ``<root>/sequences/<NN>/{velodyne,labels}/``; missing labels are an error."""
    root = Path(root)
    pairs: list[tuple[Path, Path]] = []
    for seq in sequences:
        seq_dir = root / "sequences" / seq
        velo_dir = seq_dir / "velodyne"
        if not velo_dir.is_dir():
            raise FileNotFoundError(f"no velodyne directory at {velo_dir}")
        for bin_path in sorted(velo_dir.glob("*.bin")):
            label_path = seq_dir / "labels" / (bin_path.stem + ".label")
            if not label_path.is_file():
                raise FileNotFoundError(f"missing labels for {bin_path}: {label_path}")
            pairs.append((bin_path, label_path))
    return pairs


def evaluate_dataset(
    root: str | Path,
    sequences: Sequence[str],
    cfg: RunConfig,
    limit: Optional[int] = None,
) -> EvalReport:
    """Run the pipeline over labeled sequences and aggregate the scores."""
    pairs = find_scan_pairs(root, sequences)
    if limit is not None:
        pairs = pairs[:limit]
    report = EvalReport()
    for bin_path, label_path in pairs:
        cloud = read_point_cloud(bin_path)
        labels = read_labels(label_path)
        metrics, _ = evaluate_scan(cloud, labels, cfg, scan_id=bin_path.stem)
        report.per_scan.append(metrics)
        report.timing.per_scan_seconds.append(metrics.seconds)
    return report


def benchmark(
    clouds: Sequence[PointCloud],
    cfg: RunConfig,
    warmup: int = 3,
    repeat: int = 1,
) -> TimingStats:
    """Time segment() over pre-loaded scans, excluding all file I/O.

    ``warmup`` unmeasured runs come first (cycling through the scans), then
    every scan is timed ``repeat`` times. Stage totals come from the
    pipeline's own stage clocks.
    """
    if not clouds:
        raise ValueError("benchmark needs at least one scan")
    stats = TimingStats(warmup=warmup)
    for i in range(warmup):
        segment(clouds[i % len(clouds)], cfg)
    stage_totals: dict[str, float] = {}
    for _ in range(repeat):
        for cloud in clouds:
            start = time.perf_counter()
            result = segment(cloud, cfg)
            stats.per_scan_seconds.append(time.perf_counter() - start)
            for name, sec in result.stage_seconds.items():
                stage_totals[name] = stage_totals.get(name, 0.0) + sec
    stats.stage_seconds = stage_totals
    return stats


__all__ = [
    "ConfusionCounts",
    "ScanMetrics",
    "TimingStats",
    "EvalReport",
    "aggregate_gt",
    "confusion",
    "miou",
    "evaluate_scan",
    "find_scan_pairs",
    "evaluate_dataset",
    "benchmark",
    "UNLABELED_ID",
]
