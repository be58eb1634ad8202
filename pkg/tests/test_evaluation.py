import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hfsd import RunConfig, SceneSpec, generate, write_scene
from hfsd.evaluation import (
    ConfusionCounts,
    EvalReport,
    ScanMetrics,
    aggregate_gt,
    benchmark,
    confusion,
    evaluate_dataset,
    evaluate_scan,
    find_scan_pairs,
    miou,
)
from hfsd.io_kitti import LabelArray, PointClass, PointCloud

from conftest import SENSOR_HEIGHT


def labels_of(semantic):
    sem = np.asarray(semantic, np.uint16)
    return LabelArray(semantic_id=sem, instance_id=np.zeros_like(sem))


class TestAggregateGt:
    def test_class_mapping(self):
        positive, ignore = aggregate_gt(labels_of([40, 0, 10, 44, 48, 49, 60, 70]), {40, 44, 48, 49, 60})
        np.testing.assert_array_equal(
            positive, [True, False, False, True, True, True, True, False]
        )
        np.testing.assert_array_equal(
            ignore, [False, True, False, False, False, False, False, False]
        )

    def test_custom_ids(self):
        positive, _ = aggregate_gt(labels_of([40, 10]), {10})
        np.testing.assert_array_equal(positive, [False, True])


class TestConfusion:
    def test_all_true_positive(self):
        pred = np.full(5, PointClass.FREE, np.uint8)
        c = confusion(pred, np.ones(5, bool), np.zeros(5, bool))
        assert (c.tp, c.fp, c.fn, c.tn, c.ignored) == (5, 0, 0, 0, 0)

    def test_false_positive(self):
        pred = np.array([PointClass.FREE], np.uint8)
        c = confusion(pred, np.zeros(1, bool), np.zeros(1, bool))
        assert c.fp == 1

    def test_ignored_not_counted(self):
        pred = np.array([PointClass.FREE, PointClass.OFF_GROUND], np.uint8)
        c = confusion(pred, np.array([True, False]), np.array([True, True]))
        assert c.ignored == 2 and c.total == 2
        assert c.tp == c.fp == c.fn == c.tn == 0

    def test_invalid_prediction_counts_negative(self):
        pred = np.array([PointClass.INVALID, PointClass.INVALID], np.uint8)
        c = confusion(pred, np.array([True, False]), np.zeros(2, bool))
        assert c.fn == 1 and c.tn == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            confusion(np.zeros(2, np.uint8), np.zeros(3, bool), np.zeros(3, bool))

    def test_total_invariant(self):
        rng = np.random.default_rng(0)
        pred = rng.choice([0, 1, 2], 1000).astype(np.uint8)
        gt = rng.random(1000) < 0.5
        ig = rng.random(1000) < 0.2
        c = confusion(pred, gt, ig)
        assert c.total == 1000


class TestMiou:
    def test_perfect(self):
        assert miou(ConfusionCounts(tp=10, tn=20)) == (1.0, 1.0, 1.0)

    def test_hand_counted_sets(self):
        # pred {a,b}, gt {b,c}, universe {a,b,c,d}.
        c = ConfusionCounts(tp=1, fp=1, fn=1, tn=1)
        iou_free, iou_occ, m = miou(c)
        assert iou_free == pytest.approx(1 / 3)
        assert iou_occ == pytest.approx(1 / 3)
        assert m == pytest.approx(1 / 3)

    def test_fully_inverted(self):
        assert miou(ConfusionCounts(fp=5, fn=5))[2] == 0.0

    def test_empty_class_scores_one(self):
        iou_free, iou_occ, m = miou(ConfusionCounts(tn=10))
        assert iou_free == 1.0 and iou_occ == 1.0 and m == 1.0

    def test_swap_symmetry(self):
        c = ConfusionCounts(tp=7, fp=3, fn=2, tn=11)
        swapped = ConfusionCounts(tp=c.tn, fp=c.fn, fn=c.fp, tn=c.tp)
        a_free, a_occ, a_m = miou(c)
        b_free, b_occ, b_m = miou(swapped)
        assert (a_free, a_occ) == (b_occ, b_free)
        assert a_m == pytest.approx(b_m)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1)


@given(
    pred=st.lists(st.sampled_from([0, 1, 2]), min_size=0, max_size=60),
    gt_bits=st.lists(st.booleans(), min_size=0, max_size=60),
    split=st.integers(0, 60),
)
@settings(max_examples=60)
def test_confusion_count_additivity(pred, gt_bits, split):
    n = min(len(pred), len(gt_bits))
    pred = np.array(pred[:n], np.uint8)
    gt = np.array(gt_bits[:n], bool)
    ignore = np.zeros(n, bool)
    split = min(split, n)
    whole = confusion(pred, gt, ignore)
    parts = confusion(pred[:split], gt[:split], ignore[:split]) + confusion(
        pred[split:], gt[split:], ignore[split:]
    )
    assert whole == parts
    assert miou(whole) == miou(parts)


class TestBenchmark:
    def _clouds(self, n, size=300):
        rng = np.random.default_rng(1)
        return [
            PointCloud(xyz=rng.normal(0, 10, (size, 3)), intensity=np.zeros(size))
            for _ in range(n)
        ]

    def test_sample_count(self, vehicle_cfg):
        stats = benchmark(self._clouds(10), vehicle_cfg, warmup=3)
        assert stats.num_samples == 10
        assert stats.mean_hz == pytest.approx(10 / stats.total_seconds)

    def test_single_scan_no_warmup(self, vehicle_cfg):
        stats = benchmark(self._clouds(1), vehicle_cfg, warmup=0)
        assert stats.num_samples == 1

    def test_repeat_multiplies_samples(self, vehicle_cfg):
        stats = benchmark(self._clouds(2), vehicle_cfg, warmup=0, repeat=5)
        assert stats.num_samples == 10

    def test_stage_breakdown_present(self, vehicle_cfg):
        stats = benchmark(self._clouds(2), vehicle_cfg, warmup=0)
        assert set(stats.stage_seconds) == {"projection", "normals", "features", "filter"}

    def test_empty_rejected(self, vehicle_cfg):
        with pytest.raises(ValueError):
            benchmark([], vehicle_cfg)


@pytest.fixture(scope="module")
def synthetic_dataset(tmp_path_factory, kitti_model):
    root = tmp_path_factory.mktemp("kitti_layout")
    seq = root / "sequences" / "00"
    (seq / "velodyne").mkdir(parents=True)
    (seq / "labels").mkdir(parents=True)
    for i, kind in enumerate(["plane", "plane_with_boxes"]):
        from hfsd import Box

        boxes = (Box(center=(3.0, 0.0, -SENSOR_HEIGHT + 0.6), extents=(1.2, 1.2, 1.2)),) if kind == "plane_with_boxes" else ()
        cloud, gt = generate(
            SceneSpec(kind=kind, model=kitti_model, sensor_height=SENSOR_HEIGHT, boxes=boxes)
        )
        bin_path, label_path = write_scene(seq / "velodyne" / f"{i:06d}.bin", cloud, gt)
        os.replace(label_path, seq / "labels" / label_path.name)
    return root


class TestDatasetEvaluation:
    def test_pairs_discovered_sorted(self, synthetic_dataset):
        pairs = find_scan_pairs(synthetic_dataset, ["00"])
        assert [p[0].stem for p in pairs] == ["000000", "000001"]

    def test_missing_labels_raise(self, synthetic_dataset):
        seq = synthetic_dataset / "sequences" / "00"
        extra = seq / "velodyne" / "000009.bin"
        extra.write_bytes(b"")
        try:
            with pytest.raises(FileNotFoundError, match="missing labels"):
                find_scan_pairs(synthetic_dataset, ["00"])
        finally:
            extra.unlink()

    def test_missing_sequence_raises(self, synthetic_dataset):
        with pytest.raises(FileNotFoundError, match="velodyne"):
            find_scan_pairs(synthetic_dataset, ["99"])

    def test_evaluate_dataset(self, synthetic_dataset, vehicle_cfg):
        report = evaluate_dataset(synthetic_dataset, ["00"], vehicle_cfg)
        assert report.scan_count == 2
        s = report.summary()
        assert 0.9 <= s["iou_free"] <= 1.0
        assert report.timing.num_samples == 2

    def test_limit(self, synthetic_dataset, vehicle_cfg):
        report = evaluate_dataset(synthetic_dataset, ["00"], vehicle_cfg, limit=1)
        assert report.scan_count == 1

    def test_report_emitters(self, synthetic_dataset, vehicle_cfg):
        report = evaluate_dataset(synthetic_dataset, ["00"], vehicle_cfg)
        payload = json.loads(report.to_json())
        assert payload["scan_count"] == 2
        assert len(payload["per_scan"]) == 2
        text = report.to_text()
        assert "mIoU" in text and "IoU free" in text

    def test_aggregate_from_global_counts(self, synthetic_dataset, vehicle_cfg):
        report = evaluate_dataset(synthetic_dataset, ["00"], vehicle_cfg)
        total = ConfusionCounts()
        for scan in report.per_scan:
            total = total + scan.counts
        assert report.counts == total
        assert report.summary()["miou"] == pytest.approx(miou(total)[2])


class TestEvaluateScan:
    def test_pairing_enforced(self, vehicle_cfg):
        cloud = PointCloud(xyz=np.zeros((3, 3)), intensity=np.zeros(3))
        with pytest.raises(ValueError):
            evaluate_scan(cloud, labels_of([40, 40]), vehicle_cfg)

    def test_plane_scene_scores_high(self, vehicle_cfg, kitti_model, plane_scene):
        cloud, gt = plane_scene
        labels = labels_of(np.where(gt.is_ground, 40, 0))
        metrics, result = evaluate_scan(cloud, labels, vehicle_cfg, scan_id="plane")
        iou_free, _, _ = miou(metrics.counts)
        assert iou_free > 0.9
        assert metrics.seconds > 0
