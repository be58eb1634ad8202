import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hfsd import io_kitti
from hfsd.io_kitti import (
    LabelArray,
    PointClass,
    PointCloud,
    RunConfig,
    TruncatedRecordError,
)


def write_bin(path, quads):
    path.write_bytes(b"".join(struct.pack("<4f", *q) for q in quads))


class TestReadPointCloud:
    def test_decodes_two_points_in_order(self, tmp_path):
        p = tmp_path / "a.bin"
        write_bin(p, [(1.0, 2.0, 3.0, 0.5), (4.0, 5.0, 6.0, 0.1)])
        cloud = io_kitti.read_point_cloud(p)
        assert len(cloud) == 2
        np.testing.assert_array_equal(cloud.xyz, [[1, 2, 3], [4, 5, 6]])
        np.testing.assert_array_equal(cloud.intensity, [0.5, 0.1])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.bin"
        p.write_bytes(b"")
        assert len(io_kitti.read_point_cloud(p)) == 0

    def test_truncated_file_names_offset(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"\x00" * 17)
        with pytest.raises(TruncatedRecordError, match="offset 16"):
            io_kitti.read_point_cloud(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            io_kitti.read_point_cloud(tmp_path / "nope.bin")

    def test_nonfinite_points_dropped_and_counted(self, tmp_path):
        p = tmp_path / "nf.bin"
        write_bin(p, [(1, 1, 1, 0), (np.nan, 0, 0, 0), (np.inf, 1, 1, 0), (2, 2, 2, 0)])
        cloud = io_kitti.read_point_cloud(p)
        assert cloud.num_dropped_nonfinite == 2
        np.testing.assert_array_equal(cloud.xyz, [[1, 1, 1], [2, 2, 2]])


class TestLabels:
    def test_bit_split(self, tmp_path):
        p = tmp_path / "a.label"
        p.write_bytes(struct.pack("<2I", 0x00010028, 0x00000000))
        labels = io_kitti.read_labels(p)
        assert labels.semantic_id[0] == 40
        assert labels.instance_id[0] == 1
        assert labels.semantic_id[1] == 0 and labels.instance_id[1] == 0

    def test_truncated(self, tmp_path):
        p = tmp_path / "bad.label"
        p.write_bytes(b"\x00" * 6)
        with pytest.raises(TruncatedRecordError):
            io_kitti.read_labels(p)

    def test_write_read_roundtrip(self, tmp_path):
        labels = LabelArray(
            semantic_id=np.array([40, 0, 48, 65535], dtype=np.uint16),
            instance_id=np.array([1, 0, 7, 65535], dtype=np.uint16),
        )
        p = tmp_path / "rt.label"
        io_kitti.write_labels(p, labels)
        back = io_kitti.read_labels(p)
        np.testing.assert_array_equal(back.semantic_id, labels.semantic_id)
        np.testing.assert_array_equal(back.instance_id, labels.instance_id)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            LabelArray(np.zeros(2, np.uint16), np.zeros(3, np.uint16))


class TestPrediction:
    def test_exact_bytes(self, tmp_path):
        p = tmp_path / "a.pred"
        labels = np.array([PointClass.FREE, PointClass.OFF_GROUND, PointClass.INVALID], np.uint8)
        io_kitti.write_prediction(p, labels)
        assert p.read_bytes() == bytes([0x01, 0x00, 0x02])

    def test_empty(self, tmp_path):
        p = tmp_path / "e.pred"
        io_kitti.write_prediction(p, np.array([], np.uint8))
        assert p.read_bytes() == b""
        assert len(io_kitti.read_prediction(p)) == 0

    def test_roundtrip_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = rng.choice([0, 1, 2], 500).astype(np.uint8)
        p = tmp_path / "rt.pred"
        io_kitti.write_prediction(p, labels)
        np.testing.assert_array_equal(io_kitti.read_prediction(p), labels)

    def test_invalid_byte_rejected(self, tmp_path):
        p = tmp_path / "bad.pred"
        p.write_bytes(bytes([1, 0, 7]))
        with pytest.raises(ValueError, match="invalid class byte 7"):
            io_kitti.read_prediction(p)

    def test_converter_to_label_words(self):
        labels = np.array([PointClass.FREE, PointClass.OFF_GROUND, PointClass.INVALID], np.uint8)
        out = io_kitti.prediction_to_label_words(labels)
        np.testing.assert_array_equal(out.semantic_id, [40, 0, 0])


class TestPly:
    def _result(self, labels):
        class R:
            point_labels = np.asarray(labels, np.uint8)

        return R()

    def test_free_point_at_origin_is_orange(self, tmp_path):
        cloud = PointCloud(xyz=np.zeros((1, 3), np.float32), intensity=np.zeros(1))
        p = tmp_path / "a.ply"
        io_kitti.export_ply(p, cloud, self._result([PointClass.FREE]))
        assert "0 0 0 255 165 0" in p.read_text()

    def test_empty_cloud_valid_header(self, tmp_path):
        cloud = PointCloud(xyz=np.zeros((0, 3), np.float32), intensity=np.zeros(0))
        p = tmp_path / "e.ply"
        io_kitti.export_ply(p, cloud, self._result([]))
        text = p.read_text()
        assert text.startswith("ply\nformat ascii 1.0\n")
        assert "element vertex 0" in text

    def test_class_colors(self, tmp_path):
        cloud = PointCloud(xyz=np.eye(3, dtype=np.float32), intensity=np.zeros(3))
        p = tmp_path / "c.ply"
        io_kitti.export_ply(
            p, cloud, self._result([PointClass.FREE, PointClass.OFF_GROUND, PointClass.INVALID])
        )
        body = p.read_text().split("end_header\n")[1].splitlines()
        assert body[0].endswith("255 165 0")
        assert body[1].endswith("128 128 128")
        assert body[2].endswith("255 0 0")

    def test_normals_header(self, tmp_path):
        from hfsd.normals import NormalImage

        cloud = PointCloud(xyz=np.array([[1, 0, 0]], np.float32), intensity=np.zeros(1))

        class R:
            point_labels = np.array([PointClass.FREE], np.uint8)
            source_index = np.array([[0]], np.int64)

        normals = NormalImage(
            normals=np.array([[[0.0, 0.0, 1.0]]]),
            valid=np.array([[True]]),
            frame_id="sensor",
        )
        p = tmp_path / "n.ply"
        io_kitti.export_ply(p, cloud, R(), normals)
        text = p.read_text()
        for prop in ("property float nx", "property float ny", "property float nz"):
            assert prop in text
        assert "1 0 0 0 0 1 255 165 0" in text

    def test_length_mismatch(self, tmp_path):
        cloud = PointCloud(xyz=np.zeros((2, 3), np.float32), intensity=np.zeros(2))
        with pytest.raises(ValueError, match="2 points"):
            io_kitti.export_ply(tmp_path / "m.ply", cloud, self._result([PointClass.FREE]))


class TestConfig:
    def test_empty_document_gives_defaults(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{}")
        cfg = io_kitti.load_config(p)
        assert cfg.cos_gamma_min == 0.90
        assert cfg.cos_gamma_max == 1.0
        assert cfg.sigma_multiplier == 1.0
        assert cfg.height == 64 and cfg.width == 1024
        assert cfg.freespace_label_ids == frozenset({40, 44, 48, 49, 60})
        assert cfg.gradient_kernel == "scharr"
        np.testing.assert_array_equal(cfg.translation, [0.0, 0.0, 1.73])

    def test_bound_violation_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"cos_gamma_min": 1.5}))
        with pytest.raises(ValueError, match="cos_gamma_min"):
            io_kitti.load_config(p)

    def test_kernel_selection(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"gradient_kernel": "central_difference"}))
        assert io_kitti.load_config(p).gradient_kernel == "central_difference"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"cos_sigma_min": 0.5}))
        with pytest.raises(ValueError, match="cos_sigma_min"):
            io_kitti.load_config(p)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("{not json")
        with pytest.raises(ValueError, match="malformed"):
            io_kitti.load_config(p)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"cos_gamma_min": 0.0},
            {"cos_gamma_min": 0.95, "cos_gamma_max": 0.9},
            {"sigma_multiplier": 0.0},
            {"height": 2},
            {"width": 2},
            {"gradient_kernel": "sobel"},
            {"fov_up_deg": -30.0, "fov_down_deg": -20.0},
        ],
    )
    def test_invariant_violations(self, kwargs):
        with pytest.raises(ValueError):
            RunConfig(**kwargs)


class TestPairing:
    def test_unequal_lengths_refused(self):
        cloud = PointCloud(xyz=np.zeros((3, 3), np.float32), intensity=np.zeros(3))
        labels = LabelArray(np.zeros(2, np.uint16), np.zeros(2, np.uint16))
        with pytest.raises(ValueError, match="3 points"):
            io_kitti.check_pairing(cloud, labels)


@given(
    st.lists(
        st.tuples(
            st.floats(-100, 100, width=32),
            st.floats(-100, 100, width=32),
            st.floats(-100, 100, width=32),
            st.floats(0, 1, width=32),
        ),
        max_size=40,
    )
)
def test_point_cloud_roundtrip_bitwise(tmp_path_factory, quads):
    cloud = PointCloud(
        xyz=np.array([q[:3] for q in quads], np.float32).reshape(-1, 3),
        intensity=np.array([q[3] for q in quads], np.float32),
    )
    p = tmp_path_factory.mktemp("rt") / "c.bin"
    io_kitti.write_point_cloud(p, cloud)
    back = io_kitti.read_point_cloud(p)
    assert np.array_equal(back.xyz, cloud.xyz)
    assert np.array_equal(back.intensity, cloud.intensity)


@given(st.lists(st.integers(0, 0xFFFFFFFF), max_size=40))
def test_label_words_roundtrip(tmp_path_factory, words):
    arr = np.array(words, dtype="<u4")
    labels = LabelArray(
        semantic_id=(arr & 0xFFFF).astype(np.uint16),
        instance_id=(arr >> 16).astype(np.uint16),
    )
    p = tmp_path_factory.mktemp("rt") / "l.label"
    io_kitti.write_labels(p, labels)
    back = io_kitti.read_labels(p)
    assert np.array_equal(back.semantic_id, labels.semantic_id)
    assert np.array_equal(back.instance_id, labels.instance_id)
