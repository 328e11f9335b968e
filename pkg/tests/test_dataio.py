import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clicklift import dataio
from clicklift.dataio import (
    ClickAnnotation,
    FrameRecord,
    LabelStage,
    PointCloudFrame,
    PredictionSet,
    PseudoLabelSet,
    SequenceManifest,
)
from clicklift.errors import FormatError, InputError
from clicklift.geometry import Calibration


def make_frame(n, rng=None, frame_id="000000"):
    rng = rng or np.random.default_rng(0)
    return PointCloudFrame(
        frame_id=frame_id,
        points=rng.uniform(-50, 50, size=(n, 3)).astype(np.float32).astype(np.float64),
        intensity=rng.uniform(0, 1, size=n).astype(np.float32),
        pose=np.eye(4),
    )


class TestFrameIO:
    def test_empty_frame_is_eight_bytes(self, tmp_path):
        path = tmp_path / "f.bin"
        dataio.write_frame(path, make_frame(0))
        assert path.stat().st_size == 8
        back = dataio.read_frame(path)
        assert back.num_points == 0

    def test_three_point_frame_is_56_bytes(self, tmp_path):
        # 8-byte header + 3 * 16 payload
        path = tmp_path / "f.bin"
        dataio.write_frame(path, make_frame(3))
        assert path.stat().st_size == 8 + 3 * 16 == 56

    def test_round_trip(self, tmp_path, rng):
        frame = make_frame(257, rng)
        path = tmp_path / "f.bin"
        dataio.write_frame(path, frame)
        back = dataio.read_frame(path)
        np.testing.assert_array_equal(back.points, frame.points)
        np.testing.assert_array_equal(back.intensity, frame.intensity)

    def test_corrupt_magic_names_offset_zero(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"XXXX" + struct.pack("<I", 0))
        with pytest.raises(FormatError) as err:
            dataio.read_frame(path)
        assert err.value.offset == 0

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"YOCL" + struct.pack("<I", 2) + b"\x00" * 16)
        with pytest.raises(FormatError):
            dataio.read_frame(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "f.bin"
        path.write_bytes(b"YO")
        with pytest.raises(FormatError):
            dataio.read_frame(path)


class TestLabelIO:
    def test_all_ignored_round_trip(self, tmp_path):
        labels = PseudoLabelSet.empty(7, LabelStage.PLG)
        path = tmp_path / "l.bin"
        dataio.write_labels(path, labels)
        back = dataio.read_labels(path)
        assert back.stage is LabelStage.PLG
        assert (back.class_ids == -1).all()
        assert (back.instance_ids == -1).all()

    def test_mixed_five_point_byte_length(self, tmp_path):
        # u32 count + stage byte + 5 * (i32 + i32 + f32)
        labels = PseudoLabelSet(
            [0, 1, -1, 2, 0], [3, 4, -1, 5, 3], [1, 0.5, 0, 0.25, 1], LabelStage.TSU
        )
        path = tmp_path / "l.bin"
        dataio.write_labels(path, labels)
        assert path.stat().st_size == 4 + 1 + 5 * 12

    def test_header_count_mismatch(self, tmp_path):
        path = tmp_path / "l.bin"
        path.write_bytes(struct.pack("<IB", 10, 1) + b"\x00" * (9 * 12))
        with pytest.raises(FormatError):
            dataio.read_labels(path)

    def test_unknown_stage_byte(self, tmp_path):
        path = tmp_path / "l.bin"
        path.write_bytes(struct.pack("<IB", 0, 9))
        with pytest.raises(FormatError) as err:
            dataio.read_labels(path)
        assert err.value.offset == 4

    @given(
        arrays(np.int32, st.integers(0, 40), elements=st.integers(-1, 5)),
        st.sampled_from(list(LabelStage)),
        st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_fuzz(self, tmp_path_factory, classes, stage, seed):
        rng = np.random.default_rng(seed)
        n = len(classes)
        labels = PseudoLabelSet(
            classes,
            rng.integers(-1, 9, size=n).astype(np.int32),
            rng.uniform(0, 1, size=n).astype(np.float32),
            stage,
        )
        path = tmp_path_factory.mktemp("labels") / "l.bin"
        dataio.write_labels(path, labels)
        back = dataio.read_labels(path)
        assert back.stage is stage
        np.testing.assert_array_equal(back.class_ids, labels.class_ids)
        np.testing.assert_array_equal(back.instance_ids, labels.instance_ids)
        np.testing.assert_array_equal(back.confidence, labels.confidence)


class TestPredictionIO:
    def test_round_trip(self, tmp_path, rng):
        preds = PredictionSet(rng.uniform(0, 1, size=(33, 3)).astype(np.float32))
        path = tmp_path / "p.bin"
        dataio.write_predictions(path, preds)
        back = dataio.read_predictions(path)
        np.testing.assert_array_equal(back.scores, preds.scores)

    def test_truncated_scores(self, tmp_path):
        path = tmp_path / "p.bin"
        path.write_bytes(struct.pack("<IH", 4, 3) + b"\x00" * 10)
        with pytest.raises(FormatError):
            dataio.read_predictions(path)


class TestManifest:
    def _manifest(self):
        calib = Calibration(
            [[100, 0, 50], [0, 100, 50], [0, 0, 1]], np.eye(4), 100, 100
        )
        frames = [
            FrameRecord("a", "frames/a.bin", np.eye(4), 0.0),
            FrameRecord("b", "frames/b.bin", np.eye(4), 0.1),
        ]
        return SequenceManifest("seq1", frames, calib, ["vehicle", "pedestrian"])

    def test_round_trip(self, tmp_path):
        m = self._manifest()
        path = tmp_path / "manifest.json"
        dataio.write_manifest(path, m)
        back = dataio.read_manifest(path)
        assert back.sequence_id == "seq1"
        assert [f.frame_id for f in back.frames] == ["a", "b"]
        assert back.classes == ["vehicle", "pedestrian"]
        np.testing.assert_allclose(back.calibration.intrinsic, m.calibration.intrinsic)

    def test_duplicate_frame_ids_rejected(self):
        calib = Calibration(np.eye(3), np.eye(4), 10, 10)
        frames = [
            FrameRecord("a", "x", np.eye(4), 0.0),
            FrameRecord("a", "y", np.eye(4), 0.1),
        ]
        with pytest.raises(InputError):
            SequenceManifest("s", frames, calib)

    def test_nonincreasing_timestamps_rejected(self):
        calib = Calibration(np.eye(3), np.eye(4), 10, 10)
        frames = [
            FrameRecord("a", "x", np.eye(4), 0.2),
            FrameRecord("b", "y", np.eye(4), 0.1),
        ]
        with pytest.raises(InputError):
            SequenceManifest("s", frames, calib)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{nope")
        with pytest.raises(FormatError):
            dataio.read_manifest(path)


class TestClicksAndMasks:
    def test_click_round_trip(self, tmp_path):
        clicks = [
            ClickAnnotation("f0", 0, 1, (1.25, -3.5)),
            ClickAnnotation("f1", 4, 2, (0.0, 0.0)),
        ]
        path = tmp_path / "clicks.jsonl"
        dataio.write_clicks(path, clicks)
        back = dataio.read_clicks(path)
        assert [(c.frame_id, c.instance_id, c.class_id, c.bev) for c in back] == [
            ("f0", 0, 1, (1.25, -3.5)),
            ("f1", 4, 2, (0.0, 0.0)),
        ]

    def test_bad_click_line(self, tmp_path):
        path = tmp_path / "clicks.jsonl"
        path.write_text('{"frame_id": "f0"}\n')
        with pytest.raises(FormatError):
            dataio.read_clicks(path)

    def test_mask_round_trip(self, tmp_path):
        path = tmp_path / "m.json"
        dataio.write_masks(path, 8, 4, [(0, 1, [3, 2, 9, 1])])
        w, h, entries = dataio.read_masks(path)
        assert (w, h) == (8, 4)
        assert entries == [(0, 1, [3, 2, 9, 1])]

    def test_predicted_instances_round_trip(self, tmp_path):
        path = tmp_path / "pi.json"
        docs = [{"instance_id": 3, "class_id": 0, "score": 0.8, "point_indices": [1, 5, 9]}]
        dataio.write_predicted_instances(path, docs)
        assert dataio.read_predicted_instances(path) == docs
