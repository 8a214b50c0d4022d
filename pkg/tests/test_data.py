import json

import pytest

from conftest import make_box
from streameval.data import (
    write_runtime_profile,
    FrameAnnotations,
    FrameDetections,
    RuntimeProfile,
    TdbEntry,
    TemporalDatabase,
    ValidationError,
    load_detections,
    load_runtime_profile,
    load_scene_annotations,
    load_temporal_db,
    regular_timestamps,
    write_detections,
    write_scene_annotations,
)


def write_lines(path, objs):
    with open(path, "w") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")


def gt_line(t, scene="s0", keyframe=True, boxes=None):
    if boxes is None:
        boxes = [
            {
                "instance_id": "a",
                "category": "car",
                "center": [1.0, 2.0, 0.5],
                "size": [2.0, 4.0, 1.5],
                "rotation": [1.0, 0.0, 0.0, 0.0],
                "velocity": [3.0, 0.0],
                "attribute": "vehicle.moving",
            }
        ]
    return {"scene_id": scene, "timestamp_us": t, "is_keyframe": keyframe, "boxes": boxes}


class TestBox3D:
    def test_rejects_negative_size(self):
        with pytest.raises(ValidationError, match="size"):
            make_box(w=-1.0)

    def test_rejects_bad_score(self):
        with pytest.raises(ValidationError, match="score"):
            make_box(score=1.5)

    def test_rejects_nonfinite_velocity(self):
        with pytest.raises(ValidationError, match="velocity"):
            make_box(vx=float("nan"))

    def test_bev_rect_footprint(self):
        rect = make_box(x=1.0, y=2.0, w=2.0, l=4.0, yaw=0.3).bev_rect()
        assert (rect.center_x, rect.center_y) == (1.0, 2.0)
        assert (rect.width, rect.length) == (2.0, 4.0)
        assert rect.yaw == pytest.approx(0.3)


def test_duplicate_instance_ids_rejected():
    boxes = [make_box(instance_id="a"), make_box(x=5.0, instance_id="a")]
    with pytest.raises(ValidationError, match="duplicate instance_id"):
        FrameAnnotations("s0", 0, True, boxes)


def test_temporal_db_must_increase():
    with pytest.raises(ValidationError, match="strictly increase"):
        TemporalDatabase([TdbEntry(10, []), TdbEntry(10, [])])


class TestSceneFile:
    def test_two_line_roundtrip(self, tmp_path):
        path = tmp_path / "s0.gt.jsonl"
        write_lines(path, [gt_line(0), gt_line(500_000, keyframe=False)])
        frames = load_scene_annotations(path)
        assert [f.timestamp_us for f in frames] == [0, 500_000]
        assert frames[0].is_keyframe and not frames[1].is_keyframe
        assert frames[0].boxes[0].score == 1.0

    def test_write_read_identical(self, tmp_path):
        path = tmp_path / "s0.gt.jsonl"
        frames = [
            FrameAnnotations(
                "s0",
                t,
                True,
                [make_box(x=0.1 * t, yaw=0.37, vx=1.234567, instance_id="obj-0",
                          attribute="vehicle.moving")],
            )
            for t in (0, 83_333, 166_667)
        ]
        write_scene_annotations(path, frames)
        assert load_scene_annotations(path) == frames

    def test_duplicate_timestamp_rejected(self, tmp_path):
        path = tmp_path / "s0.gt.jsonl"
        write_lines(path, [gt_line(0), gt_line(0)])
        with pytest.raises(ValidationError, match="unsorted scene"):
            load_scene_annotations(path)

    def test_negative_width_names_field_and_line(self, tmp_path):
        path = tmp_path / "s0.gt.jsonl"
        bad = gt_line(83_333)
        bad["boxes"][0]["size"] = [-2.0, 4.0, 1.5]
        write_lines(path, [gt_line(0), bad])
        with pytest.raises(ValidationError, match=r":2: size"):
            load_scene_annotations(path)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "s0.gt.jsonl"
        with open(path, "w") as fh:
            fh.write(json.dumps(gt_line(0)) + "\n")
            fh.write("{not json\n")
        with pytest.raises(ValidationError, match=r":2: malformed JSON"):
            load_scene_annotations(path)

    def test_roundtrip_arbitrary_floats(self, tmp_path):
        from hypothesis import given, settings
        from hypothesis import strategies as st

        coords = st.floats(-1e6, 1e6, allow_nan=False)

        @given(coords, coords, st.floats(0.01, 100.0), st.floats(-3.14, 3.14),
               st.floats(0.0, 1.0))
        @settings(max_examples=50, deadline=None)
        def roundtrip(x, vy, w, yaw, score):
            path = tmp_path / "rt.det.jsonl"
            det = FrameDetections(
                "s0", 12345,
                [make_box(x=x, vy=vy, w=w, yaw=yaw, score=score, attribute="a.b")],
            )
            write_detections(path, [det])
            assert load_detections(path) == [det]

        roundtrip()

    def test_multi_scene_file(self, tmp_path):
        path = tmp_path / "multi.gt.jsonl"
        write_lines(
            path,
            [gt_line(0, "s0"), gt_line(1000, "s0"), gt_line(0, "s1"), gt_line(1000, "s1")],
        )
        frames = load_scene_annotations(path)
        assert len(frames) == 4


class TestDetectionFile:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "s0.det.jsonl"
        dets = [
            FrameDetections("s0", 0, [make_box(score=0.875, vx=2.5)]),
            FrameDetections("s0", 83_333, [make_box(x=0.2, score=0.5)]),
        ]
        write_detections(path, dets)
        assert load_detections(path) == dets

    def test_temporal_db_from_file(self, tmp_path):
        path = tmp_path / "s0.tdb.jsonl"
        write_lines(
            path,
            [
                {"scene_id": "s0", "timestamp_us": 0, "boxes": [gt_line(0)["boxes"][0] | {"score": 0.9}]},
                {"scene_id": "s0", "timestamp_us": 50_000, "boxes": []},
            ],
        )
        db = load_temporal_db(path)
        assert len(db) == 2
        assert db.entries[0].boxes[0].score == 0.9


class TestRuntimeProfile:
    def test_empirical(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"name": "rtx3090", "samples_ms": [116, 117, 118]}))
        profile = load_runtime_profile(path)
        assert profile.name == "rtx3090"
        assert profile.samples_ms == [116.0, 117.0, 118.0]

    def test_constant(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"name": "c", "distribution": "constant", "params": {"ms": 500}}))
        profile = load_runtime_profile(path)
        assert profile.distribution == "constant"
        assert profile.params["ms"] == 500.0

    def test_empty_samples_rejected(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps({"samples_ms": []}))
        with pytest.raises(ValidationError, match="empty profile"):
            load_runtime_profile(path)

    def test_nonpositive_sample_rejected(self):
        with pytest.raises(ValidationError, match="positive"):
            RuntimeProfile("x", samples_ms=[100.0, 0.0])

    def test_unknown_distribution(self):
        with pytest.raises(ValidationError, match="unknown profile distribution"):
            RuntimeProfile("x", distribution="gamma", params={"k": 1.0})

    def test_write_read_roundtrip(self, tmp_path):
        path = tmp_path / "p.json"
        profile = RuntimeProfile(
            "swept", samples_ms=[101.5, 230.25], overhead_ms=10.0, contention_factor=2.0
        )
        write_runtime_profile(path, profile)
        assert load_runtime_profile(path) == profile


class TestRegularTimestamps:
    def test_12hz_grid_values(self):
        grid = regular_timestamps(0, 500_000, 12.0)
        assert grid == [0, 83_333, 166_667, 250_000, 333_333, 416_667, 500_000]

    def test_anchored_grids_agree(self):
        long = regular_timestamps(0, 2_000_000, 12.0)
        short = regular_timestamps(0, 1_000_000, 12.0)
        assert long[: len(short)] == short

    def test_bad_rate(self):
        with pytest.raises(ValidationError):
            regular_timestamps(0, 10, 0.0)
