"""
Tests for crop geometry, keypoint and annotation loading, and frame extraction
"""

import json
from pathlib import Path
from unittest.mock import AsyncMock, patch

import numpy as np
import pytest

from ingest.annotations import load_annotation
from ingest.cropping import (
    crop_rect,
    decide_crop,
    hand_center,
    interpolate_center,
    segment_rects,
    segment_stillness,
)
from ingest.keypoints import frames_at, load_keypoints, subject_bbox_selection
from ingest.video import FrameExtractor, uniform_indices
from models.config import CropConfig, ExtractionConfig
from models.errors import ExtractionError, ManifestError, PreconditionError
from models.schemas import Box, CropDecision, CropVariant, Hand, Primitive
from tests.conftest import keypoint_frame


def moving_frames(step_px: float, count: int = 4, confidence: float = 1.0):
    """Elbow and wrist translate together by ``step_px`` per frame along x."""
    return [
        keypoint_frame(i, elbow=(400.0 + step_px * i, 300.0), wrist=(450.0 + step_px * i, 350.0),
                       confidence=confidence)
        for i in range(count)
    ]


class TestHandCenter:

    def test_extension(self):
        assert hand_center((100, 100), (150, 100), 0.7) == pytest.approx((185, 100))

    def test_zero_vector(self):
        assert hand_center((40, 60), (40, 60)) == (40, 60)

    def test_doubling(self):
        assert hand_center((0, 0), (10, 10), 1.0) == (20, 20)


class TestCropRect:

    def test_centered(self):
        rect = crop_rect((544, 352))
        assert (rect.x, rect.x_end, rect.y, rect.y_end) == (432, 656, 240, 464)

    def test_corner_clamps(self):
        assert (crop_rect((0, 0)).x, crop_rect((0, 0)).y) == (0, 0)
        far = crop_rect((1088, 704))
        assert (far.x, far.x_end, far.y, far.y_end) == (864, 1088, 480, 704)

    def test_random_centers_stay_inside(self):
        cfg = CropConfig()
        rng = np.random.default_rng(0)
        for x, y in rng.uniform([-300, -300], [1400, 1000], size=(10_000, 2)):
            rect = crop_rect((float(x), float(y)), cfg)
            assert rect.width == rect.height == 224
            assert 0 <= rect.x and rect.x_end <= 1088
            assert 0 <= rect.y and rect.y_end <= 704


class TestDecideCrop:

    def test_low_confidence_abstains(self):
        frames = moving_frames(0.0)
        frames[2] = keypoint_frame(2, confidence=0.85)
        assert decide_crop(frames, Hand.RIGHT).variant is CropVariant.ABSTAIN

    def test_static_is_still_at_mean(self):
        decision = decide_crop(moving_frames(0.0), Hand.RIGHT)
        assert decision.variant is CropVariant.STILL
        assert decision.start_center == pytest.approx((485.0, 385.0))

    def test_quick_movement(self):
        decision = decide_crop(moving_frames(20.0), Hand.RIGHT)
        assert decision.variant is CropVariant.MOVING
        assert decision.start_center == pytest.approx((485.0, 385.0))
        assert decision.end_center == pytest.approx((545.0, 385.0))

    def test_slow_movement_is_still(self):
        assert decide_crop(moving_frames(10.0), Hand.RIGHT).variant is CropVariant.STILL

    def test_other_hand_ignored(self):
        frames = [keypoint_frame(i, confidence=0.1, hand=Hand.LEFT) for i in range(4)]
        assert decide_crop(frames, Hand.RIGHT).variant is CropVariant.STILL

    def test_duplicated_frames_do_not_matter(self):
        frames = moving_frames(20.0)
        assert decide_crop(frames + [frames[-1]], Hand.RIGHT) == decide_crop(frames, Hand.RIGHT)

    def test_needs_frames(self):
        with pytest.raises(PreconditionError):
            decide_crop([], Hand.RIGHT)


class TestMovingCrop:

    def test_interpolation_endpoints(self):
        decision = CropDecision(variant=CropVariant.MOVING, start_center=(300, 300), end_center=(500, 340))
        assert interpolate_center(decision, 0.0) == (300, 300)
        assert interpolate_center(decision, 1.0) == (500, 340)
        assert interpolate_center(decision, 0.5) == (400, 320)

    def test_rects_follow_the_hand(self):
        decision = CropDecision(variant=CropVariant.MOVING, start_center=(300, 300), end_center=(500, 300))
        rects = segment_rects(decision, 3)
        assert [r.x for r in rects] == [188, 288, 388]

    def test_abstain_has_no_rects(self):
        assert segment_rects(CropDecision(variant=CropVariant.ABSTAIN), 4) == [None] * 4
        with pytest.raises(PreconditionError):
            interpolate_center(CropDecision(variant=CropVariant.ABSTAIN), 0.5)


class TestStillness:

    def test_static(self):
        assert segment_stillness(moving_frames(0.0), Hand.RIGHT)

    def test_threshold_is_three_pixels(self):
        assert segment_stillness(moving_frames(3.0), Hand.RIGHT)
        assert not segment_stillness(moving_frames(5.0), Hand.RIGHT)

    def test_unconfident_is_not_still(self):
        assert not segment_stillness(moving_frames(0.0, confidence=0.5), Hand.RIGHT)


class TestSubjectSelection:

    def test_largest(self):
        boxes = [Box(x1=0, y1=0, x2=10, y2=10), Box(x1=0, y1=0, x2=20, y2=20), Box(x1=0, y1=0, x2=5, y2=10)]
        assert subject_bbox_selection(boxes).area == 400

    def test_single(self):
        box = Box(x1=3, y1=4, x2=5, y2=6)
        assert subject_bbox_selection([box]) == box

    def test_tie_goes_left(self):
        right = Box(x1=500, y1=0, x2=510, y2=10)
        left = Box(x1=20, y1=0, x2=30, y2=10)
        assert subject_bbox_selection([right, left]) == left

    def test_empty(self):
        with pytest.raises(PreconditionError):
            subject_bbox_selection([])


def _raw(frame):
    return [[k.x, k.y, k.confidence] for k in frame.keypoints]


class TestLoadKeypoints:

    def test_single_subject_records(self, tmp_path):
        path = tmp_path / "vid01.jsonl"
        path.write_text("\n".join(json.dumps({"frame": i, "keypoints": _raw(keypoint_frame(i))}) for i in range(3)))
        track = load_keypoints(path)
        assert sorted(track) == [0, 1, 2]
        assert track[1].wrist(Hand.RIGHT).x == 450.0

    def test_largest_person_is_subject(self, tmp_path):
        subject = keypoint_frame(0, wrist=(700.0, 350.0))
        bystander = keypoint_frame(0, wrist=(50.0, 50.0))
        record = {"frame": 0, "people": [
            {"bbox": [0, 0, 100, 100], "keypoints": _raw(bystander)},
            {"bbox": [200, 0, 900, 700], "keypoints": _raw(subject)},
        ]}
        path = tmp_path / "multi.jsonl"
        path.write_text(json.dumps(record) + "\n")
        assert load_keypoints(path)[0].wrist(Hand.RIGHT).x == 700.0

    def test_wrong_joint_count(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"frame": 0, "keypoints": [[1, 2, 0.9]] * 5}) + "\n")
        with pytest.raises(ManifestError):
            load_keypoints(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError):
            load_keypoints(tmp_path / "absent.jsonl")

    def test_frames_at_needs_every_index(self):
        track = {i: keypoint_frame(i) for i in (0, 1, 3)}
        assert [f.frame_index for f in frames_at(track, [0, 1])] == [0, 1]
        assert frames_at(track, [1, 2, 3]) is None


class TestLoadAnnotation:

    def test_filters_by_hand(self, tmp_path):
        path = tmp_path / "ann.csv"
        rows = ["frame_index,primitive,hand"]
        rows += [f"{i},{'idle' if i < 2 else 'reach'},right" for i in range(4)]
        rows += [f"{i},idle,left" for i in range(4)]
        path.write_text("\n".join(rows) + "\n")
        ann = load_annotation(path, Hand.RIGHT, native_fps=30)
        assert ann.labels == (Primitive.IDLE, Primitive.IDLE, Primitive.REACH, Primitive.REACH)
        assert ann.duration_s == pytest.approx(4 / 30)

    def test_gap_in_frames(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("frame_index,primitive,hand\n0,idle,right\n2,idle,right\n")
        with pytest.raises(ManifestError):
            load_annotation(path, Hand.RIGHT, native_fps=30)

    def test_unknown_primitive(self, tmp_path):
        path = tmp_path / "ann.csv"
        path.write_text("frame_index,primitive,hand\n0,wave,right\n")
        with pytest.raises(ManifestError):
            load_annotation(path, Hand.RIGHT, native_fps=30)


def test_uniform_indices():
    assert uniform_indices(0, 99, 8) == [0, 14, 28, 42, 57, 71, 85, 99]


class TestFrameExtractor:

    @pytest.fixture
    def video(self, tmp_path):
        path = tmp_path / "vid01.mp4"
        path.write_bytes(b"not really a video")
        return path

    @pytest.fixture
    def extractor(self, tmp_path):
        return FrameExtractor(ExtractionConfig(cache_dir=tmp_path / "cache"))

    @staticmethod
    async def _fake_ffmpeg(args):
        Path(args[-1]).write_bytes(b"jpeg:" + args[args.index("-ss") + 1].encode())
        return 0, b"", ""

    @pytest.mark.asyncio
    async def test_extract_and_cache(self, extractor, video):
        with patch("ingest.video._run", AsyncMock(side_effect=self._fake_ffmpeg)) as run:
            paths = await extractor.extract_frames(video, list(range(0, 16, 2)), native_fps=30)
            assert len(paths) == 8 and all(p.exists() for p in paths)
            assert paths == sorted(paths)
            assert extractor.spawned == 8

            again = await extractor.extract_frames(video, list(range(0, 16, 2)), native_fps=30)
            assert again == paths
            assert extractor.spawned == 8
            assert run.await_count == 8

    @pytest.mark.asyncio
    async def test_frames_read_back_in_order(self, extractor, video):
        with patch("ingest.video._run", AsyncMock(side_effect=self._fake_ffmpeg)):
            images = await extractor.frames(video, [30, 0], native_fps=30)
        assert images == [b"jpeg:1.000000", b"jpeg:0.000000"]

    @pytest.mark.asyncio
    async def test_crop_filter_passed(self, extractor, video):
        rect = crop_rect((544, 352))
        with patch("ingest.video._run", AsyncMock(side_effect=self._fake_ffmpeg)) as run:
            await extractor.extract_frames(video, [5], native_fps=30, rects=[rect])
        args = run.await_args.args[0]
        assert args[args.index("-vf") + 1] == "crop=224:224:432:240"

    @pytest.mark.asyncio
    async def test_tool_failure(self, extractor, video):
        with patch("ingest.video._run", AsyncMock(return_value=(1, b"", "frame beyond end of stream"))):
            with pytest.raises(ExtractionError) as info:
                await extractor.extract_frames(video, [99999], native_fps=30)
        assert "beyond end" in info.value.diagnostics

    @pytest.mark.asyncio
    async def test_missing_video(self, extractor, tmp_path):
        with pytest.raises(ExtractionError):
            await extractor.extract_frames(tmp_path / "absent.mp4", [0], native_fps=30)

    @pytest.mark.asyncio
    async def test_probe_duration(self, extractor, video):
        stdout = json.dumps({"format": {"duration": "12.5"}}).encode()
        with patch("ingest.video._run", AsyncMock(return_value=(0, stdout, ""))):
            assert await extractor.probe_duration(video) == 12.5
