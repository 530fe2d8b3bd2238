"""
Shared fixtures: a synthetic frame source, scripted backends and keypoint builders.
"""

import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pytest

# Add parent directory to path to import the packages
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from agents.base_agent import VideoJob
from ingest.video import FrameSource
from models.config import AppConfig
from models.schemas import Hand, Keypoint, KeypointFrame, Rect
from vlm.backends import BackendRequest, MockBackend
from vlm.client import Transcript, VLMClient


class SyntheticFrameSource(FrameSource):
    """Frames are ``frame:<video>:<index>:<crop>`` byte strings; every call is recorded."""

    def __init__(self):
        self.calls: List[Tuple[str, Tuple[int, ...], bool]] = []

    async def frames(self, video_path, indices, native_fps, rects: Optional[Sequence[Optional[Rect]]] = None):
        rects = list(rects) if rects is not None else [None] * len(indices)
        self.calls.append((Path(video_path).name, tuple(indices), any(r is not None for r in rects)))
        return [
            f"frame:{Path(video_path).name}:{i}:{r.key() if r is not None else 'full'}".encode()
            for i, r in zip(indices, rects)
        ]


def first_frame_index(request: BackendRequest) -> int:
    return int(request.frames[0].decode().split(":")[2])


async def no_sleep(_delay: float) -> None:
    return None


def make_client(backend, config: Optional[AppConfig] = None) -> VLMClient:
    config = config or AppConfig()
    return VLMClient(backend, config.backend, concurrency=8, sleep=no_sleep)


def keypoint_frame(
    index: int,
    elbow: Tuple[float, float] = (400.0, 300.0),
    wrist: Tuple[float, float] = (450.0, 350.0),
    confidence: float = 1.0,
    hand: Hand = Hand.RIGHT,
) -> KeypointFrame:
    """COCO-17 frame with ``hand``'s elbow and wrist placed, every other joint parked at (10, 10)."""
    points = [Keypoint(x=10.0, y=10.0, confidence=1.0) for _ in range(17)]
    elbow_at, wrist_at = (8, 10) if hand is Hand.RIGHT else (7, 9)
    points[elbow_at] = Keypoint(x=elbow[0], y=elbow[1], confidence=confidence)
    points[wrist_at] = Keypoint(x=wrist[0], y=wrist[1], confidence=confidence)
    return KeypointFrame(frame_index=index, keypoints=tuple(points))


def make_job(
    video_id: str = "vid01",
    duration_s: float = 4.0,
    native_fps: float = 30.0,
    hand: Hand = Hand.RIGHT,
    keypoints=None,
) -> VideoJob:
    return VideoJob(
        video_id=video_id,
        video_path=Path(f"/videos/{video_id}.mp4"),
        hand=hand,
        native_fps=native_fps,
        duration_s=duration_s,
        keypoints=keypoints,
        transcript=Transcript(video_id),
    )


@pytest.fixture
def app_config():
    return AppConfig()


@pytest.fixture
def frame_source():
    return SyntheticFrameSource()


@pytest.fixture
def no_backend():
    """Fails loudly if any prompt reaches it."""
    return MockBackend()
