"""Pose-informed crop geometry around one hand."""

import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from models.config import CropConfig
from models.errors import PreconditionError
from models.schemas import CropDecision, CropVariant, Hand, KeypointFrame, Point, Rect

logger = logging.getLogger(__name__)


def hand_center(elbow: Point, wrist: Point, factor: float = 0.7) -> Point:
    """Extend the elbow-to-wrist vector past the wrist by ``factor``."""
    e = np.asarray(elbow, dtype=float)
    w = np.asarray(wrist, dtype=float)
    c = w + factor * (w - e)
    return float(c[0]), float(c[1])


def _distinct(frames: Sequence[KeypointFrame]) -> List[KeypointFrame]:
    # high n at low native fps samples the same frame twice
    seen = set()
    unique = []
    for frame in frames:
        if frame.frame_index not in seen:
            seen.add(frame.frame_index)
            unique.append(frame)
    return unique


def _centers(frames: Sequence[KeypointFrame], hand: Hand, factor: float) -> np.ndarray:
    return np.array(
        [hand_center((f.elbow(hand).x, f.elbow(hand).y), (f.wrist(hand).x, f.wrist(hand).y), factor) for f in frames]
    )


def _mean_step(centers: np.ndarray) -> np.ndarray:
    if len(centers) < 2:
        return np.zeros(2)
    return np.abs(np.diff(centers, axis=0)).mean(axis=0)


def _confident(frames: Sequence[KeypointFrame], hand: Hand, cfg: CropConfig) -> bool:
    lowest = min(min(f.elbow(hand).confidence, f.wrist(hand).confidence) for f in frames)
    return lowest >= cfg.min_confidence


def decide_crop(frames: Sequence[KeypointFrame], hand: Hand, cfg: CropConfig = CropConfig()) -> CropDecision:
    if not frames:
        raise PreconditionError("decide_crop needs at least one keypoint frame")
    frames = _distinct(frames)
    if not _confident(frames, hand, cfg):
        return CropDecision(variant=CropVariant.ABSTAIN)

    centers = _centers(frames, hand, cfg.extension_factor)
    step = _mean_step(centers)
    if step[0] > cfg.quick_move_px or step[1] > cfg.quick_move_px:
        return CropDecision(
            variant=CropVariant.MOVING,
            start_center=tuple(centers[0].tolist()),
            end_center=tuple(centers[-1].tolist()),
        )
    mean = centers.mean(axis=0)
    return CropDecision(variant=CropVariant.STILL, start_center=tuple(mean.tolist()), end_center=tuple(mean.tolist()))


def segment_stillness(frames: Sequence[KeypointFrame], hand: Hand, cfg: CropConfig = CropConfig()) -> bool:
    """Pose-confident and moving at most ``still_px`` per frame on both axes."""
    if not frames:
        return False
    frames = _distinct(frames)
    if not _confident(frames, hand, cfg):
        return False
    step = _mean_step(_centers(frames, hand, cfg.extension_factor))
    return bool(step[0] <= cfg.still_px and step[1] <= cfg.still_px)


def crop_rect(center: Point, cfg: CropConfig = CropConfig()) -> Rect:
    """Fixed-size square around ``center``, shifted to stay inside the image."""
    size = cfg.crop_size_px
    x = int(np.clip(math.floor(center[0] + 0.5) - size // 2, 0, cfg.image_width - size))
    y = int(np.clip(math.floor(center[1] + 0.5) - size // 2, 0, cfg.image_height - size))
    return Rect(x=x, y=y, width=size, height=size)


def interpolate_center(decision: CropDecision, t: float) -> Point:
    if not decision.cropped:
        raise PreconditionError("an abstained crop has no center")
    start = np.asarray(decision.start_center, dtype=float)
    end = np.asarray(decision.end_center, dtype=float)
    c = start + float(np.clip(t, 0.0, 1.0)) * (end - start)
    return float(c[0]), float(c[1])


def segment_rects(decision: CropDecision, n: int, cfg: CropConfig = CropConfig()) -> List[Optional[Rect]]:
    """One rectangle per sampled frame; ``None`` everywhere when cropping abstained."""
    if not decision.cropped:
        return [None] * n
    if decision.variant is CropVariant.STILL or n == 1:
        return [crop_rect(decision.start_center, cfg)] * n
    return [crop_rect(interpolate_center(decision, i / (n - 1)), cfg) for i in range(n)]
