"""Keypoint sidecars (JSONL, one record per frame, COCO-17 order)."""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from models.errors import ManifestError, PreconditionError
from models.schemas import Box, Keypoint, KeypointFrame

logger = logging.getLogger(__name__)

KeypointTrack = Dict[int, KeypointFrame]


def subject_bbox_selection(detections: Sequence[Box]) -> Box:
    """Largest box is the subject; equal areas go to the leftmost."""
    if not detections:
        raise PreconditionError("no person detections to choose from")
    return min(detections, key=lambda b: (-b.area, b.x1))


def _frame(index: int, raw: Sequence[Sequence[float]]) -> KeypointFrame:
    return KeypointFrame(
        frame_index=index,
        keypoints=tuple(Keypoint(x=float(x), y=float(y), confidence=float(c)) for x, y, c in raw),
    )


def load_keypoints(path: Path) -> KeypointTrack:
    """Single-subject ``{frame, keypoints}`` or multi-person ``{frame, people: [{bbox, keypoints}]}`` records."""
    path = Path(path)
    track: KeypointTrack = {}
    try:
        with open(path, "r") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    index = int(record["frame"])
                    if "people" in record:
                        people = record["people"]
                        if not people:
                            continue
                        boxes = [Box(**dict(zip(("x1", "y1", "x2", "y2"), p["bbox"]))) for p in people]
                        subject = subject_bbox_selection(boxes)
                        raw = people[boxes.index(subject)]["keypoints"]
                    else:
                        raw = record["keypoints"]
                    track[index] = _frame(index, raw)
                except (KeyError, TypeError, ValueError, ValidationError) as e:
                    raise ManifestError(f"{path}:{line_number}: bad keypoint record: {e}") from e
    except FileNotFoundError as e:
        raise ManifestError(f"keypoint file not found: {path}") from e
    logger.debug("Loaded %d keypoint frames from %s", len(track), path)
    return track


def frames_at(track: KeypointTrack, indices: Sequence[int]) -> Optional[List[KeypointFrame]]:
    """Keypoints for every index, or ``None`` when any frame is missing."""
    frames = [track.get(i) for i in indices]
    return None if any(f is None for f in frames) else frames
