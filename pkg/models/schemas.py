"""Domain types shared by every package. No I/O lives here."""

import math
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Point = Tuple[float, float]

# Native-frame rounding tolerance for float grid arithmetic (0.1 * 8/15 * 60 etc.)
_EPS = 1e-9


class Primitive(str, Enum):
    REACH = "Reach"
    REPOSITION = "Reposition"
    TRANSPORT = "Transport"
    STABILIZE = "Stabilize"
    IDLE = "Idle"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Primitive":
        key = text.strip().lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown primitive: {text!r}")

    @property
    def state(self) -> "SegmentState":
        """Motion/grasp decomposition of the primitive."""
        return _PRIMITIVE_STATES[self]


class Hand(str, Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def label(self) -> str:
        return self.value.upper()

    @property
    def other(self) -> "Hand":
        return Hand.RIGHT if self is Hand.LEFT else Hand.LEFT

    @classmethod
    def parse(cls, text: str) -> "Hand":
        return cls(text.strip().lower())


class ImpairmentLevel(str, Enum):
    CONTROL = "C"
    MILD = "Mi"
    MODERATE = "Mo"
    SEVERE = "S"


class PrimitiveSequence(BaseModel):
    model_config = ConfigDict(frozen=True)

    items: Tuple[Primitive, ...] = ()
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.items)

    @property
    def is_deduplicated(self) -> bool:
        return all(a != b for a, b in zip(self.items, self.items[1:]))

    @classmethod
    def of(cls, labels: Sequence, source_id: str = "") -> "PrimitiveSequence":
        items = tuple(
            label if isinstance(label, Primitive) else Primitive.parse(label)
            for label in labels
        )
        return cls(items=items, source_id=source_id)

    def labels(self) -> List[str]:
        return [p.value for p in self.items]


def dedup(seq: PrimitiveSequence) -> PrimitiveSequence:
    collapsed: List[Primitive] = []
    for item in seq.items:
        if not collapsed or collapsed[-1] != item:
            collapsed.append(item)
    return PrimitiveSequence(items=tuple(collapsed), source_id=seq.source_id)


def count(p: Primitive, seq: PrimitiveSequence) -> int:
    return sum(1 for item in seq.items if item == p)


class SegmentGrid(BaseModel):
    """Timeline of equal segments; ``f`` frames per second, ``n`` frames per segment."""

    model_config = ConfigDict(frozen=True)

    sampling_rate_hz: float = Field(gt=0)
    frames_per_segment: int = Field(ge=1)
    video_duration_s: float = Field(ge=0)
    native_fps: float = Field(gt=0)

    @property
    def segment_duration_s(self) -> float:
        return self.frames_per_segment / self.sampling_rate_hz

    @property
    def segment_count(self) -> int:
        # trailing partial segment is dropped
        return max(0, math.floor(self.video_duration_s / self.segment_duration_s + _EPS))

    @property
    def total_native_frames(self) -> int:
        return math.floor(self.native_fps * self.video_duration_s + _EPS)

    def segment_bounds(self, k: int) -> Tuple[float, float]:
        if not 0 <= k < self.segment_count:
            raise IndexError(f"segment {k} outside [0, {self.segment_count})")
        start = k * self.segment_duration_s
        return start, start + self.segment_duration_s

    def segment_frame_span(self, k: int) -> Tuple[int, int]:
        """First and last native frame index inside segment ``k``."""
        start_s, end_s = self.segment_bounds(k)
        first = math.floor(start_s * self.native_fps + 0.5)
        last = max(first, math.floor(end_s * self.native_fps + 0.5) - 1)
        return first, min(last, self.total_native_frames - 1)

    def sample_indices(self, k: int) -> List[int]:
        """``n`` evenly spaced native frames including both segment endpoints."""
        first, last = self.segment_frame_span(k)
        positions = np.linspace(first, last, self.frames_per_segment)
        return [int(i) for i in np.floor(positions + 0.5)]

    def midpoint_frame(self, k: int) -> int:
        start_s, end_s = self.segment_bounds(k)
        return math.floor((start_s + end_s) / 2 * self.native_fps + _EPS)

    def with_layout(self, sampling_rate_hz: float, frames_per_segment: int) -> "SegmentGrid":
        return self.model_copy(
            update={"sampling_rate_hz": sampling_rate_hz, "frames_per_segment": frames_per_segment}
        )


class SegmentState(BaseModel):
    """Motion/grasp pair of one segment (idle/holding tracks store ``not idle`` as motion)."""

    model_config = ConfigDict(frozen=True)

    motion: bool
    grasp: bool

    @property
    def index(self) -> int:
        """Joint-state index used by transition matrices."""
        return int(self.motion) * 2 + int(self.grasp)

    @classmethod
    def from_index(cls, index: int) -> "SegmentState":
        return cls(motion=bool(index // 2), grasp=bool(index % 2))


JOINT_STATES: Tuple[SegmentState, ...] = tuple(SegmentState.from_index(i) for i in range(4))

_PRIMITIVE_STATES: Dict[Primitive, SegmentState] = {
    Primitive.REACH: SegmentState(motion=True, grasp=False),
    Primitive.REPOSITION: SegmentState(motion=True, grasp=False),
    Primitive.TRANSPORT: SegmentState(motion=True, grasp=True),
    Primitive.STABILIZE: SegmentState(motion=False, grasp=True),
    Primitive.IDLE: SegmentState(motion=False, grasp=False),
}

MOVING_PRIMITIVES = frozenset({Primitive.REACH, Primitive.REPOSITION, Primitive.TRANSPORT})
GRASP_PRIMITIVES = frozenset({Primitive.TRANSPORT, Primitive.STABILIZE})


class TrackMode(str, Enum):
    DECOMPOSED = "decomposed"
    PRIMRS = "primrs"


class StateTrack(BaseModel):
    model_config = ConfigDict(frozen=True)

    hand: Hand
    mode: TrackMode = TrackMode.DECOMPOSED
    segments: Tuple[SegmentState, ...] = ()

    def __len__(self) -> int:
        return len(self.segments)

    def channel(self, name: str) -> List[bool]:
        if name not in ("motion", "grasp"):
            raise ValueError(f"unknown channel: {name}")
        return [getattr(s, name) for s in self.segments]

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[bool, bool]], hand: Hand = Hand.RIGHT) -> "StateTrack":
        return cls(hand=hand, segments=tuple(SegmentState(motion=m, grasp=g) for m, g in pairs))


class FrameAnnotation(BaseModel):
    """Per-frame ground-truth primitive labels for one hand."""

    model_config = ConfigDict(frozen=True)

    labels: Tuple[Primitive, ...]
    native_fps: float = Field(gt=0)
    hand: Hand = Hand.RIGHT

    @property
    def frame_count(self) -> int:
        return len(self.labels)

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.native_fps

    def label_at(self, frame_index: int) -> Primitive:
        return self.labels[frame_index]

    @classmethod
    def from_spans(
        cls, spans: Sequence[Tuple[Primitive, float]], native_fps: float, hand: Hand = Hand.RIGHT
    ) -> "FrameAnnotation":
        """Build from ``(primitive, duration_s)`` spans laid end to end."""
        labels: List[Primitive] = []
        elapsed = 0.0
        for primitive, duration in spans:
            elapsed += duration
            target = math.floor(elapsed * native_fps + 0.5)
            labels.extend([primitive] * (target - len(labels)))
        return cls(labels=tuple(labels), native_fps=native_fps, hand=hand)


class Keypoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    confidence: float = Field(ge=0.0, le=1.0)


# COCO-17 indices used for hand localisation
COCO_ELBOW = {Hand.LEFT: 7, Hand.RIGHT: 8}
COCO_WRIST = {Hand.LEFT: 9, Hand.RIGHT: 10}


class KeypointFrame(BaseModel):
    model_config = ConfigDict(frozen=True)

    frame_index: int = Field(ge=0)
    keypoints: Tuple[Keypoint, ...]

    @field_validator("keypoints")
    @classmethod
    def _coco_17(cls, value):
        if len(value) != 17:
            raise ValueError(f"expected 17 COCO keypoints, got {len(value)}")
        return value

    def elbow(self, hand: Hand) -> Keypoint:
        return self.keypoints[COCO_ELBOW[hand]]

    def wrist(self, hand: Hand) -> Keypoint:
        return self.keypoints[COCO_WRIST[hand]]

    def in_bounds(self, width: int, height: int) -> bool:
        return all(0 <= k.x < width and 0 <= k.y < height for k in self.keypoints)


class Box(BaseModel):
    model_config = ConfigDict(frozen=True)

    x1: float
    y1: float
    x2: float
    y2: float

    @model_validator(mode="after")
    def _ordered(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError("box corners must be ordered (x1<=x2, y1<=y2)")
        return self

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


class Rect(BaseModel):
    """Integer crop rectangle ``[x, x+width) x [y, y+height)``."""

    model_config = ConfigDict(frozen=True)

    x: int
    y: int
    width: int
    height: int

    @property
    def x_end(self) -> int:
        return self.x + self.width

    @property
    def y_end(self) -> int:
        return self.y + self.height

    def key(self) -> str:
        return f"{self.x}_{self.y}_{self.width}_{self.height}"


class CropVariant(str, Enum):
    ABSTAIN = "abstain"
    STILL = "still"
    MOVING = "moving"


class CropDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: CropVariant
    start_center: Optional[Point] = None
    end_center: Optional[Point] = None

    @property
    def cropped(self) -> bool:
        return self.variant is not CropVariant.ABSTAIN


class ActivityClass(str, Enum):
    BRUSHING = "Brushing"
    COMBING = "Combing"
    DEODORANT = "Deodorant"
    DRINKING = "Drinking"
    FACE_WASH = "FaceWash"
    FEEDING = "Feeding"
    GLASSES = "Glasses"
    RTT = "RTT"
    SHELF = "Shelf"

    def __str__(self) -> str:
        return self.value

    @property
    def prompt_label(self) -> str:
        """Name used inside activity prompts and ``FINAL_ANSWER`` lines."""
        return _ACTIVITY_PROMPT_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "ActivityClass":
        key = "".join(ch for ch in text.lower() if ch.isalnum())
        for member in cls:
            names = (member.value, member.prompt_label)
            if any("".join(ch for ch in n.lower() if ch.isalnum()) == key for n in names):
                return member
        raise ValueError(f"unknown activity: {text!r}")


_ACTIVITY_PROMPT_LABELS = {
    ActivityClass.BRUSHING: "Brushing",
    ActivityClass.COMBING: "Combing",
    ActivityClass.DEODORANT: "Deodorant",
    ActivityClass.DRINKING: "Drinking",
    ActivityClass.FACE_WASH: "Face wash",
    ActivityClass.FEEDING: "Feeding",
    ActivityClass.GLASSES: "Glasses",
    ActivityClass.RTT: "RTT exercise",
    ActivityClass.SHELF: "Shelf exercise",
}
