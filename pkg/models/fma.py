"""Fugl-Meyer question scripts, clips and scorecards."""

import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ManifestError
from .schemas import ImpairmentLevel

logger = logging.getLogger(__name__)

SCRIPT_COLUMNS = (
    "qid", "fm_video", "question_type", "sampling",
    "binary_no_score", "binary_yes_score", "question",
)

TREMOR_ITEM = 31
DYSMETRIA_ITEM = 32
SPEED_ITEM = 33
COORDINATION_ITEMS = (TREMOR_ITEM, DYSMETRIA_ITEM, SPEED_ITEM)

_SUBSECTION_RANGES = (
    ("Flexor Synergy", range(3, 9)),
    ("Extensor Synergy", range(9, 12)),
    ("Movement Combining Synergy", range(12, 15)),
    ("Movement Out of Synergy", range(15, 18)),
    ("Normal Reflex Activity", range(18, 19)),
    ("Wrist", range(19, 24)),
    ("Hand", range(24, 31)),
    ("Coordination/Speed", range(31, 34)),
)


def subsection_of(item: int) -> str:
    for name, items in _SUBSECTION_RANGES:
        if item in items:
            return name
    return "Reflexes"


class FmVideoKey(BaseModel):
    """Parsed ``{fm_item}_{side}_{view}`` identifier."""

    model_config = ConfigDict(frozen=True)

    item: int = Field(ge=3, le=33)
    side: Literal["A", "H"]
    view: Literal["F", "S"]

    @classmethod
    def parse(cls, text: str) -> "FmVideoKey":
        parts = text.strip().split("_")
        if len(parts) != 3:
            raise ValueError(f"fm_video must be item_side_view, got {text!r}")
        return cls(item=int(parts[0]), side=parts[1].upper(), view=parts[2].upper())

    def __str__(self) -> str:
        return f"{self.item}_{self.side}_{self.view}"


class FmaQuestion(BaseModel):
    model_config = ConfigDict(frozen=True)

    qid: int
    fm_video: FmVideoKey
    question_type: Literal["rate", "binary"]
    sampling: Literal["uniform", "dense"] = "uniform"
    binary_no_score: Optional[int] = Field(default=None, ge=0, le=2)
    binary_yes_score: Optional[int] = Field(default=None, ge=0, le=2)
    question: str = Field(min_length=1)

    @field_validator("fm_video", mode="before")
    @classmethod
    def _parse_key(cls, value):
        return FmVideoKey.parse(value) if isinstance(value, str) else value

    @property
    def terminal(self) -> bool:
        return self.question_type == "rate" or (
            self.binary_no_score is not None and self.binary_yes_score is not None
        )


class FmaItemScript(BaseModel):
    model_config = ConfigDict(frozen=True)

    fm_item: int = Field(ge=3, le=33)
    questions: Tuple[FmaQuestion, ...] = Field(min_length=1)

    @property
    def dense(self) -> bool:
        return any(q.sampling == "dense" for q in self.questions)

    @model_validator(mode="after")
    def _chain_terminates(self):
        if any(q.fm_video.item != self.fm_item for q in self.questions):
            raise ValueError(f"item {self.fm_item}: question for another item in chain")
        if not self.questions[-1].terminal:
            raise ValueError(
                f"item {self.fm_item}: last question must be a rate question or set both branch scores"
            )
        return self

    @property
    def subsection(self) -> str:
        return subsection_of(self.fm_item)


def _optional_score(value) -> Optional[int]:
    if value is None or (isinstance(value, float) and math.isnan(value)) or value == "":
        return None
    return int(float(value))


def load_fma_scripts(path: Path) -> Dict[int, FmaItemScript]:
    """Read a QA or CoT question CSV into one script per FMA item."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"question": str, "fm_video": str})
    except FileNotFoundError as e:
        raise ManifestError(f"question script not found: {path}") from e
    missing = [c for c in SCRIPT_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"question script {path} lacks columns: {', '.join(missing)}")
    frame["sampling"] = frame["sampling"].fillna("uniform")

    by_item: Dict[int, List[FmaQuestion]] = {}
    for record in frame.sort_values("qid", kind="stable").to_dict(orient="records"):
        try:
            question = FmaQuestion(
                qid=int(record["qid"]),
                fm_video=record["fm_video"],
                question_type=str(record["question_type"]).strip().lower(),
                sampling=str(record["sampling"]).strip().lower() or "uniform",
                binary_no_score=_optional_score(record["binary_no_score"]),
                binary_yes_score=_optional_score(record["binary_yes_score"]),
                question=str(record["question"]).strip(),
            )
        except (ValidationError, ValueError) as e:
            raise ManifestError(f"{path}: qid {record.get('qid')}: {e}") from e
        by_item.setdefault(question.fm_video.item, []).append(question)

    try:
        return {
            item: FmaItemScript(fm_item=item, questions=tuple(questions))
            for item, questions in sorted(by_item.items())
        }
    except ValidationError as e:
        raise ManifestError(f"{path}: {e}") from e


class FmaClip(BaseModel):
    """Middle repetition of one FMA item recorded from one side and view."""

    model_config = ConfigDict(frozen=True)

    subject_id: str
    impairment_level: Optional[ImpairmentLevel] = None
    fm_video: FmVideoKey
    video_path: Path
    start_s: float = Field(ge=0)
    end_s: float
    native_fps: float = Field(gt=0)
    gt_score: Optional[int] = Field(default=None, ge=0, le=2)

    @field_validator("fm_video", mode="before")
    @classmethod
    def _parse_key(cls, value):
        return FmVideoKey.parse(value) if isinstance(value, str) else value

    @model_validator(mode="after")
    def _positive_duration(self):
        if self.end_s <= self.start_s:
            raise ValueError(f"clip {self.fm_video} has non-positive duration")
        return self

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def clip_id(self) -> str:
        return f"{self.subject_id}_{self.fm_video}"


def load_fma_clips(path: Path) -> List[FmaClip]:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise ManifestError(f"FMA clip manifest not found: {path}") from e
    clips: List[FmaClip] = []
    for row_number, row in enumerate(frame.to_dict(orient="records"), start=2):
        video = Path(row["video_path"])
        try:
            clips.append(
                FmaClip(
                    subject_id=row["subject_id"],
                    impairment_level=row.get("impairment_level") or None,
                    fm_video=row["fm_video"],
                    video_path=video if video.is_absolute() else path.parent / video,
                    start_s=float(row["start_s"]),
                    end_s=float(row["end_s"]),
                    native_fps=float(row["native_fps"]),
                    gt_score=int(row["gt_score"]) if row.get("gt_score") else None,
                )
            )
        except (KeyError, ValidationError, ValueError) as e:
            raise ManifestError(f"{path}:{row_number}: {e}") from e
    return clips


class ItemScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    item: int = Field(ge=1, le=33)
    score: Optional[int] = Field(default=None, ge=0, le=2)
    flag: Optional[str] = None
    gt_score: Optional[int] = Field(default=None, ge=0, le=2)

    @property
    def scored(self) -> bool:
        return self.score is not None


class FmaScorecard(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject_id: str = ""
    items: Tuple[ItemScore, ...]
    total: int = Field(ge=0)
    max_achievable: int = Field(ge=0)
    unscored: Tuple[int, ...] = ()

    @model_validator(mode="after")
    def _bounded(self):
        if self.total > self.max_achievable:
            raise ValueError("total exceeds the maximum achievable score")
        return self
