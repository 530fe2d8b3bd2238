"""Run manifests: one row per video, read with pandas."""

import logging
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ManifestError
from .schemas import ActivityClass, Hand, ImpairmentLevel

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("video_id", "video_path", "subject_id", "impairment_level", "hand", "native_fps")
OPTIONAL_COLUMNS = ("activity", "view", "duration_s", "annotation_path", "keypoint_path")


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    video_id: str
    video_path: Path
    subject_id: str
    impairment_level: ImpairmentLevel
    hand: Hand
    native_fps: float = Field(gt=0)
    activity: Optional[ActivityClass] = None
    view: Optional[str] = None
    duration_s: Optional[float] = Field(default=None, ge=0)
    annotation_path: Optional[Path] = None
    keypoint_path: Optional[Path] = None


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: List[ManifestEntry]
    source: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, video_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.video_id == video_id:
                return entry
        raise KeyError(video_id)

    def validate_paths(self, require_video: bool = True) -> None:
        missing: List[str] = []
        for entry in self.entries:
            paths = [entry.annotation_path, entry.keypoint_path]
            if require_video:
                paths.append(entry.video_path)
            missing.extend(f"{entry.video_id}: {p}" for p in paths if p is not None and not p.exists())
        if missing:
            raise ManifestError("unresolvable manifest paths:\n  " + "\n  ".join(missing))

    def activity_labels(self) -> List[ActivityClass]:
        return [e.activity for e in self.entries if e.activity is not None]


def _resolve(base: Path, value: str) -> Optional[Path]:
    if not value:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_manifest(path: Path) -> RunManifest:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}") from e

    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"manifest {path} lacks columns: {', '.join(missing)}")

    base = path.parent
    entries: List[ManifestEntry] = []
    for row_number, row in enumerate(frame.to_dict(orient="records"), start=2):
        try:
            entries.append(
                ManifestEntry(
                    video_id=row["video_id"],
                    video_path=_resolve(base, row["video_path"]),
                    subject_id=row["subject_id"],
                    impairment_level=row["impairment_level"],
                    hand=Hand.parse(row["hand"]),
                    native_fps=float(row["native_fps"]),
                    activity=ActivityClass.parse(row["activity"]) if row.get("activity") else None,
                    view=row.get("view") or None,
                    duration_s=float(row["duration_s"]) if row.get("duration_s") else None,
                    annotation_path=_resolve(base, row.get("annotation_path", "")),
                    keypoint_path=_resolve(base, row.get("keypoint_path", "")),
                )
            )
        except (ValidationError, ValueError) as e:
            raise ManifestError(f"{path}:{row_number}: {e}") from e

    ids = [e.video_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"manifest {path} has duplicate video_id values")
    logger.info("Loaded manifest %s with %d videos", path, len(entries))
    return RunManifest(entries=entries, source=path)
