"""Run directory layout: per-video JSON, CSV tables, transcripts and the run summary."""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import aiofiles
import pandas as pd
from pydantic import BaseModel

from models.config import GridConfig
from models.errors import ManifestError
from models.schemas import PrimitiveSequence, StateTrack
from vlm.client import Transcript

from .metrics import summarize_frame

logger = logging.getLogger(__name__)

SUMMARY_FILE = "run_summary.json"
METRICS_FILE = "metrics.csv"
METRICS_SUMMARY_FILE = "metrics_summary.csv"


class RunWriter:
    """Writes everything one run produces below ``out_dir``."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)

    def path(self, *parts: str) -> Path:
        target = self.out_dir.joinpath(*parts)
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    async def write_json(self, data: Any, *parts: str) -> Path:
        target = self.path(*parts)
        async with aiofiles.open(target, "w") as f:
            await f.write(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return target

    def write_csv(self, frame: pd.DataFrame, *parts: str, index: bool = False) -> Path:
        target = self.path(*parts)
        frame.to_csv(target, index=index)
        logger.info("Wrote %s (%d rows)", target, len(frame))
        return target

    async def write_transcript(self, transcript: Transcript) -> Path:
        target = self.path("transcripts", f"{transcript.name}.jsonl")
        await transcript.flush(target)
        return target

    async def write_prediction(
        self,
        record: Dict[str, Any],
        track: Optional[StateTrack] = None,
        grid: Optional[Dict[str, Any]] = None,
        provenance: Optional[Dict[str, Any]] = None,
    ) -> None:
        video_id = record["video_id"]
        await self.write_json(record, "predictions", f"{video_id}.json")
        if track is not None:
            await self.write_json(
                {"video_id": video_id, "grid": grid, "track": track.model_dump(mode="json")},
                "tracks", f"{video_id}.json",
            )
        if provenance:
            await self.write_json({"video_id": video_id, **provenance}, "provenance", f"{video_id}.json")

    async def write_summary(self, summary: Dict[str, Any]) -> Path:
        summary = {"finished_at": datetime.now().isoformat(), **summary}
        return await self.write_json(summary, SUMMARY_FILE)


class StoredPrediction(BaseModel):
    sequence: PrimitiveSequence
    track: Optional[StateTrack] = None
    grid: Optional[GridConfig] = None


def load_predictions(run_dir: Path) -> Dict[str, StoredPrediction]:
    """Predicted sequences (and tracks, when the run wrote them) keyed by video id."""
    run_dir = Path(run_dir)
    prediction_dir = run_dir / "predictions"
    if not prediction_dir.is_dir():
        raise ManifestError(f"no predictions directory under {run_dir}")
    loaded: Dict[str, StoredPrediction] = {}
    for path in sorted(prediction_dir.glob("*.json")):
        with open(path, "r") as f:
            record = json.load(f)
        try:
            sequence = PrimitiveSequence.of(record["sequence"], source_id=record["video_id"])
        except (KeyError, ValueError) as e:
            raise ManifestError(f"{path}: bad prediction record: {e}") from e
        track = None
        track_path = run_dir / "tracks" / path.name
        if track_path.exists():
            with open(track_path, "r") as f:
                track = StateTrack.model_validate(json.load(f)["track"])
        grid = GridConfig(**record["grid"]) if record.get("grid") else None
        loaded[record["video_id"]] = StoredPrediction(sequence=sequence, track=track, grid=grid)
    logger.info("Loaded %d predictions from %s", len(loaded), run_dir)
    return loaded


def find_runs(paths: Sequence[Path]) -> List[Path]:
    """Directories holding a metrics table, searched one level deep for grid sweeps."""
    runs: List[Path] = []
    for path in paths:
        path = Path(path)
        if (path / METRICS_FILE).exists():
            runs.append(path)
        runs.extend(sorted(p.parent for p in path.glob(f"*/{METRICS_FILE}")))
    return runs


def _run_info(run_dir: Path) -> Dict[str, Any]:
    summary_path = run_dir / SUMMARY_FILE
    if not summary_path.exists():
        return {}
    with open(summary_path, "r") as f:
        return json.load(f)


def corpus_report(paths: Sequence[Path]) -> pd.DataFrame:
    """Mean and standard error per run, overall and per impairment level.

    Runs of a grid sweep are ordered by decreasing segment duration.
    """
    runs = find_runs(paths)
    if not runs:
        raise ManifestError(f"no {METRICS_FILE} found under {', '.join(str(p) for p in paths)}")
    tables = []
    for run_dir in runs:
        frame = pd.read_csv(run_dir / METRICS_FILE, dtype={"video_id": str, "impairment_level": str})
        frame["impairment_level"] = frame["impairment_level"].fillna("")
        info = _run_info(run_dir)
        grid = info.get("grid") or {}
        summary = summarize_frame(frame, group_by=True)
        summary.insert(0, "run", str(run_dir))
        summary.insert(1, "workflow", info.get("workflow", ""))
        summary.insert(2, "grid", f"{grid.get('sampling_rate_hz', '')}:{grid.get('frames_per_segment', '')}"
                       if grid else "")
        summary.insert(3, "segment_duration_s",
                       grid["frames_per_segment"] / grid["sampling_rate_hz"] if grid else float("nan"))
        tables.append(summary)
    report = pd.concat(tables, ignore_index=True)
    return report.sort_values(
        ["segment_duration_s", "run"], ascending=[False, True], kind="stable", na_position="last"
    ).reset_index(drop=True)
