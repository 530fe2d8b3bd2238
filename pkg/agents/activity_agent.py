"""Nine-class activity identification from uniformly sampled frames."""

import logging
import math
from collections import Counter
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from ingest.video import FrameSource, uniform_indices
from models.config import AppConfig
from models.errors import PreconditionError, UnparseableReplyError
from models.schemas import ActivityClass
from vlm.client import VLMClient
from vlm.parsers import parse_final_answer

from .base_agent import BaseAgent, VideoJob

logger = logging.getLogger(__name__)

ACTIVITY_LABELS = [c.value for c in ActivityClass]


class ActivityResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    video_id: str
    truth: Optional[ActivityClass] = None
    prediction: Optional[ActivityClass] = None
    reply: str = ""

    @property
    def parsed(self) -> bool:
        return self.prediction is not None

    @property
    def correct(self) -> bool:
        return self.parsed and self.prediction == self.truth

    def row(self) -> Dict[str, Any]:
        return {
            "video_id": self.video_id,
            "truth": self.truth.value if self.truth else "",
            "prediction": self.prediction.value if self.prediction else "",
            "parsed": self.parsed,
            "correct": self.correct,
        }


class ActivitySummary(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    accuracy: float
    total: int
    unparsed: int
    majority_baseline: Optional[float] = None
    matrix: pd.DataFrame

    def normalized(self) -> pd.DataFrame:
        """Row-normalized view; rows without samples stay zero."""
        totals = self.matrix.sum(axis=1).replace(0, np.nan)
        return self.matrix.div(totals, axis=0).fillna(0.0)


def majority_baseline(labels: Sequence[ActivityClass]) -> float:
    if not labels:
        raise PreconditionError("no activity labels for a majority baseline")
    return Counter(labels).most_common(1)[0][1] / len(labels)


def accuracy_and_matrix(
    results: Sequence[ActivityResult], manifest_labels: Optional[Sequence[ActivityClass]] = None
) -> ActivitySummary:
    """Unparsed replies count against accuracy and stay out of the matrix."""
    if not results:
        raise PreconditionError("accuracy needs at least one result")
    scored = [r for r in results if r.truth is not None]
    if not scored:
        raise PreconditionError("no result carries a ground-truth activity")

    matrix = pd.DataFrame(0, index=ACTIVITY_LABELS, columns=ACTIVITY_LABELS, dtype=int)
    matrix.index.name = "truth"
    matrix.columns.name = "prediction"
    for r in scored:
        if r.parsed:
            matrix.loc[r.truth.value, r.prediction.value] += 1

    labels = list(manifest_labels) if manifest_labels else [r.truth for r in scored]
    return ActivitySummary(
        accuracy=sum(r.correct for r in scored) / len(scored),
        total=len(scored),
        unparsed=sum(not r.parsed for r in scored),
        majority_baseline=majority_baseline(labels),
        matrix=matrix,
    )


class ActivityAgent(BaseAgent):
    def __init__(self, config: AppConfig, client: VLMClient, frames: FrameSource):
        super().__init__(config, "activity", client, frames)
        self.classes = [c.prompt_label for c in ActivityClass]

    async def classify_activity(
        self, job: VideoJob, truth: Optional[ActivityClass] = None, prompt_variant: Optional[str] = None
    ) -> ActivityResult:
        n = self.config.activity.frames
        total_frames = math.floor(job.duration_s * job.native_fps + 1e-9)
        if total_frames < n:
            raise PreconditionError(f"{job.video_id} has {total_frames} frames, activity needs {n}")
        indices = uniform_indices(0, total_frames - 1, n)
        frames = await self.frames.frames(job.video_path, indices, job.native_fps)

        prompt = self.render("activity", prompt_variant or self.config.activity.prompt_variant)
        reply = await self.ask(prompt, frames, job.transcript, "activity")
        try:
            prediction = ActivityClass.parse(parse_final_answer(reply, self.classes))
        except UnparseableReplyError:
            self.note_unparseable(job.transcript, "activity", prompt.template_id, reply, "unparsed")
            prediction = None
        return ActivityResult(video_id=job.video_id, truth=truth, prediction=prediction, reply=reply)

    async def execute_task(self, task_data: Dict[str, Any]) -> Dict[str, Any]:
        job: VideoJob = task_data["job"]

        async def work() -> Dict[str, Any]:
            result = await self.classify_activity(job, task_data.get("truth"), task_data.get("prompt_variant"))
            return {"result": result}

        return await self.guarded(f"activity {job.video_id}", work)


def results_table(results: List[ActivityResult]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in results], columns=["video_id", "truth", "prediction", "parsed", "correct"])
