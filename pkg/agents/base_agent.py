import logging
import uuid
from abc import ABC, abstractmethod
from datetime import datetime
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ingest.cropping import decide_crop, segment_rects
from ingest.keypoints import KeypointTrack, frames_at
from ingest.video import FrameSource
from models.config import AppConfig, GridConfig
from models.errors import UnparseableReplyError
from models.schemas import (
    CropDecision,
    CropVariant,
    Hand,
    KeypointFrame,
    Primitive,
    PrimitiveSequence,
    SegmentGrid,
    StateTrack,
)
from vlm.client import Transcript, VLMClient
from vlm.parsers import parse_yes_no
from vlm.prompts import PromptSpec, load_catalog

logger = logging.getLogger(__name__)


class VideoJob(BaseModel):
    """Everything an agent needs to process one video for one hand."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    video_id: str
    video_path: Path
    hand: Hand
    native_fps: float = Field(gt=0)
    duration_s: float = Field(ge=0)
    keypoints: Optional[KeypointTrack] = None
    transcript: Transcript = Field(default_factory=Transcript)

    def grid(self, layout: GridConfig) -> SegmentGrid:
        return SegmentGrid(
            sampling_rate_hz=layout.sampling_rate_hz,
            frames_per_segment=layout.frames_per_segment,
            video_duration_s=self.duration_s,
            native_fps=self.native_fps,
        )


class SegmentView(BaseModel):
    """Frames of one segment as sent to the model, plus how they were cropped."""

    model_config = ConfigDict(frozen=True)

    indices: Tuple[int, ...]
    frames: Tuple[bytes, ...]
    decision: CropDecision
    keypoints: Optional[Tuple[KeypointFrame, ...]] = None

    @property
    def cropped(self) -> bool:
        return self.decision.cropped


class PipelineResult(BaseModel):
    video_id: str
    mode: str
    sequence: PrimitiveSequence
    segment_labels: List[Primitive] = Field(default_factory=list)
    track: Optional[StateTrack] = None
    unparseable: int = 0
    provenance: Dict[str, Any] = Field(default_factory=dict)

    def prediction_record(self) -> Dict[str, Any]:
        return {
            "video_id": self.video_id,
            "mode": self.mode,
            "sequence": self.sequence.labels(),
            "segment_labels": [p.value for p in self.segment_labels],
            "unparseable": self.unparseable,
        }


_ABSTAIN = CropDecision(variant=CropVariant.ABSTAIN)


class BaseAgent(ABC):
    def __init__(self, config: AppConfig, agent_type: str, client: VLMClient, frames: FrameSource):
        self.agent_id = f"{agent_type}_{uuid.uuid4().hex[:8]}"
        self.agent_type = agent_type
        self.config = config
        self.client = client
        self.frames = frames
        self.status = "initialized"
        self.current_task = None
        self.performance_metrics = {
            "tasks_completed": 0,
            "success_rate": 0.0,
            "avg_response_time": 0.0,
            "unparseable_replies": 0,
        }
        self.last_activity = datetime.now()

    async def segment_view(
        self, job: VideoJob, grid: SegmentGrid, k: int, cropping: bool, hand: Optional[Hand] = None
    ) -> SegmentView:
        """Sampled frames of segment ``k``, cropped around ``hand`` when pose allows it."""
        hand = hand or job.hand
        indices = grid.sample_indices(k)
        keypoints = frames_at(job.keypoints, indices) if job.keypoints is not None else None
        decision = _ABSTAIN
        if cropping:
            if keypoints is None:
                logger.debug("%s segment %d: no keypoints, crop abstains", job.video_id, k)
            else:
                decision = decide_crop(keypoints, hand, self.config.crop)
        rects = segment_rects(decision, len(indices), self.config.crop)
        frames = await self.frames.frames(
            job.video_path, indices, job.native_fps, rects if decision.cropped else None
        )
        return SegmentView(
            indices=tuple(indices),
            frames=tuple(frames),
            decision=decision,
            keypoints=tuple(keypoints) if keypoints is not None else None,
        )

    def render(self, catalog: str, template_id: str, **values: Any) -> PromptSpec:
        return load_catalog(catalog).render(template_id, **values)

    async def ask(
        self, prompt: PromptSpec, frames: Sequence[bytes], transcript: Optional[Transcript], key: str
    ) -> str:
        return await self.client.ask(prompt.text, frames, transcript, key=key, prompt_id=prompt.template_id)

    async def ask_yes_no(
        self,
        prompt: PromptSpec,
        frames: Sequence[bytes],
        transcript: Optional[Transcript],
        key: str,
        default: bool = False,
    ) -> bool:
        """Binary question; an unparseable reply falls back to ``default`` and is counted."""
        reply = await self.ask(prompt, frames, transcript, key)
        try:
            return parse_yes_no(reply)
        except UnparseableReplyError:
            self.note_unparseable(transcript, key, prompt.template_id, reply, "yes" if default else "no")
            return default

    def note_unparseable(
        self, transcript: Optional[Transcript], key: str, prompt_id: str, reply: str, applied: str
    ) -> None:
        self.performance_metrics["unparseable_replies"] += 1
        if transcript is not None:
            transcript.unparseable += 1
        name = transcript.name if transcript is not None else ""
        logger.warning("Unparseable reply to %s at %s/%s, using %r: %.80r", prompt_id, name, key, applied, reply)

    def update_status(self, status: str, current_task: str = None):
        self.status = status
        self.current_task = current_task
        self.last_activity = datetime.now()

    def update_metrics(self, task_completed: bool, response_time: float):
        self.performance_metrics["tasks_completed"] += 1
        if task_completed:
            current_success = self.performance_metrics["success_rate"]
            total_tasks = self.performance_metrics["tasks_completed"]
            self.performance_metrics["success_rate"] = (
                (current_success * (total_tasks - 1) + 1.0) / total_tasks
            )

        current_avg = self.performance_metrics["avg_response_time"]
        total_tasks = self.performance_metrics["tasks_completed"]
        self.performance_metrics["avg_response_time"] = (
            (current_avg * (total_tasks - 1) + response_time) / total_tasks
        )

    def get_status(self) -> Dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "agent_type": self.agent_type,
            "status": self.status,
            "current_task": self.current_task,
            "performance_metrics": self.performance_metrics,
            "last_activity": self.last_activity.isoformat()
        }

    async def guarded(self, description: str, work: Callable[[], Awaitable[Dict[str, Any]]]) -> Dict[str, Any]:
        """Run one task; failures come back as ``{"success": False, ...}`` instead of raising."""
        self.update_status("processing", description)
        start_time = datetime.now()
        try:
            result = await work()
            response_time = (datetime.now() - start_time).total_seconds()
            self.update_metrics(True, response_time)
            self.update_status("completed", None)
            return {"success": True, "agent_id": self.agent_id, "processing_time": response_time, **result}
        except Exception as e:
            response_time = (datetime.now() - start_time).total_seconds()
            self.update_metrics(False, response_time)
            self.update_status("error", f"Error: {str(e)}")
            logger.error("%s failed: %s", description, e)
            return {
                "success": False,
                "error": str(e),
                "error_type": type(e).__name__,
                "category": getattr(e, "category", "error"),
                "agent_id": self.agent_id,
                "processing_time": response_time,
            }

    @abstractmethod
    async def execute_task(self, task_data: Dict[str, Any]) -> Dict[str, Any]:
        pass
