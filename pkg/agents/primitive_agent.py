"""Segment-wise primitive inference: single, decomposed and contextual prompting."""

import asyncio
import logging
from typing import Any, Dict, List, Sequence, Tuple

from pydantic import BaseModel

from evaluation.metrics import wilson_interval
from evaluation.reconstruct import states_to_primitives
from ingest.video import FrameSource
from models.config import AppConfig, GridConfig
from models.errors import PreconditionError, UnparseableReplyError
from models.schemas import (
    MOVING_PRIMITIVES,
    FrameAnnotation,
    Hand,
    Primitive,
    PrimitiveSequence,
    SegmentGrid,
    SegmentState,
    StateTrack,
    TrackMode,
    dedup,
)
from vlm.client import VLMClient
from vlm.parsers import parse_primitive
from vlm.prompts import hand_reference

from .base_agent import BaseAgent, PipelineResult, SegmentView, VideoJob

logger = logging.getLogger(__name__)

PROMPTING_MODES = ("single", "decomposed", "contextual")


def _key(k: int, what: str) -> str:
    return f"seg{k:04d}/{what}"


class ProbeRate(BaseModel):
    """How often one crop variant calls the active and the inactive hand "moving"."""

    variant: str
    segments: int
    active_detected: int
    active_rate: float
    active_ci_low: float
    active_ci_high: float
    inactive_detected: int
    inactive_false_rate: float
    inactive_ci_low: float
    inactive_ci_high: float


def one_hand_active_segments(ann: FrameAnnotation, grid: SegmentGrid) -> List[int]:
    """Segments in which every native frame carries a moving primitive for the annotated hand."""
    if ann.frame_count < grid.total_native_frames:
        raise PreconditionError(
            f"annotation has {ann.frame_count} frames, video needs {grid.total_native_frames}"
        )
    selected = []
    for k in range(grid.segment_count):
        first, last = grid.segment_frame_span(k)
        if all(ann.label_at(i) in MOVING_PRIMITIVES for i in range(first, last + 1)):
            selected.append(k)
    return selected


class PrimitiveAgent(BaseAgent):
    def __init__(self, config: AppConfig, client: VLMClient, frames: FrameSource):
        super().__init__(config, "primitives", client, frames)

    def _reconstruct(self, job: VideoJob, grid: SegmentGrid, mode: str, states: Sequence[SegmentState],
                     unparseable_before: int) -> PipelineResult:
        track = StateTrack(hand=job.hand, mode=TrackMode.DECOMPOSED, segments=tuple(states))
        per_segment = states_to_primitives(track, self.config.reconstruction.for_grid(grid))
        return PipelineResult(
            video_id=job.video_id,
            mode=mode,
            sequence=dedup(per_segment.model_copy(update={"source_id": job.video_id})),
            segment_labels=list(per_segment.items),
            track=track,
            unparseable=job.transcript.unparseable - unparseable_before,
        )

    async def run_decomposed(self, job: VideoJob, grid: SegmentGrid, cropping: bool = False) -> PipelineResult:
        """Two yes/no questions per segment (motion, grasp), segments in parallel."""
        before = job.transcript.unparseable

        async def one(k: int) -> SegmentState:
            view = await self.segment_view(job, grid, k, cropping)
            hand_ref = hand_reference(job.hand, view.cropped)
            motion, grasp = await asyncio.gather(
                self.ask_yes_no(self.render("primitives", "decomposed_motion", hand_ref=hand_ref),
                                view.frames, job.transcript, _key(k, "motion")),
                self.ask_yes_no(self.render("primitives", "decomposed_grasp", hand_ref=hand_ref),
                                view.frames, job.transcript, _key(k, "grasp")),
            )
            return SegmentState(motion=motion, grasp=grasp)

        states = await asyncio.gather(*(one(k) for k in range(grid.segment_count)))
        return self._reconstruct(job, grid, "decomposed", states, before)

    async def run_single(self, job: VideoJob, grid: SegmentGrid, cropping: bool = False) -> PipelineResult:
        """One primitive per segment; unparseable segments become Idle."""
        before = job.transcript.unparseable

        async def one(k: int) -> Primitive:
            view = await self.segment_view(job, grid, k, cropping)
            prompt = self.render("primitives", "single", hand_ref=hand_reference(job.hand, view.cropped))
            key = _key(k, "primitive")
            reply = await self.ask(prompt, view.frames, job.transcript, key)
            try:
                return parse_primitive(reply)
            except UnparseableReplyError:
                self.note_unparseable(job.transcript, key, prompt.template_id, reply, Primitive.IDLE.value)
                return Primitive.IDLE

        labels = list(await asyncio.gather(*(one(k) for k in range(grid.segment_count))))
        per_segment = PrimitiveSequence(items=tuple(labels), source_id=job.video_id)
        return PipelineResult(
            video_id=job.video_id,
            mode="single",
            sequence=dedup(per_segment),
            segment_labels=labels,
            unparseable=job.transcript.unparseable - before,
        )

    async def run_contextual(self, job: VideoJob, grid: SegmentGrid, cropping: bool = False) -> PipelineResult:
        """Sequential; each prompt states the previous segment's prediction and a Yes flips it."""
        before = job.transcript.unparseable
        motion, grasp = False, False
        states: List[SegmentState] = []
        for k in range(grid.segment_count):
            view = await self.segment_view(job, grid, k, cropping)
            hand_ref = hand_reference(job.hand, view.cropped)
            motion_flip, grasp_flip = await asyncio.gather(
                self.ask_yes_no(
                    self.render("primitives", "contextual_motion", hand_ref=hand_ref, prior_motion=motion),
                    view.frames, job.transcript, _key(k, "motion"),
                ),
                self.ask_yes_no(
                    self.render("primitives", "contextual_grasp", hand_ref=hand_ref, prior_grasp=grasp),
                    view.frames, job.transcript, _key(k, "grasp"),
                ),
            )
            motion = motion != motion_flip
            grasp = grasp != grasp_flip
            states.append(SegmentState(motion=motion, grasp=grasp))
        return self._reconstruct(job, grid, "contextual", states, before)

    async def run(self, job: VideoJob, layout: GridConfig, mode: str, cropping: bool) -> PipelineResult:
        if mode not in PROMPTING_MODES:
            raise PreconditionError(f"unknown prompting mode: {mode}")
        if cropping and job.keypoints is None:
            logger.warning("%s has no keypoints; every crop will abstain", job.video_id)
        grid = job.grid(layout)
        runner = {
            "single": self.run_single,
            "decomposed": self.run_decomposed,
            "contextual": self.run_contextual,
        }[mode]
        result = await runner(job, grid, cropping)
        logger.info("%s: %d segments -> %d primitives (%s%s)", job.video_id, grid.segment_count,
                    len(result.sequence), mode, ", cropped" if cropping else "")
        return result

    async def _probe_hand(self, job: VideoJob, grid: SegmentGrid, k: int, hand: Hand,
                          cropping: bool) -> bool:
        view: SegmentView = await self.segment_view(job, grid, k, cropping, hand=hand)
        # the cropped variant keeps its wording when the crop abstains
        if cropping:
            prompt = self.render("probe", "cropped")
        else:
            prompt = self.render("probe", "uncropped", side=hand.label)
        variant = "cropped" if cropping else "uncropped"
        return await self.ask_yes_no(prompt, view.frames, job.transcript, _key(k, f"{variant}/{hand.value}"))

    async def cross_hand_probe(
        self, videos: Sequence[Tuple[VideoJob, FrameAnnotation]], layout: GridConfig
    ) -> List[ProbeRate]:
        """Ask about both hands on segments where only the annotated hand moves."""
        counts = {variant: [0, 0, 0] for variant in ("uncropped", "cropped")}
        for job, ann in videos:
            grid = job.grid(layout)
            segments = one_hand_active_segments(ann, grid)
            logger.info("%s: %d one-hand-active segments", job.video_id, len(segments))
            for k in segments:
                for variant, cropping in (("uncropped", False), ("cropped", True)):
                    active, inactive = await asyncio.gather(
                        self._probe_hand(job, grid, k, job.hand, cropping),
                        self._probe_hand(job, grid, k, job.hand.other, cropping),
                    )
                    counts[variant][0] += 1
                    counts[variant][1] += int(active)
                    counts[variant][2] += int(inactive)

        rates = []
        for variant, (n, active, inactive) in counts.items():
            if n == 0:
                raise PreconditionError("no one-hand-active segments to probe")
            active_ci = wilson_interval(active, n)
            inactive_ci = wilson_interval(inactive, n)
            rates.append(ProbeRate(
                variant=variant,
                segments=n,
                active_detected=active,
                active_rate=active / n,
                active_ci_low=active_ci[0],
                active_ci_high=active_ci[1],
                inactive_detected=inactive,
                inactive_false_rate=inactive / n,
                inactive_ci_low=inactive_ci[0],
                inactive_ci_high=inactive_ci[1],
            ))
        return rates

    async def execute_task(self, task_data: Dict[str, Any]) -> Dict[str, Any]:
        job: VideoJob = task_data["job"]

        async def work() -> Dict[str, Any]:
            result = await self.run(
                job,
                task_data.get("grid", self.config.primitives.grid),
                task_data.get("mode", "decomposed"),
                task_data.get("cropping", False),
            )
            return {"result": result}

        return await self.guarded(f"{task_data.get('mode', 'decomposed')} {job.video_id}", work)
