"""Pose-informed idle/holding states and the post-processing state machine for structured tasks."""

import logging
import math
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict

from evaluation.reconstruct import states_to_primitives
from ingest.cropping import segment_stillness
from ingest.video import FrameSource
from models.config import AppConfig, GridConfig, PrimRsConfig
from models.errors import PreconditionError
from models.schemas import (
    CropVariant,
    Primitive,
    PrimitiveSequence,
    SegmentGrid,
    SegmentState,
    StateTrack,
    TrackMode,
    dedup,
)
from vlm.client import VLMClient
from vlm.prompts import hand_reference

from .base_agent import BaseAgent, PipelineResult, VideoJob

logger = logging.getLogger(__name__)

CROPPED_HAND = "the hand"


class PrimRsState(BaseModel):
    model_config = ConfigDict(frozen=True)

    idle: bool
    grasp: bool
    source: Literal["vlm", "pose-abstain", "pose-quick"] = "vlm"
    still: bool = False


class Insertion(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: int
    label: Primitive
    after_segment: int


def _smooth_pass(signal: List[bool], target: bool) -> List[bool]:
    # interior elements only; a boundary element has a single neighbor and is left alone
    out = list(signal)
    for i in range(1, len(signal) - 1):
        if signal[i - 1] == target and signal[i + 1] == target:
            out[i] = target
    return out


def smooth_binary(signal: Sequence[bool], pass_a_target: bool, pass_b_target: bool) -> List[bool]:
    """Fill single-element gaps: first towards ``pass_a_target``, then (on that output) towards ``pass_b_target``."""
    if len(signal) < 1:
        raise PreconditionError("cannot smooth an empty signal")
    return _smooth_pass(_smooth_pass(list(signal), pass_a_target), pass_b_target)


def smooth_idle(idle: Sequence[bool]) -> List[bool]:
    return smooth_binary(idle, False, True)


def correct_and_smooth_grasp(idle: Sequence[bool], grasp: Sequence[bool]) -> List[bool]:
    """Empty wherever idle, smoothed towards holding then empty, then corrected again."""
    if len(idle) != len(grasp):
        raise PreconditionError(f"idle and grasp lengths differ: {len(idle)} != {len(grasp)}")
    forced = [g and not i for i, g in zip(idle, grasp)]
    smoothed = smooth_binary(forced, True, False)
    return [g and not i for i, g in zip(idle, smoothed)]


def assign_transport_stabilize(stillness: Sequence[bool], cfg: PrimRsConfig = PrimRsConfig()) -> List[Primitive]:
    """Labels for one holding block.

    Runs of at least ``still_run_length`` still segments are Stabilize. Past
    those, the earliest still segment among the last ``terminal_still_window``
    segments turns itself and the rest of the block into Stabilize.
    """
    n = len(stillness)
    labels = [Primitive.TRANSPORT] * n
    in_run = [False] * n
    i = 0
    while i < n:
        if not stillness[i]:
            i += 1
            continue
        j = i
        while j < n and stillness[j]:
            j += 1
        if j - i >= cfg.still_run_length:
            for m in range(i, j):
                labels[m] = Primitive.STABILIZE
                in_run[m] = True
        i = j
    for m in range(max(0, n - cfg.terminal_still_window), n):
        if stillness[m] and not in_run[m]:
            for t in range(m, n):
                labels[t] = Primitive.STABILIZE
            break
    return labels


def _category(state: PrimRsState) -> str:
    if state.idle:
        return "idle"
    return "holding" if state.grasp else "empty"


def _blocks(states: Sequence[PrimRsState]) -> List[Tuple[str, int, int]]:
    blocks: List[Tuple[str, int, int]] = []
    for k, state in enumerate(states):
        category = _category(state)
        if blocks and blocks[-1][0] == category:
            blocks[-1] = (category, blocks[-1][1], k + 1)
        else:
            blocks.append((category, k, k + 1))
    return blocks


_EMPTY_BLOCK_LABELS = {
    ("idle", "holding"): (Primitive.REACH, None),
    ("holding", "idle"): (Primitive.REPOSITION, None),
    ("holding", "holding"): (Primitive.REPOSITION, Primitive.REACH),
    ("idle", "idle"): (Primitive.REACH, Primitive.REPOSITION),
}


def classify_blocks(
    states: Sequence[PrimRsState], cfg: PrimRsConfig = PrimRsConfig()
) -> Tuple[List[Primitive], List[Insertion]]:
    """Per-segment labels from smoothed states, plus the labels inserted between segments.

    Empty-hand blocks are named from their neighbours (video edges count as
    idle); composite blocks put the first label on the first ``ceil(L/2)``
    segments. Directly adjacent idle and holding blocks get a Reach or
    Reposition inserted between them.
    """
    labels: List[Primitive] = []
    insertions: List[Insertion] = []
    blocks = _blocks(states)

    def insert(label: Primitive, after_segment: int) -> None:
        insertions.append(Insertion(position=len(labels), label=label, after_segment=after_segment))
        labels.append(label)

    for b, (category, start, end) in enumerate(blocks):
        length = end - start
        previous = blocks[b - 1][0] if b > 0 else "idle"
        following = blocks[b + 1][0] if b + 1 < len(blocks) else "idle"

        # a video opening mid-grasp gets no Reach before its first holding block
        if b > 0 and (previous, category) == ("idle", "holding"):
            insert(Primitive.REACH, start - 1)
        elif b > 0 and (previous, category) == ("holding", "idle"):
            insert(Primitive.REPOSITION, start - 1)

        if category == "idle":
            labels.extend([Primitive.IDLE] * length)
        elif category == "holding":
            labels.extend(assign_transport_stabilize([s.still for s in states[start:end]], cfg))
        else:
            first, second = _EMPTY_BLOCK_LABELS[(previous, following)]
            if second is None:
                labels.extend([first] * length)
            elif length == 1:
                labels.append(first)
                insert(second, start)
            else:
                split = math.ceil(length / 2)
                labels.extend([first] * split + [second] * (length - split))
    return labels, insertions


def postprocess(
    states: Sequence[PrimRsState], cfg: PrimRsConfig = PrimRsConfig()
) -> Tuple[List[PrimRsState], List[Primitive], Dict[str, Any]]:
    """Smoothing, grasp correction and block classification with a provenance record."""
    raw_idle = [s.idle for s in states]
    idle = smooth_idle(raw_idle)
    grasp = correct_and_smooth_grasp(idle, [s.grasp for s in states])
    smoothed = [s.model_copy(update={"idle": i, "grasp": g}) for s, i, g in zip(states, idle, grasp)]
    labels, insertions = classify_blocks(smoothed, cfg)

    idle_flips = [k for k, (a, b) in enumerate(zip(raw_idle, idle)) if a != b]
    grasp_flips = [k for k, (s, g) in enumerate(zip(states, grasp)) if s.grasp != g]
    if idle_flips or grasp_flips:
        logger.debug("Smoothing flipped idle at %s and grasp at %s", idle_flips, grasp_flips)
    for ins in insertions:
        logger.debug("Inserted %s after segment %d", ins.label.value, ins.after_segment)
    provenance = {
        "idle_flips": idle_flips,
        "grasp_flips": grasp_flips,
        "insertions": [ins.model_dump(mode="json") for ins in insertions],
        "sources": [s.source for s in states],
        "stillness": [s.still for s in states],
    }
    return smoothed, labels, provenance


class PrimRsAgent(BaseAgent):
    def __init__(self, config: AppConfig, client: VLMClient, frames: FrameSource):
        super().__init__(config, "primrs", client, frames)

    async def decide_states(self, job: VideoJob, grid: SegmentGrid, cropping: bool = True) -> List[PrimRsState]:
        """Sequential: the grasp question asked depends on the previous segment's grasp."""
        states: List[PrimRsState] = []
        holding = False
        for k in range(grid.segment_count):
            view = await self.segment_view(job, grid, k, cropping)
            still = (
                segment_stillness(view.keypoints, job.hand, self.config.crop)
                if view.keypoints is not None else False
            )
            if cropping and view.decision.variant is CropVariant.ABSTAIN:
                states.append(PrimRsState(idle=True, grasp=False, source="pose-abstain", still=still))
                holding = False
                continue
            if cropping and view.decision.variant is CropVariant.MOVING:
                states.append(PrimRsState(idle=False, grasp=holding, source="pose-quick", still=still))
                continue

            hand_ref = CROPPED_HAND if view.cropped else hand_reference(job.hand, False)
            idle = await self.ask_yes_no(
                self.render("primrs", "idle", hand_ref=hand_ref), view.frames, job.transcript, f"seg{k:04d}/idle"
            )
            if holding:
                released = await self.ask_yes_no(
                    self.render("primrs", "release", hand_ref=hand_ref),
                    view.frames, job.transcript, f"seg{k:04d}/release",
                )
                holding = not released
            else:
                holding = await self.ask_yes_no(
                    self.render("primrs", "pickup", hand_ref=hand_ref),
                    view.frames, job.transcript, f"seg{k:04d}/pickup",
                )
            states.append(PrimRsState(idle=idle, grasp=holding, source="vlm", still=still))
        return states

    async def run_primrs(
        self, job: VideoJob, layout: Optional[GridConfig] = None, cropping: bool = True, postprocessing: bool = True
    ) -> PipelineResult:
        grid = job.grid(layout or self.config.primrs.grid)
        before = job.transcript.unparseable
        states = await self.decide_states(job, grid, cropping)
        mode = f"primrs{'' if cropping else '-nocrop'}{'' if postprocessing else '-raw'}"

        if postprocessing:
            final_states, labels, provenance = postprocess(states, self.config.primrs)
        else:
            final_states = states
            raw = StateTrack(
                hand=job.hand,
                mode=TrackMode.PRIMRS,
                segments=tuple(SegmentState(motion=not s.idle, grasp=s.grasp) for s in states),
            )
            labels = list(states_to_primitives(raw, self.config.reconstruction.for_grid(grid)).items)
            provenance = {"sources": [s.source for s in states], "stillness": [s.still for s in states]}

        track = StateTrack(
            hand=job.hand,
            mode=TrackMode.PRIMRS,
            segments=tuple(SegmentState(motion=not s.idle, grasp=s.grasp) for s in final_states),
        )
        sequence = dedup(PrimitiveSequence(items=tuple(labels), source_id=job.video_id))
        logger.info("%s: %d segments -> %d primitives (%s)", job.video_id, grid.segment_count, len(sequence), mode)
        return PipelineResult(
            video_id=job.video_id,
            mode=mode,
            sequence=sequence,
            segment_labels=labels,
            track=track,
            unparseable=job.transcript.unparseable - before,
            provenance=provenance,
        )

    async def execute_task(self, task_data: Dict[str, Any]) -> Dict[str, Any]:
        job: VideoJob = task_data["job"]

        async def work() -> Dict[str, Any]:
            result = await self.run_primrs(
                job,
                task_data.get("grid"),
                cropping=task_data.get("cropping", True),
                postprocessing=task_data.get("postprocessing", True),
            )
            return {"result": result}

        return await self.guarded(f"primrs {job.video_id}", work)
