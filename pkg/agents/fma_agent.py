"""Fugl-Meyer item scoring: question chains, reasoning prompts and dense coordination/speed rating."""

import asyncio
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from ingest.video import FrameSource, uniform_indices
from models.config import AppConfig
from models.errors import PreconditionError, UnparseableReplyError
from models.fma import (
    COORDINATION_ITEMS,
    DYSMETRIA_ITEM,
    SPEED_ITEM,
    TREMOR_ITEM,
    FmaClip,
    FmaItemScript,
    FmaQuestion,
    FmaScorecard,
    ItemScore,
    subsection_of,
)
from models.schemas import SegmentGrid
from vlm.client import Transcript, VLMClient
from vlm.parsers import parse_final_rating, parse_rating, parse_touch_counts, parse_yes_no

from .base_agent import BaseAgent

logger = logging.getLogger(__name__)

SCORING_METHODS = ("qa", "cot")

ClipIndex = Dict[str, FmaClip]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def speed_score(delta_s: float, full_below_s: float = 2.0, partial_below_s: float = 6.0) -> int:
    """Paretic minus healthy completion time to a 0-2 score."""
    if delta_s < full_below_s:
        return 2
    if delta_s < partial_below_s:
        return 1
    return 0


def time_to_target(
    touches: Sequence[Tuple[int, int]],
    segment_ends: Sequence[float],
    target: int,
    clip_duration_s: Optional[float] = None,
) -> Tuple[float, bool]:
    """Earliest segment end where cumulative nose and knee touches both reach ``target``.

    Returns ``(time, complete)``; an incomplete clip reports its full duration
    (the last segment end when no duration is given).
    """
    if len(touches) != len(segment_ends):
        raise PreconditionError("one touch count per segment is required")
    if not segment_ends:
        raise PreconditionError("a clip shorter than one segment has no touch timeline")
    cumulative = np.cumsum(np.asarray(touches, dtype=int).reshape(-1, 2), axis=0)
    reached = np.flatnonzero((cumulative[:, 0] >= target) & (cumulative[:, 1] >= target))
    if reached.size:
        return float(segment_ends[int(reached[0])]), True
    if clip_duration_s is None:
        return float(segment_ends[-1]), False
    return max(float(clip_duration_s), float(segment_ends[-1])), False


def aggregate_scorecard(items: Sequence[ItemScore], subject_id: str = "") -> FmaScorecard:
    """Sum of scored items; unscored items are listed, never imputed."""
    scored = [i for i in items if i.scored]
    if not scored:
        raise PreconditionError(f"subject {subject_id or '?'} has no scored items")
    unscored = tuple(sorted(i.item for i in items if not i.scored))
    for item in unscored:
        logger.warning("Subject %s item %d unscored", subject_id, item)
    return FmaScorecard(
        subject_id=subject_id,
        items=tuple(sorted(items, key=lambda i: i.item)),
        total=sum(i.score for i in scored),
        max_achievable=2 * len(scored),
        unscored=unscored,
    )


def ones_scorecard(items: Sequence[ItemScore], subject_id: str = "") -> FmaScorecard:
    """Baseline that rates every item 1."""
    return aggregate_scorecard(
        [ItemScore(item=i.item, score=1, gt_score=i.gt_score) for i in items], subject_id
    )


def _sem(values: List[float]) -> float:
    return float(stats.sem(values)) if len(values) > 1 else math.nan


def subsection_errors(scorecards: Sequence[FmaScorecard]) -> pd.DataFrame:
    """Mean absolute error of per-subject subsection sums, for the model and the ONES baseline.

    Only items with both a model score and a ground-truth score count.
    """
    errors: Dict[str, Dict[str, List[float]]] = {}
    for card in scorecards:
        sums: Dict[str, List[int]] = {}
        for item in card.items:
            if not item.scored or item.gt_score is None:
                continue
            for name in (subsection_of(item.item), "Total"):
                pred, truth, ones = sums.setdefault(name, [0, 0, 0])
                sums[name] = [pred + item.score, truth + item.gt_score, ones + 1]
        for name, (pred, truth, ones) in sums.items():
            bucket = errors.setdefault(name, {"method": [], "ones": []})
            bucket["method"].append(abs(pred - truth))
            bucket["ones"].append(abs(ones - truth))

    rows = []
    for name, bucket in errors.items():
        rows.append({
            "subsection": name,
            "n": len(bucket["method"]),
            "method_mae": float(np.mean(bucket["method"])),
            "method_sem": _sem(bucket["method"]),
            "ones_mae": float(np.mean(bucket["ones"])),
            "ones_sem": _sem(bucket["ones"]),
        })
    columns = ["subsection", "n", "method_mae", "method_sem", "ones_mae", "ones_sem"]
    table = pd.DataFrame(rows, columns=columns)
    # Total last
    return table.sort_values("subsection", key=lambda s: s == "Total", kind="stable").reset_index(drop=True)


def scatter_table(scorecards: Sequence[FmaScorecard], levels: Optional[Dict[str, str]] = None) -> pd.DataFrame:
    """Predicted against ground-truth totals, one row per subject."""
    levels = levels or {}
    rows = []
    for card in scorecards:
        both = [i for i in card.items if i.scored and i.gt_score is not None]
        rows.append({
            "subject_id": card.subject_id,
            "impairment_level": levels.get(card.subject_id, ""),
            "predicted_total": card.total,
            "gt_total": sum(i.gt_score for i in card.items if i.gt_score is not None),
            "ones_total": len([i for i in card.items if i.scored]),
            "max_achievable": card.max_achievable,
            "compared_items": len(both),
        })
    return pd.DataFrame(rows)


def scorecard_table(card: FmaScorecard) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "item": i.item,
                "subsection": subsection_of(i.item),
                "score": i.score,
                "gt_score": i.gt_score,
                "flag": i.flag or "",
            }
            for i in card.items
        ]
    )


def index_clips(clips: Sequence[FmaClip]) -> ClipIndex:
    return {str(c.fm_video): c for c in clips}


class FmaAgent(BaseAgent):
    def __init__(self, config: AppConfig, client: VLMClient, frames: FrameSource):
        super().__init__(config, "fma", client, frames)

    def _frame_range(self, clip: FmaClip) -> Tuple[int, int]:
        start = math.floor(clip.start_s * clip.native_fps + 0.5)
        end = max(start, math.floor(clip.end_s * clip.native_fps + 0.5) - 1)
        return start, end

    def dense_grid(self, clip: FmaClip) -> SegmentGrid:
        layout = self.config.fma.dense_grid
        return SegmentGrid(
            sampling_rate_hz=layout.sampling_rate_hz,
            frames_per_segment=layout.frames_per_segment,
            video_duration_s=clip.duration_s,
            native_fps=clip.native_fps,
        )

    async def clip_frames(self, clip: FmaClip, segment: Optional[int] = None) -> List[bytes]:
        """Uniform frames over the clip, or the sampled frames of one dense segment."""
        start, end = self._frame_range(clip)
        if segment is None:
            indices = uniform_indices(start, end, self.config.fma.uniform_frames)
        else:
            indices = [min(start + i, end) for i in self.dense_grid(clip).sample_indices(segment)]
        return await self.frames.frames(clip.video_path, indices, clip.native_fps)

    def _check_duration(self, clip: FmaClip) -> None:
        if clip.duration_s > self.config.fma.clip_warning_s:
            logger.warning("Clip %s lasts %.1fs, longer than the expected %.0fs",
                           clip.clip_id, clip.duration_s, self.config.fma.clip_warning_s)

    @staticmethod
    def _ground_truth(clips: ClipIndex, item: int) -> Optional[int]:
        for key in sorted(clips):
            clip = clips[key]
            if clip.fm_video.item == item and clip.gt_score is not None:
                return clip.gt_score
        return None

    def _clip_for(self, clips: ClipIndex, question: FmaQuestion) -> Optional[FmaClip]:
        clip = clips.get(str(question.fm_video))
        if clip is not None:
            self._check_duration(clip)
        return clip

    async def run_qa_chain(
        self,
        clips: ClipIndex,
        script: FmaItemScript,
        transcript: Optional[Transcript] = None,
        segment: Optional[int] = None,
    ) -> ItemScore:
        """Walk the question chain until a branch score or the closing rate question.

        A chain with dense-sampled questions runs once per dense segment unless
        ``segment`` pins one; the segment's frames then serve every question.
        """
        if segment is None and script.dense:
            return await self.score_dense_item(clips, script, "qa", transcript)
        item = script.fm_item
        gt = self._ground_truth(clips, item)
        suffix = f"/seg{segment:04d}" if segment is not None else ""
        for question in script.questions:
            clip = self._clip_for(clips, question)
            if clip is None:
                return ItemScore(item=item, flag=f"missing clip {question.fm_video}", gt_score=gt)
            frames = await self.clip_frames(clip, segment)
            key = f"item{item:02d}/q{question.qid:03d}{suffix}"

            if question.question_type == "rate":
                prompt = self.render("fma", "rate", question=question.question)
                reply = await self.ask(prompt, frames, transcript, key)
                try:
                    return ItemScore(item=item, score=parse_rating(reply), gt_score=gt)
                except UnparseableReplyError:
                    self.note_unparseable(transcript, key, prompt.template_id, reply, "unscored")
                    return ItemScore(item=item, flag="unparseable", gt_score=gt)

            prompt = self.render("fma", "binary", question=question.question)
            reply = await self.ask(prompt, frames, transcript, key)
            try:
                answer = parse_yes_no(reply)
            except UnparseableReplyError:
                self.note_unparseable(transcript, key, prompt.template_id, reply, "unscored")
                return ItemScore(item=item, flag="unparseable", gt_score=gt)
            branch = question.binary_yes_score if answer else question.binary_no_score
            if branch is not None:
                return ItemScore(item=item, score=branch, gt_score=gt)
        return ItemScore(item=item, flag="chain ended without a score", gt_score=gt)

    async def run_cot(
        self,
        clips: ClipIndex,
        script: FmaItemScript,
        transcript: Optional[Transcript] = None,
        segment: Optional[int] = None,
    ) -> ItemScore:
        """One reasoning prompt carrying every rating instruction of the item."""
        if segment is None and script.dense:
            return await self.score_dense_item(clips, script, "cot", transcript)
        item = script.fm_item
        gt = self._ground_truth(clips, item)
        clip = self._clip_for(clips, script.questions[0])
        if clip is None:
            return ItemScore(item=item, flag=f"missing clip {script.questions[0].fm_video}", gt_score=gt)
        frames = await self.clip_frames(clip, segment)
        prompt = self.render("fma", "cot", question="\n".join(q.question for q in script.questions))
        key = f"item{item:02d}/cot" + (f"/seg{segment:04d}" if segment is not None else "")
        reply = await self.ask(prompt, frames, transcript, key)
        try:
            return ItemScore(item=item, score=parse_final_rating(reply), gt_score=gt)
        except UnparseableReplyError:
            self.note_unparseable(transcript, key, prompt.template_id, reply, "unscored")
            return ItemScore(item=item, flag="unparseable", gt_score=gt)

    async def _score(self, method: str, clips: ClipIndex, script: FmaItemScript,
                     transcript: Optional[Transcript], segment: Optional[int] = None) -> ItemScore:
        if method not in SCORING_METHODS:
            raise PreconditionError(f"unknown scoring method: {method}")
        runner = self.run_qa_chain if method == "qa" else self.run_cot
        return await runner(clips, script, transcript, segment)

    async def score_dense_item(
        self, clips: ClipIndex, script: FmaItemScript, method: str, transcript: Optional[Transcript] = None
    ) -> ItemScore:
        """Rate every dense segment of the clip and round the mean half-up."""
        item = script.fm_item
        gt = self._ground_truth(clips, item)
        clip = self._clip_for(clips, script.questions[0])
        if clip is None:
            return ItemScore(item=item, flag=f"missing clip {script.questions[0].fm_video}", gt_score=gt)
        count = self.dense_grid(clip).segment_count
        if count == 0:
            return ItemScore(item=item, flag="clip shorter than one segment", gt_score=gt)
        segment_scores = await asyncio.gather(
            *(self._score(method, clips, script, transcript, k) for k in range(count))
        )
        ratings = [s.score for s in segment_scores if s.scored]
        if not ratings:
            return ItemScore(item=item, flag="no segment scored", gt_score=gt)
        return ItemScore(item=item, score=round_half_up(float(np.mean(ratings))), gt_score=gt)

    async def _touch_timeline(self, clip: FmaClip, transcript: Optional[Transcript]) -> Tuple[float, bool]:
        self._check_duration(clip)
        grid = self.dense_grid(clip)
        prompt = self.render("fma", "touch_count")

        async def one(k: int) -> Tuple[int, int]:
            key = f"item{SPEED_ITEM}/{clip.fm_video.side}/seg{k:04d}"
            reply = await self.ask(prompt, await self.clip_frames(clip, k), transcript, key)
            try:
                return parse_touch_counts(reply)
            except UnparseableReplyError:
                self.note_unparseable(transcript, key, prompt.template_id, reply, "0 touches")
                return 0, 0

        touches = await asyncio.gather(*(one(k) for k in range(grid.segment_count)))
        ends = [grid.segment_bounds(k)[1] for k in range(grid.segment_count)]
        return time_to_target(touches, ends, self.config.fma.touch_target, clip.duration_s)

    @staticmethod
    def _speed_clip(clips: ClipIndex, side: str) -> Optional[FmaClip]:
        # frontal view first
        for key in sorted(clips, key=lambda k: (clips[k].fm_video.view != "F", k)):
            clip = clips[key]
            if clip.fm_video.item == SPEED_ITEM and clip.fm_video.side == side:
                return clip
        return None

    async def score_speed(self, clips: ClipIndex, transcript: Optional[Transcript] = None) -> ItemScore:
        gt = self._ground_truth(clips, SPEED_ITEM)
        paretic = self._speed_clip(clips, "A")
        healthy = self._speed_clip(clips, "H")
        if paretic is None or healthy is None:
            return ItemScore(item=SPEED_ITEM, flag="speed needs affected and healthy clips", gt_score=gt)
        (t_paretic, paretic_done), (t_healthy, healthy_done) = await asyncio.gather(
            self._touch_timeline(paretic, transcript), self._touch_timeline(healthy, transcript)
        )
        flag = None
        if not (paretic_done and healthy_done):
            flag = "incomplete"
            logger.warning("Touch target not reached for %s (affected %s, healthy %s)",
                           paretic.subject_id, paretic_done, healthy_done)
        cfg = self.config.fma
        score = speed_score(t_paretic - t_healthy, cfg.speed_full_below_s, cfg.speed_partial_below_s)
        return ItemScore(item=SPEED_ITEM, score=score, flag=flag, gt_score=gt)

    async def score_coord_speed(
        self, clips: ClipIndex, scripts: Dict[int, FmaItemScript], method: str,
        transcript: Optional[Transcript] = None,
    ) -> Dict[int, ItemScore]:
        items: Dict[int, ItemScore] = {}
        for item in (TREMOR_ITEM, DYSMETRIA_ITEM):
            if item in scripts:
                items[item] = await self.score_dense_item(clips, scripts[item], method, transcript)
        if SPEED_ITEM in scripts:
            items[SPEED_ITEM] = await self.score_speed(clips, transcript)
        return items

    async def score_subject(
        self, subject_id: str, clips: Sequence[FmaClip], scripts: Dict[int, FmaItemScript], method: str,
        transcript: Optional[Transcript] = None,
    ) -> FmaScorecard:
        index = index_clips([c for c in clips if c.subject_id == subject_id])
        regular = [s for item, s in sorted(scripts.items()) if item not in COORDINATION_ITEMS]
        coordination_wanted = any(item in scripts for item in COORDINATION_ITEMS)

        scores = list(await asyncio.gather(*(self._score(method, index, s, transcript) for s in regular)))
        if coordination_wanted:
            coordination = await self.score_coord_speed(index, scripts, method, transcript)
            scores.extend(coordination.values())
        card = aggregate_scorecard(scores, subject_id)
        logger.info("Subject %s: %d/%d over %d scored items", subject_id, card.total, card.max_achievable,
                    card.max_achievable // 2)
        return card

    async def execute_task(self, task_data: Dict[str, Any]) -> Dict[str, Any]:
        subject_id = task_data["subject_id"]
        transcript = task_data.get("transcript")

        async def work() -> Dict[str, Any]:
            card = await self.score_subject(
                subject_id, task_data["clips"], task_data["scripts"], task_data.get("method", "qa"), transcript
            )
            return {"scorecard": card}

        return await self.guarded(f"fma {subject_id}", work)
