import asyncio
import logging
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from evaluation.metrics import MetricReport, evaluate_video, summarize
from evaluation.reconstruct import (
    annotation_track,
    estimate_transitions,
    ground_truth_sequence,
    markov_baseline,
    omniscient_baseline,
    video_seed,
)
from evaluation.report import METRICS_FILE, METRICS_SUMMARY_FILE, RunWriter, load_predictions
from ingest.annotations import load_annotation
from ingest.keypoints import load_keypoints
from ingest.video import FrameExtractor, FrameSource
from models.config import AppConfig, GridConfig
from models.errors import PreconditionError
from models.fma import load_fma_clips, load_fma_scripts
from models.manifest import ManifestEntry, RunManifest
from models.schemas import FrameAnnotation, PrimitiveSequence, SegmentGrid, StateTrack
from vlm.client import Transcript, VLMClient
from vlm.prompts import catalog_versions

from .activity_agent import ActivityAgent, accuracy_and_matrix, results_table
from .base_agent import BaseAgent, PipelineResult, VideoJob
from .fma_agent import FmaAgent, scatter_table, scorecard_table, subsection_errors
from .primitive_agent import PrimitiveAgent
from .primrs_agent import PrimRsAgent

logger = logging.getLogger(__name__)


def _failure(outcome: Dict[str, Any]) -> Dict[str, str]:
    return {"category": outcome.get("category", "error"), "error": outcome["error"]}


def _grid_record(layout: GridConfig) -> Dict[str, Any]:
    return {"sampling_rate_hz": layout.sampling_rate_hz, "frames_per_segment": layout.frames_per_segment}


class OrchestratorAgent(BaseAgent):
    """Runs one workflow over a manifest and writes the run directory."""

    def __init__(self, config: AppConfig, client: VLMClient, frames: FrameSource):
        super().__init__(config, "orchestrator", client, frames)

        # Initialize sub-agents
        self.primitives = PrimitiveAgent(config, client, frames)
        self.primrs = PrimRsAgent(config, client, frames)
        self.activity = ActivityAgent(config, client, frames)
        self.fma = FmaAgent(config, client, frames)

        self.video_semaphore = asyncio.Semaphore(config.runtime.parallelism)
        self.workflow_templates: Dict[str, Callable[..., Awaitable[Dict[str, Any]]]] = {
            "infer_primitives": self.infer_primitives,
            "primrs": self.run_primrs,
            "baseline": self.run_baseline,
            "activity": self.run_activity,
            "fma": self.run_fma,
            "metrics": self.run_metrics,
            "probe": self.run_probe,
        }

    async def execute_task(self, task_data: Dict[str, Any]) -> Dict[str, Any]:
        workflow = task_data.get("workflow")
        if workflow not in self.workflow_templates:
            raise PreconditionError(f"Unknown workflow type: {workflow}")
        run_id = task_data.get("run_id") or str(uuid.uuid4())
        out_dir = Path(task_data.get("out_dir") or self.config.runtime.output_dir)
        params = {k: v for k, v in task_data.items() if k not in ("workflow", "run_id", "out_dir")}

        async def work() -> Dict[str, Any]:
            started = datetime.now()
            result = await self.workflow_templates[workflow](out_dir=out_dir, **params)
            await RunWriter(out_dir).write_summary(
                self.run_summary(workflow, run_id, started, result.pop("summary", {}))
            )
            return {"run_id": run_id, "workflow": workflow, "out_dir": str(out_dir), **result}

        return await self.guarded(f"{workflow} run {run_id}", work)

    def run_summary(self, workflow: str, run_id: str, started: datetime, extra: Dict[str, Any]) -> Dict[str, Any]:
        """Enough to rerun the same request stream against a replay or mock backend."""
        return {
            "run_id": run_id,
            "workflow": workflow,
            "started_at": started.isoformat(),
            "config_digest": self.config.digest(),
            "config": self.config.model_dump(mode="json"),
            "seed": self.config.runtime.seed,
            "backend": self.client.backend.identity(),
            "catalog_versions": catalog_versions(),
            "agents": self.get_agent_status_summary(),
            **extra,
        }

    async def prepare_job(self, entry: ManifestEntry, need_video: bool = True) -> VideoJob:
        keypoints = None
        if entry.keypoint_path is not None:
            keypoints = await asyncio.to_thread(load_keypoints, entry.keypoint_path)
        duration = entry.duration_s
        if duration is None:
            if not need_video and entry.annotation_path is not None:
                ann = await asyncio.to_thread(load_annotation, entry.annotation_path, entry.hand, entry.native_fps)
                duration = ann.duration_s
            elif isinstance(self.frames, FrameExtractor):
                duration = await self.frames.probe_duration(entry.video_path)
            else:
                raise PreconditionError(f"{entry.video_id}: manifest gives no duration_s")
        return VideoJob(
            video_id=entry.video_id,
            video_path=entry.video_path,
            hand=entry.hand,
            native_fps=entry.native_fps,
            duration_s=duration,
            keypoints=keypoints,
            transcript=Transcript(entry.video_id),
        )

    async def _for_each(self, items: Sequence[Any], fn: Callable[[Any], Awaitable[Any]]) -> List[Any]:
        async def bounded(item):
            async with self.video_semaphore:
                return await fn(item)

        return list(await asyncio.gather(*(bounded(item) for item in items)))

    @staticmethod
    def _annotation(entry: ManifestEntry) -> Optional[FrameAnnotation]:
        if entry.annotation_path is None:
            return None
        return load_annotation(entry.annotation_path, entry.hand, entry.native_fps)

    def _evaluate(
        self,
        entry: ManifestEntry,
        predicted: PrimitiveSequence,
        track: Optional[StateTrack],
        grid: Optional[SegmentGrid],
    ) -> Optional[MetricReport]:
        ann = self._annotation(entry)
        if ann is None:
            return None
        gt_track = None
        if track is not None and grid is not None:
            gt_track = annotation_track(ann, grid, entry.hand)
            if len(gt_track) != len(track):
                logger.warning("%s: track lengths differ (%d vs %d), skipping segment F1",
                               entry.video_id, len(gt_track), len(track))
                gt_track = None
        g = ground_truth_sequence(ann, entry.video_id)
        return evaluate_video(g, predicted, gt_track, track if gt_track is not None else None,
                              entry.impairment_level)

    def _write_metrics(self, writer: RunWriter, reports: List[MetricReport]) -> Dict[str, Any]:
        if not reports:
            logger.info("No annotations in manifest, metrics skipped")
            return {}
        writer.write_csv(pd.DataFrame([r.row() for r in reports]), METRICS_FILE)
        summary = summarize(reports)
        writer.write_csv(summary, METRICS_SUMMARY_FILE)
        overall = summary[summary["group"] == "all"].iloc[0]
        return {
            "videos_evaluated": len(reports),
            "edit_score_mean": float(overall["edit_score_mean"]),
            "relative_counting_error_mean": float(overall["relative_counting_error_mean"]),
        }

    async def _pipeline_run(
        self,
        manifest: RunManifest,
        writer: RunWriter,
        layout: GridConfig,
        run_one: Callable[[VideoJob], Awaitable[Dict[str, Any]]],
    ) -> Dict[str, Any]:
        async def process(entry: ManifestEntry):
            job = await self.prepare_job(entry)
            outcome = await run_one(job)
            await writer.write_transcript(job.transcript)
            if not outcome["success"]:
                return entry, None, _failure(outcome)
            result: PipelineResult = outcome["result"]
            grid = job.grid(layout)
            await writer.write_prediction(
                {**result.prediction_record(), "grid": _grid_record(layout)},
                result.track, _grid_record(layout), result.provenance,
            )
            report = await asyncio.to_thread(self._evaluate, entry, result.sequence, result.track, grid)
            return entry, report, None

        outcomes = await self._for_each(manifest.entries, process)
        failures = {entry.video_id: error for entry, _, error in outcomes if error is not None}
        reports = [report for _, report, _ in outcomes if report is not None]
        return {
            "summary": {
                "grid": _grid_record(layout),
                "videos": len(manifest),
                "failures": failures,
                **self._write_metrics(writer, reports),
            },
            "failures": failures,
        }

    async def infer_primitives(
        self,
        out_dir: Path,
        manifest: RunManifest,
        mode: str = "decomposed",
        cropping: bool = False,
        grids: Optional[Sequence[GridConfig]] = None,
    ) -> Dict[str, Any]:
        grids = list(grids or [self.config.primitives.grid])
        runs = {}
        for layout in grids:
            run_dir = out_dir / layout.label if len(grids) > 1 else out_dir

            async def run_one(job: VideoJob, layout=layout) -> Dict[str, Any]:
                return await self.primitives.execute_task(
                    {"job": job, "grid": layout, "mode": mode, "cropping": cropping}
                )

            result = await self._pipeline_run(manifest, RunWriter(run_dir), layout, run_one)
            if len(grids) > 1:
                await RunWriter(run_dir).write_summary(self.run_summary(
                    "infer_primitives", layout.label, datetime.now(),
                    {"mode": mode, "cropping": cropping, **result["summary"]},
                ))
            runs[layout.label] = result
        if len(grids) == 1:
            only = next(iter(runs.values()))
            only["summary"].update({"mode": mode, "cropping": cropping})
            return only
        return {
            "summary": {"mode": mode, "cropping": cropping, "sweep": [g.label for g in grids]},
            "failures": {label: r["failures"] for label, r in runs.items() if r["failures"]},
        }

    async def run_primrs(
        self, out_dir: Path, manifest: RunManifest, cropping: bool = True, postprocessing: bool = True
    ) -> Dict[str, Any]:
        layout = self.config.primrs.grid

        async def run_one(job: VideoJob) -> Dict[str, Any]:
            return await self.primrs.execute_task(
                {"job": job, "grid": layout, "cropping": cropping, "postprocessing": postprocessing}
            )

        result = await self._pipeline_run(manifest, RunWriter(out_dir), layout, run_one)
        result["summary"].update({"cropping": cropping, "postprocessing": postprocessing})
        return result

    async def run_baseline(self, out_dir: Path, manifest: RunManifest, kind: str = "markov") -> Dict[str, Any]:
        """Omniscient or Markov reconstruction from annotations alone; no backend calls."""
        if kind not in ("markov", "omniscient"):
            raise PreconditionError(f"unknown baseline: {kind}")
        writer = RunWriter(out_dir)
        layout = self.config.primitives.grid
        entries = [e for e in manifest.entries if e.annotation_path is not None]
        if not entries:
            raise PreconditionError("baselines need annotated manifest entries")

        annotated: List[Tuple[ManifestEntry, FrameAnnotation, SegmentGrid]] = []
        for entry in entries:
            ann = self._annotation(entry)
            job = await self.prepare_job(entry, need_video=False)
            annotated.append((entry, ann, job.grid(layout)))

        cfg = self.config.reconstruction
        summary: Dict[str, Any] = {"baseline": kind, "grid": _grid_record(layout), "videos": len(annotated)}
        if kind == "markov":
            model = estimate_transitions([annotation_track(a, g, e.hand) for e, a, g in annotated])
            writer.write_csv(
                pd.DataFrame(model.as_array(), index=["II", "IG", "MI", "MG"], columns=["II", "IG", "MI", "MG"]),
                "transitions.csv", index=True,
            )
            summary["transitions"] = [list(row) for row in model.matrix]

        reports = []
        for index, (entry, ann, grid) in enumerate(annotated):
            if kind == "omniscient":
                predicted = omniscient_baseline(ann, grid, cfg, entry.video_id)
            else:
                predicted = markov_baseline(
                    model, grid.segment_count, video_seed(self.config.runtime.seed, index),
                    cfg.for_grid(grid), entry.video_id, entry.hand,
                )
            await writer.write_prediction(
                {"video_id": entry.video_id, "mode": kind, "sequence": predicted.labels()}
            )
            reports.append(evaluate_video(ground_truth_sequence(ann, entry.video_id), predicted,
                                          impairment_level=entry.impairment_level))
        summary.update(self._write_metrics(writer, reports))
        return {"summary": summary}

    async def run_metrics(self, out_dir: Path, manifest: RunManifest, predictions: Path) -> Dict[str, Any]:
        """Score a previous run's predictions against the manifest's annotations."""
        writer = RunWriter(out_dir)
        loaded = load_predictions(predictions)
        layout = self.config.primitives.grid
        reports = []
        for entry in manifest.entries:
            if entry.video_id not in loaded:
                logger.warning("No prediction for %s in %s", entry.video_id, predictions)
                continue
            stored = loaded[entry.video_id]
            grid = None
            if stored.track is not None:
                job = await self.prepare_job(entry, need_video=False)
                grid = job.grid(stored.grid or layout)
            report = self._evaluate(entry, stored.sequence, stored.track, grid)
            if report is not None:
                reports.append(report)
        return {"summary": {"predictions": str(predictions), **self._write_metrics(writer, reports)}}

    async def run_activity(
        self, out_dir: Path, manifest: RunManifest, prompt_variant: Optional[str] = None
    ) -> Dict[str, Any]:
        writer = RunWriter(out_dir)
        variant = prompt_variant or self.config.activity.prompt_variant

        async def process(entry: ManifestEntry):
            job = await self.prepare_job(entry)
            outcome = await self.activity.execute_task(
                {"job": job, "truth": entry.activity, "prompt_variant": variant}
            )
            await writer.write_transcript(job.transcript)
            return entry, outcome

        outcomes = await self._for_each(manifest.entries, process)
        failures = {e.video_id: _failure(o) for e, o in outcomes if not o["success"]}
        results = [o["result"] for _, o in outcomes if o["success"]]
        writer.write_csv(results_table(results), "activity_results.csv")

        summary: Dict[str, Any] = {"prompt_variant": variant, "videos": len(manifest), "failures": failures}
        if any(r.truth is not None for r in results):
            scores = accuracy_and_matrix(results, manifest.activity_labels())
            writer.write_csv(scores.matrix, "activity_confusion.csv", index=True)
            writer.write_csv(scores.normalized(), "activity_confusion_normalized.csv", index=True)
            summary.update({
                "accuracy": scores.accuracy,
                "unparsed": scores.unparsed,
                "majority_baseline": scores.majority_baseline,
            })
        return {"summary": summary, "failures": failures}

    async def run_fma(self, out_dir: Path, clips: Path, scripts: Path, method: str = "qa") -> Dict[str, Any]:
        writer = RunWriter(out_dir)
        all_clips = load_fma_clips(clips)
        item_scripts = load_fma_scripts(scripts)
        subjects = sorted({c.subject_id for c in all_clips})
        levels = {c.subject_id: c.impairment_level.value for c in all_clips if c.impairment_level}

        async def process(subject_id: str):
            transcript = Transcript(f"fma_{subject_id}")
            outcome = await self.fma.execute_task({
                "subject_id": subject_id, "clips": all_clips, "scripts": item_scripts,
                "method": method, "transcript": transcript,
            })
            await writer.write_transcript(transcript)
            if outcome["success"]:
                writer.write_csv(scorecard_table(outcome["scorecard"]), "fma", f"{subject_id}.csv")
            return subject_id, outcome

        outcomes = await self._for_each(subjects, process)
        failures = {s: _failure(o) for s, o in outcomes if not o["success"]}
        cards = [o["scorecard"] for _, o in outcomes if o["success"]]
        summary: Dict[str, Any] = {"method": method, "subjects": len(subjects), "failures": failures}
        if cards:
            writer.write_csv(scatter_table(cards, levels), "fma_scatter.csv")
            writer.write_csv(subsection_errors(cards), "fma_subsections.csv")
            summary["totals"] = {c.subject_id: c.total for c in cards}
        return {"summary": summary, "failures": failures}

    async def run_probe(self, out_dir: Path, manifest: RunManifest) -> Dict[str, Any]:
        writer = RunWriter(out_dir)
        layout = self.config.primitives.grid
        videos = []
        for entry in manifest.entries:
            ann = self._annotation(entry)
            if ann is None:
                logger.warning("%s has no annotation, skipped by the probe", entry.video_id)
                continue
            videos.append((await self.prepare_job(entry), ann))
        try:
            rates = await self.primitives.cross_hand_probe(videos, layout)
        finally:
            for job, _ in videos:
                await writer.write_transcript(job.transcript)
        writer.write_csv(pd.DataFrame([r.model_dump() for r in rates]), "probe_cross_hand.csv")
        return {"summary": {"grid": _grid_record(layout), "rates": [r.model_dump() for r in rates]}}

    def get_agent_status_summary(self) -> Dict[str, Any]:
        """Get status summary of all agents"""
        return {
            "orchestrator": self.get_status(),
            "primitives": self.primitives.get_status(),
            "primrs": self.primrs.get_status(),
            "activity": self.activity.get_status(),
            "fma": self.fma.get_status(),
        }
