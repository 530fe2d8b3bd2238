"""Sequence- and segment-level metrics for predicted primitive sequences.

All functions are pure; corpus numbers are per-video metrics averaged with
mean and standard error.
"""

import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from models.errors import MetricError
from models.schemas import ImpairmentLevel, Primitive, PrimitiveSequence, StateTrack, count, dedup

logger = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "edit_score",
    "action_error_rate",
    "relative_counting_error",
    "motion_f1",
    "grasp_f1",
    "oversegmentation_ratio",
)


class MetricReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    video_id: str = ""
    impairment_level: Optional[ImpairmentLevel] = None
    edit_score: float = Field(ge=0.0, le=100.0)
    action_error_rate: float = Field(ge=0.0)
    relative_counting_error: float = Field(ge=0.0)
    per_primitive_rce: Dict[Primitive, float] = Field(default_factory=dict)
    motion_f1: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    grasp_f1: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    oversegmentation_ratio: Optional[float] = Field(default=None, gt=0.0)

    def row(self) -> Dict[str, object]:
        record: Dict[str, object] = {
            "video_id": self.video_id,
            "impairment_level": self.impairment_level.value if self.impairment_level else "",
        }
        record.update({name: getattr(self, name) for name in METRIC_COLUMNS})
        for primitive in Primitive:
            record[f"rce_{primitive.value.lower()}"] = self.per_primitive_rce.get(primitive)
        return record


def levenshtein(g: PrimitiveSequence, p: PrimitiveSequence) -> int:
    """Unit-cost insert/delete/substitute distance."""
    a, b = g.items, p.items
    D = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    D[:, 0] = np.arange(len(a) + 1)
    D[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                D[i, j] = D[i - 1, j - 1]
            else:
                D[i, j] = 1 + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    return int(D[len(a), len(b)])


def edit_score(g: PrimitiveSequence, p: PrimitiveSequence) -> float:
    longest = max(len(g), len(p))
    if longest == 0:
        return 100.0
    return (1.0 - levenshtein(g, p) / longest) * 100.0


def action_error_rate(g: PrimitiveSequence, p: PrimitiveSequence) -> float:
    if len(g) == 0:
        raise MetricError("undefined AER: empty ground truth")
    return levenshtein(g, p) / len(g)


def relative_counting_error(g: PrimitiveSequence, p: PrimitiveSequence) -> float:
    if len(g) == 0:
        raise MetricError("undefined RCE: empty ground truth")
    return sum(abs(count(prim, g) - count(prim, p)) for prim in Primitive) / len(g)


def per_primitive_rce(
    corpus_g: Sequence[PrimitiveSequence], corpus_p: Sequence[PrimitiveSequence]
) -> Dict[Primitive, float]:
    """Counting error per primitive, pooled over videos and normalised by ground-truth instances.

    Primitives that never occur in the ground truth are omitted.
    """
    if len(corpus_g) != len(corpus_p):
        raise MetricError(f"corpus lengths differ: {len(corpus_g)} vs {len(corpus_p)}")
    result: Dict[Primitive, float] = {}
    for prim in Primitive:
        instances = sum(count(prim, g) for g in corpus_g)
        if instances == 0:
            continue
        errors = sum(abs(count(prim, g) - count(prim, p)) for g, p in zip(corpus_g, corpus_p))
        result[prim] = errors / instances
    return result


def segment_f1(gt: StateTrack, pred: StateTrack, channel: str) -> float:
    truth = np.asarray(gt.channel(channel), dtype=bool)
    guess = np.asarray(pred.channel(channel), dtype=bool)
    if truth.shape != guess.shape:
        raise MetricError(f"track lengths differ: {truth.size} vs {guess.size}")
    tp = int(np.sum(truth & guess))
    fp = int(np.sum(~truth & guess))
    fn = int(np.sum(truth & ~guess))
    if tp + fp + fn == 0:
        # no positives anywhere: the tracks agree
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def oversegmentation_ratio(g: PrimitiveSequence, p: PrimitiveSequence) -> float:
    reference = len(dedup(g))
    if reference == 0:
        raise MetricError("undefined oversegmentation ratio: empty ground truth")
    return len(dedup(p)) / reference


def evaluate_video(
    g: PrimitiveSequence,
    p: PrimitiveSequence,
    gt_track: Optional[StateTrack] = None,
    pred_track: Optional[StateTrack] = None,
    impairment_level: Optional[ImpairmentLevel] = None,
) -> MetricReport:
    """Every per-video metric; segment F1 only when both tracks are given."""
    motion_f1 = grasp_f1 = None
    if gt_track is not None and pred_track is not None:
        motion_f1 = segment_f1(gt_track, pred_track, "motion")
        grasp_f1 = segment_f1(gt_track, pred_track, "grasp")
    ratio = oversegmentation_ratio(g, p) if len(p) else None
    return MetricReport(
        video_id=g.source_id or p.source_id,
        impairment_level=impairment_level,
        edit_score=edit_score(g, p),
        action_error_rate=action_error_rate(g, p),
        relative_counting_error=relative_counting_error(g, p),
        per_primitive_rce=per_primitive_rce([g], [p]),
        motion_f1=motion_f1,
        grasp_f1=grasp_f1,
        oversegmentation_ratio=ratio,
    )


def _mean_sem(values: pd.Series) -> Tuple[float, float]:
    values = values.dropna().astype(float)
    if values.empty:
        return math.nan, math.nan
    if len(values) == 1:
        return float(values.iloc[0]), math.nan
    return float(values.mean()), float(stats.sem(values))


def summarize(reports: Iterable[MetricReport], group_by: bool = True) -> pd.DataFrame:
    """Mean and standard error of each metric, overall and per impairment level."""
    return summarize_frame(pd.DataFrame([r.row() for r in reports]), group_by)


def summarize_frame(frame: pd.DataFrame, group_by: bool = True) -> pd.DataFrame:
    """``summarize`` over rows already in ``MetricReport.row()`` layout."""
    if frame.empty:
        return pd.DataFrame(columns=["group", "n"])

    groups: List[Tuple[str, pd.DataFrame]] = [("all", frame)]
    if group_by:
        for level in ImpairmentLevel:
            subset = frame[frame["impairment_level"] == level.value]
            if not subset.empty:
                groups.append((level.value, subset))

    metric_names = [c for c in frame.columns if c not in ("video_id", "impairment_level")]
    rows = []
    for name, subset in groups:
        row: Dict[str, object] = {"group": name, "n": len(subset)}
        for metric in metric_names:
            mean, sem = _mean_sem(subset[metric])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_sem"] = sem
        rows.append(row)
    return pd.DataFrame(rows)


def wilson_interval(successes: int, total: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a Bernoulli rate."""
    if total <= 0:
        return 0.0, 1.0
    if not 0 <= successes <= total:
        raise MetricError(f"successes {successes} outside [0, {total}]")
    z = float(stats.norm.ppf(0.5 + confidence / 2))
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    margin = z * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total)) / denom
    # the bounds touch 0 and 1 exactly at the extremes; rounding must not pull them inside p
    low = 0.0 if successes == 0 else max(0.0, min(p, center - margin))
    high = 1.0 if successes == total else min(1.0, max(p, center + margin))
    return low, high
