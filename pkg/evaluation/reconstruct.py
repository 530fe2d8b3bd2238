"""Motion/grasp tracks to primitive sequences, plus the Omniscient and Markov baselines."""

import logging
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from models.config import ReconstructionConfig
from models.errors import PreconditionError, StochasticMatrixError
from models.schemas import (
    JOINT_STATES,
    FrameAnnotation,
    Hand,
    Primitive,
    PrimitiveSequence,
    SegmentGrid,
    SegmentState,
    StateTrack,
    dedup,
)

logger = logging.getLogger(__name__)

_STOCHASTIC_TOL = 1e-9
_INITIAL_STATE = SegmentState(motion=False, grasp=False).index


def _label_for(state: SegmentState) -> Primitive:
    if state.motion and state.grasp:
        return Primitive.TRANSPORT
    if state.grasp:
        return Primitive.STABILIZE
    if not state.motion:
        return Primitive.IDLE
    raise ValueError("moving empty-hand segments are resolved per run")


def states_to_primitives(
    track: StateTrack, cfg: ReconstructionConfig = ReconstructionConfig()
) -> PrimitiveSequence:
    """Per-segment labels (not de-duplicated).

    A maximal moving, empty-hand run is Reach when any grasping segment starts
    within ``terminal_grasp_window_s`` of the run start, otherwise Reposition.
    """
    segments = track.segments
    labels: List[Primitive] = []
    k = 0
    while k < len(segments):
        state = segments[k]
        if not (state.motion and not state.grasp):
            labels.append(_label_for(state))
            k += 1
            continue
        run_end = k
        while run_end < len(segments) and segments[run_end].motion and not segments[run_end].grasp:
            run_end += 1
        run_start_s = k * cfg.segment_duration_s
        label = Primitive.REPOSITION
        for j in range(run_end, len(segments)):
            if j * cfg.segment_duration_s - run_start_s > cfg.terminal_grasp_window_s + 1e-9:
                break
            if segments[j].grasp:
                label = Primitive.REACH
                break
        labels.extend([label] * (run_end - k))
        k = run_end
    return PrimitiveSequence(items=tuple(labels))


def annotation_track(ann: FrameAnnotation, grid: SegmentGrid, hand: Hand = Hand.RIGHT) -> StateTrack:
    """Ground-truth motion/grasp per segment, read at each segment's midpoint frame."""
    if ann.frame_count < grid.total_native_frames:
        raise PreconditionError(
            f"annotation has {ann.frame_count} frames, video needs {grid.total_native_frames}"
        )
    return StateTrack(
        hand=hand,
        segments=tuple(ann.label_at(grid.midpoint_frame(k)).state for k in range(grid.segment_count)),
    )


def ground_truth_sequence(ann: FrameAnnotation, source_id: str = "") -> PrimitiveSequence:
    return dedup(PrimitiveSequence(items=ann.labels, source_id=source_id))


def omniscient_baseline(
    ann: FrameAnnotation,
    grid: SegmentGrid,
    cfg: ReconstructionConfig = ReconstructionConfig(),
    source_id: str = "",
) -> PrimitiveSequence:
    track = annotation_track(ann, grid, ann.hand)
    per_segment = states_to_primitives(track, cfg.for_grid(grid))
    return dedup(per_segment.model_copy(update={"source_id": source_id}))


class TransitionModel(BaseModel):
    """First-order chain over the four joint (motion, grasp) states, indexed by ``SegmentState.index``."""

    model_config = ConfigDict(frozen=True)

    matrix: Tuple[Tuple[float, ...], ...]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "TransitionModel":
        return cls(matrix=tuple(tuple(float(v) for v in row) for row in np.asarray(array)))

    def as_array(self) -> np.ndarray:
        array = np.asarray(self.matrix, dtype=float)
        n = len(JOINT_STATES)
        if array.shape != (n, n):
            raise StochasticMatrixError(f"transition matrix must be {n}x{n}, got {array.shape}")
        if np.any(array < 0):
            raise StochasticMatrixError("transition matrix has negative entries")
        if not np.allclose(array.sum(axis=1), 1.0, rtol=0.0, atol=_STOCHASTIC_TOL):
            raise StochasticMatrixError(f"rows do not sum to 1: {array.sum(axis=1).tolist()}")
        return array


def video_seed(seed: int, video_index: int) -> int:
    return int(np.random.SeedSequence([seed, video_index]).generate_state(1)[0])


def sample_states(model: TransitionModel, length: int, rng: np.random.Generator) -> List[int]:
    """Joint-state path of ``length`` segments starting at (still, empty)."""
    cumulative = np.cumsum(model.as_array(), axis=1)
    draws = rng.random(max(length - 1, 0))
    path = [_INITIAL_STATE]
    for u in draws:
        row = cumulative[path[-1]]
        path.append(int(min(np.searchsorted(row, u, side="right"), len(row) - 1)))
    return path[:length]


def markov_baseline(
    model: TransitionModel,
    segment_count: int,
    seed: int,
    cfg: ReconstructionConfig = ReconstructionConfig(),
    source_id: str = "",
    hand: Hand = Hand.RIGHT,
) -> PrimitiveSequence:
    if segment_count < 1:
        raise PreconditionError("markov baseline needs at least one segment")
    rng = np.random.default_rng(seed)
    path = sample_states(model, segment_count, rng)
    track = StateTrack(hand=hand, segments=tuple(SegmentState.from_index(i) for i in path))
    per_segment = states_to_primitives(track, cfg)
    return dedup(per_segment.model_copy(update={"source_id": source_id}))


def estimate_transitions(tracks: Sequence[StateTrack]) -> TransitionModel:
    """Maximum-likelihood joint-state transitions; unseen states become self-loops."""
    if not tracks:
        raise PreconditionError("cannot estimate transitions from an empty corpus")
    n = len(JOINT_STATES)
    counts = np.zeros((n, n), dtype=float)
    for track in tracks:
        indices = [s.index for s in track.segments]
        for a, b in zip(indices, indices[1:]):
            counts[a, b] += 1
    totals = counts.sum(axis=1)
    for row in np.flatnonzero(totals == 0):
        counts[row, row] = 1.0
        totals[row] = 1.0
    logger.debug("Estimated transitions from %d tracks", len(tracks))
    return TransitionModel.from_array(counts / totals[:, None])
