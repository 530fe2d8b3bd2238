"""Per-frame ground-truth annotation files (CSV: frame_index, primitive, hand)."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from models.errors import ManifestError
from models.schemas import FrameAnnotation, Hand, Primitive

logger = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ("frame_index", "primitive", "hand")


def load_annotation(path: Path, hand: Hand, native_fps: float) -> FrameAnnotation:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"primitive": str, "hand": str})
    except FileNotFoundError as e:
        raise ManifestError(f"annotation file not found: {path}") from e
    missing = [c for c in ANNOTATION_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"annotation {path} lacks columns: {', '.join(missing)}")

    rows = frame[frame["hand"].str.strip().str.lower() == hand.value].sort_values("frame_index")
    if rows.empty:
        raise ManifestError(f"annotation {path} has no labels for the {hand.value} hand")
    indices = rows["frame_index"].to_numpy()
    if not np.array_equal(indices, np.arange(len(indices))):
        raise ManifestError(f"annotation {path}: {hand.value} hand frames must be 0..N-1 with one label each")
    try:
        labels = tuple(Primitive.parse(p) for p in rows["primitive"])
    except ValueError as e:
        raise ManifestError(f"annotation {path}: {e}") from e
    return FrameAnnotation(labels=labels, native_fps=native_fps, hand=hand)
