"""Frame extraction through an external ffmpeg child process, with an on-disk cache."""

import asyncio
import hashlib
import json
import logging
import os
import shlex
import uuid
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import aiofiles
import numpy as np

from models.config import ExtractionConfig
from models.errors import ExtractionError, PreconditionError
from models.schemas import Rect, SegmentGrid

logger = logging.getLogger(__name__)


def sample_indices(grid: SegmentGrid, segment: int) -> List[int]:
    return grid.sample_indices(segment)


def uniform_indices(start_frame: int, end_frame: int, n: int) -> List[int]:
    """``n`` native frame indices evenly spread over ``[start_frame, end_frame]``."""
    if n < 1 or end_frame < start_frame:
        raise PreconditionError(f"cannot sample {n} frames from [{start_frame}, {end_frame}]")
    return [int(i) for i in np.floor(np.linspace(start_frame, end_frame, n) + 0.5)]


class FrameSource(ABC):
    """Anything that can turn (video, frame index, optional crop) into encoded image bytes."""

    @abstractmethod
    async def frames(
        self,
        video_path: Path,
        indices: Sequence[int],
        native_fps: float,
        rects: Optional[Sequence[Optional[Rect]]] = None,
    ) -> List[bytes]:
        ...


async def _run(args: List[str]) -> tuple:
    try:
        proc = await asyncio.create_subprocess_exec(
            *args, stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE
        )
    except FileNotFoundError as e:
        raise ExtractionError(f"{args[0]} not found on PATH") from e
    stdout, stderr = await proc.communicate()
    return proc.returncode, stdout, stderr.decode("utf-8", errors="replace")


class FrameExtractor(FrameSource):
    def __init__(self, config: ExtractionConfig = ExtractionConfig()):
        self.config = config
        self.semaphore = asyncio.Semaphore(config.max_concurrency)
        self.spawned = 0
        self._digests: Dict[Path, str] = {}

    async def video_digest(self, video_path: Path) -> str:
        video_path = Path(video_path).resolve()
        if video_path not in self._digests:
            if not video_path.exists():
                raise ExtractionError(f"video not found: {video_path}")
            self._digests[video_path] = await asyncio.to_thread(_file_sha256, video_path)
        return self._digests[video_path]

    def _command(self, video_path: Path, time_s: float, output: Path, rect: Optional[Rect]) -> List[str]:
        values = {"{input}": str(video_path), "{time}": f"{time_s:.6f}", "{output}": str(output)}
        args: List[str] = []
        for token in shlex.split(self.config.command):
            if token == "{crop}":
                if rect is not None:
                    args.extend(["-vf", f"crop={rect.width}:{rect.height}:{rect.x}:{rect.y}"])
                continue
            for placeholder, value in values.items():
                token = token.replace(placeholder, value)
            args.append(token)
        return args

    async def _extract_one(
        self, video_path: Path, digest: str, index: int, native_fps: float, rect: Optional[Rect]
    ) -> Path:
        if index < 0:
            raise ExtractionError(f"negative frame index {index}")
        out = self.config.cache_dir / digest[:16] / f"{index:07d}_{rect.key() if rect else 'full'}.jpg"
        if out.exists():
            return out
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(f"{out.stem}.{uuid.uuid4().hex[:8]}.tmp.jpg")
        async with self.semaphore:
            self.spawned += 1
            returncode, _, stderr = await _run(self._command(video_path, index / native_fps, tmp, rect))
        if returncode != 0 or not tmp.exists() or tmp.stat().st_size == 0:
            tmp.unlink(missing_ok=True)
            logger.error("Frame extraction failed for %s frame %d: %s", video_path, index, stderr.strip())
            raise ExtractionError(
                f"could not extract frame {index} from {video_path} (exit {returncode})", diagnostics=stderr
            )
        os.replace(tmp, out)
        return out

    async def extract_frames(
        self,
        video_path: Path,
        indices: Sequence[int],
        native_fps: float,
        rects: Optional[Sequence[Optional[Rect]]] = None,
    ) -> List[Path]:
        """Cached image files for ``indices``, in index order."""
        rects = list(rects) if rects is not None else [None] * len(indices)
        if len(rects) != len(indices):
            raise PreconditionError("one crop rectangle per frame index is required")
        digest = await self.video_digest(video_path)
        return list(
            await asyncio.gather(
                *(self._extract_one(Path(video_path), digest, i, native_fps, r) for i, r in zip(indices, rects))
            )
        )

    async def frames(self, video_path, indices, native_fps, rects=None) -> List[bytes]:
        paths = await self.extract_frames(video_path, indices, native_fps, rects)
        images = []
        for path in paths:
            async with aiofiles.open(path, "rb") as f:
                images.append(await f.read())
        return images

    async def probe_duration(self, video_path: Path) -> float:
        args = [t.replace("{input}", str(video_path)) for t in shlex.split(self.config.probe_command)]
        returncode, stdout, stderr = await _run(args)
        if returncode != 0:
            raise ExtractionError(f"ffprobe failed on {video_path} (exit {returncode})", diagnostics=stderr)
        try:
            return float(json.loads(stdout)["format"]["duration"])
        except (ValueError, KeyError) as e:
            raise ExtractionError(f"ffprobe reported no duration for {video_path}", diagnostics=stderr) from e


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
