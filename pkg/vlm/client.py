"""Request/retry loop and per-video transcripts."""

import asyncio
import json
import logging
from pathlib import Path
from typing import Awaitable, Callable, List, Optional, Sequence

import aiofiles
from pydantic import BaseModel, ConfigDict

from models.config import BackendConfig
from models.errors import BackendTransportError, PreconditionError, TransientBackendError

from .backends import BackendRequest, VLMBackend

logger = logging.getLogger(__name__)


class TranscriptRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: str
    attempt: int = 0
    digest: str
    prompt_id: str = ""
    prompt: str
    frame_count: int
    response: Optional[str] = None
    latency_s: Optional[float] = None
    error: Optional[str] = None


class Transcript:
    """Append-only request log for one video.

    Records are flushed sorted by ``(key, attempt)`` so concurrent segments
    produce the same file on every run.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.records: List[TranscriptRecord] = []
        # replies a parser rejected and a default replaced
        self.unparseable = 0

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TranscriptRecord) -> None:
        self.records.append(record)

    def ordered(self) -> List[TranscriptRecord]:
        return sorted(self.records, key=lambda r: (r.key, r.attempt))

    def prompts(self) -> List[str]:
        return [r.prompt for r in self.ordered() if r.response is not None]

    async def flush(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(path, "w") as f:
            for record in self.ordered():
                await f.write(json.dumps(record.model_dump(mode="json"), sort_keys=True) + "\n")

    @classmethod
    async def load(cls, path: Path) -> "Transcript":
        transcript = cls(path.stem)
        async with aiofiles.open(path, "r") as f:
            async for line in f:
                if line.strip():
                    transcript.append(TranscriptRecord.model_validate_json(line))
        return transcript


Sleeper = Callable[[float], Awaitable[None]]


async def query(
    backend: VLMBackend,
    request: BackendRequest,
    transcript: Optional[Transcript] = None,
    key: str = "",
    max_retries: int = 4,
    backoff_base_s: float = 1.0,
    sleep: Sleeper = asyncio.sleep,
) -> str:
    """Send one request; transient failures are retried with exponential backoff.

    Every attempt, failed or not, lands in the transcript.
    """
    if not request.frames:
        raise PreconditionError("query needs at least one frame")
    if not request.prompt.strip():
        raise PreconditionError("query needs a non-empty prompt")

    digest = request.digest
    for attempt in range(max_retries + 1):
        base = dict(
            key=key or digest,
            attempt=attempt,
            digest=digest,
            prompt_id=request.prompt_id,
            prompt=request.prompt,
            frame_count=len(request.frames),
        )
        try:
            response = await backend.complete(request)
        except TransientBackendError as e:
            if transcript is not None:
                transcript.append(TranscriptRecord(**base, error=f"transient: {e}"))
            if attempt == max_retries:
                raise BackendTransportError(
                    f"{max_retries + 1} attempts failed for {request.prompt_id or digest[:12]}: {e}",
                    status=e.status,
                ) from e
            delay = backoff_base_s * 2 ** attempt
            logger.warning("Transient backend error on %s (attempt %d), retrying in %.1fs: %s",
                           key or digest[:12], attempt + 1, delay, e)
            await sleep(delay)
            continue
        except Exception as e:
            if transcript is not None:
                transcript.append(TranscriptRecord(**base, error=f"{type(e).__name__}: {e}"))
            raise
        if transcript is not None:
            transcript.append(TranscriptRecord(**base, response=response.text, latency_s=response.latency_s))
        return response.text
    raise AssertionError("unreachable")


class VLMClient:
    """Backend plus retry policy and a shared in-flight bound."""

    def __init__(self, backend: VLMBackend, config: BackendConfig = BackendConfig(),
                 concurrency: int = 8, sleep: Sleeper = asyncio.sleep):
        self.backend = backend
        self.config = config
        self.semaphore = asyncio.Semaphore(concurrency)
        self.sleep = sleep

    async def ask(
        self,
        prompt: str,
        frames: Sequence[bytes],
        transcript: Optional[Transcript] = None,
        key: str = "",
        prompt_id: str = "",
    ) -> str:
        request = BackendRequest(
            frames=tuple(frames),
            prompt=prompt,
            prompt_id=prompt_id,
            max_output_tokens=self.config.max_output_tokens,
        )
        async with self.semaphore:
            return await query(
                self.backend,
                request,
                transcript,
                key=key,
                max_retries=self.config.max_retries,
                backoff_base_s=self.config.backoff_base_s,
                sleep=self.sleep,
            )
