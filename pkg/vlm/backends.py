"""VLM backends: prompt + frames in, text out.

Decoding is greedy everywhere: temperature 0, no nucleus sampling, one beam.
"""

import base64
import hashlib
import json
import logging
import os
import time
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import anthropic
import openai
from pydantic import BaseModel, ConfigDict, Field, field_validator

from models.config import BackendConfig
from models.errors import BackendProtocolError, ConfigError, TransientBackendError

logger = logging.getLogger(__name__)


def frame_digest(frame: bytes) -> str:
    return hashlib.sha256(frame).hexdigest()


def request_digest(prompt: str, frames: Sequence[bytes]) -> str:
    """sha256 over the prompt and the ordered digests of the frame contents."""
    h = hashlib.sha256(prompt.encode("utf-8"))
    for frame in frames:
        h.update(b"\x00")
        h.update(frame_digest(frame).encode("ascii"))
    return h.hexdigest()


class BackendRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    frames: Tuple[bytes, ...]
    prompt: str
    prompt_id: str = ""
    max_output_tokens: int = Field(default=512, ge=1)
    temperature: float = 0.0
    top_p: Optional[float] = None
    num_beams: int = 1

    @field_validator("temperature")
    @classmethod
    def _greedy(cls, value):
        if value != 0.0:
            raise ValueError("decoding is greedy: temperature must be 0")
        return value

    @property
    def digest(self) -> str:
        return request_digest(self.prompt, self.frames)


class BackendResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str
    latency_s: float = 0.0


def _b64(frame: bytes) -> str:
    return base64.b64encode(frame).decode("ascii")


class VLMBackend(ABC):
    name = "abstract"

    def identity(self) -> Dict[str, Any]:
        return {"provider": self.name}

    @abstractmethod
    async def complete(self, request: BackendRequest) -> BackendResponse:
        """Return the model reply verbatim or raise a backend error."""


class OpenAIChatBackend(VLMBackend):
    """Any OpenAI-compatible chat-completions endpoint (vLLM, TGI, hosted)."""

    name = "openai"

    def __init__(self, config: BackendConfig, api_key: str, client: Optional[openai.AsyncOpenAI] = None):
        self.config = config
        self.client = client or openai.AsyncOpenAI(
            api_key=api_key, base_url=config.base_url, timeout=config.timeout_s, max_retries=0
        )

    def identity(self) -> Dict[str, Any]:
        return {"provider": self.name, "model": self.config.model, "base_url": self.config.base_url}

    @staticmethod
    def build_messages(request: BackendRequest) -> List[Dict[str, Any]]:
        content: List[Dict[str, Any]] = [
            {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{_b64(frame)}"}}
            for frame in request.frames
        ]
        content.append({"type": "text", "text": request.prompt})
        return [{"role": "user", "content": content}]

    async def complete(self, request: BackendRequest) -> BackendResponse:
        start = time.perf_counter()
        try:
            response = await self.client.chat.completions.create(
                model=self.config.model,
                messages=self.build_messages(request),
                max_tokens=request.max_output_tokens,
                temperature=request.temperature,
                n=request.num_beams,
            )
        except (openai.RateLimitError, openai.InternalServerError) as e:
            raise TransientBackendError(str(e), status=e.status_code) from e
        except openai.APIConnectionError as e:  # includes timeouts
            raise TransientBackendError(str(e)) from e
        except openai.APIStatusError as e:
            raise BackendProtocolError(f"HTTP {e.status_code}: {e.message}") from e

        if not response.choices or response.choices[0].message.content is None:
            raise BackendProtocolError("chat completion returned no message content")
        return BackendResponse(
            text=response.choices[0].message.content, latency_s=time.perf_counter() - start
        )


class AnthropicBackend(VLMBackend):
    name = "anthropic"

    def __init__(self, config: BackendConfig, api_key: str, client: Optional[anthropic.AsyncAnthropic] = None):
        self.config = config
        self.client = client or anthropic.AsyncAnthropic(
            api_key=api_key, base_url=config.base_url, timeout=config.timeout_s, max_retries=0
        )

    def identity(self) -> Dict[str, Any]:
        return {"provider": self.name, "model": self.config.model}

    @staticmethod
    def build_messages(request: BackendRequest) -> List[Dict[str, Any]]:
        content: List[Dict[str, Any]] = [
            {"type": "image", "source": {"type": "base64", "media_type": "image/jpeg", "data": _b64(frame)}}
            for frame in request.frames
        ]
        content.append({"type": "text", "text": request.prompt})
        return [{"role": "user", "content": content}]

    async def complete(self, request: BackendRequest) -> BackendResponse:
        start = time.perf_counter()
        try:
            response = await self.client.messages.create(
                model=self.config.model,
                max_tokens=request.max_output_tokens,
                temperature=request.temperature,
                messages=self.build_messages(request),
            )
        except (anthropic.RateLimitError, anthropic.InternalServerError) as e:
            raise TransientBackendError(str(e), status=e.status_code) from e
        except anthropic.APIConnectionError as e:
            raise TransientBackendError(str(e)) from e
        except anthropic.APIStatusError as e:
            raise BackendProtocolError(f"HTTP {e.status_code}: {e.message}") from e

        chunks = [block.text for block in response.content if getattr(block, "type", None) == "text"]
        if not chunks:
            raise BackendProtocolError("messages response contained no text block")
        return BackendResponse(text="\n".join(chunks), latency_s=time.perf_counter() - start)


Responder = Callable[[BackendRequest], str]


class MockBackend(VLMBackend):
    """Scripted replies for tests and dry runs.

    Lookup order: exact request digest, then the first ``match`` substring
    found in the prompt, then ``responder``, then ``default``.
    """

    name = "mock"

    def __init__(
        self,
        responses: Optional[Dict[str, str]] = None,
        rules: Optional[Sequence[Tuple[str, str]]] = None,
        responder: Optional[Responder] = None,
        default: Optional[str] = None,
    ):
        self.responses = dict(responses or {})
        self.rules = list(rules or [])
        self.responder = responder
        self.default = default
        self.requests: List[BackendRequest] = []

    @classmethod
    def from_script(cls, path: Path, default: Optional[str] = None) -> "MockBackend":
        """JSONL records of ``{"digest"|"match": ..., "response": ...}``."""
        responses: Dict[str, str] = {}
        rules: List[Tuple[str, str]] = []
        try:
            with open(path, "r") as f:
                for line_number, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if "digest" in record:
                        responses[record["digest"]] = record["response"]
                    elif "match" in record:
                        rules.append((record["match"], record["response"]))
                    elif "default" in record:
                        default = record["default"]
                    else:
                        raise ConfigError(f"{path}:{line_number}: record needs digest, match or default")
        except FileNotFoundError as e:
            raise ConfigError(f"mock script not found: {path}") from e
        except (json.JSONDecodeError, KeyError) as e:
            raise ConfigError(f"mock script {path} is malformed: {e}") from e
        return cls(responses=responses, rules=rules, default=default)

    async def complete(self, request: BackendRequest) -> BackendResponse:
        self.requests.append(request)
        digest = request.digest
        if digest in self.responses:
            return BackendResponse(text=self.responses[digest])
        for needle, response in self.rules:
            if needle in request.prompt:
                return BackendResponse(text=response)
        if self.responder is not None:
            return BackendResponse(text=self.responder(request))
        if self.default is not None:
            return BackendResponse(text=self.default)
        raise BackendProtocolError(f"no scripted response for request {digest[:12]}")


class ReplayBackend(VLMBackend):
    """Answers from a previous run's transcript, keyed by request digest."""

    name = "replay"

    def __init__(self, responses: Dict[str, str], source: Optional[Path] = None):
        self.responses = responses
        self.source = source

    def identity(self) -> Dict[str, Any]:
        return {"provider": self.name, "transcript": str(self.source) if self.source else None}

    @classmethod
    def from_transcripts(cls, path: Path) -> "ReplayBackend":
        path = Path(path)
        files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
        if not files or not all(f.exists() for f in files):
            raise ConfigError(f"no transcript found at {path}")
        responses: Dict[str, str] = {}
        for file in files:
            with open(file, "r") as f:
                for line in f:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if record.get("response") is not None:
                        responses[record["digest"]] = record["response"]
        logger.info("Replay backend loaded %d responses from %s", len(responses), path)
        return cls(responses, source=path)

    async def complete(self, request: BackendRequest) -> BackendResponse:
        try:
            return BackendResponse(text=self.responses[request.digest])
        except KeyError:
            raise BackendProtocolError(f"request {request.digest[:12]} not in replayed transcript") from None


def build_backend(config: BackendConfig) -> VLMBackend:
    if config.provider == "mock":
        if config.mock_script is None:
            return MockBackend(default="No.")
        return MockBackend.from_script(config.mock_script)
    if config.provider == "replay":
        if config.replay_transcript is None:
            raise ConfigError("replay backend needs backend.replay_transcript")
        return ReplayBackend.from_transcripts(config.replay_transcript)

    api_key = os.getenv(config.api_key_env)
    if not api_key:
        raise ConfigError(f"{config.api_key_env} not found in environment variables")
    if config.provider == "anthropic":
        return AnthropicBackend(config, api_key)
    return OpenAIChatBackend(config, api_key)
