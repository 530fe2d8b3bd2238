"""Typed view of ``config.yaml``.

Precedence is flags > config file > the defaults declared here.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AppInfo(_Section):
    name: str = "RehabAgentLab"
    version: str = "1.0.0"


class BackendConfig(_Section):
    provider: Literal["openai", "anthropic", "mock", "replay"] = "openai"
    base_url: Optional[str] = None
    model: str = "Qwen/Qwen2.5-VL-32B-Instruct"
    api_key_env: str = "VLM_API_KEY"
    max_output_tokens: int = Field(default=512, ge=1)
    timeout_s: float = Field(default=120.0, gt=0)
    max_retries: int = Field(default=4, ge=0)
    backoff_base_s: float = Field(default=1.0, ge=0)
    mock_script: Optional[Path] = None
    replay_transcript: Optional[Path] = None


class GridConfig(_Section):
    sampling_rate_hz: float = Field(default=15.0, gt=0)
    frames_per_segment: int = Field(default=8, ge=1)

    @classmethod
    def parse(cls, text: str) -> "GridConfig":
        """``"15:8"`` or ``"15x8"`` -> f=15, n=8."""
        for sep in (":", "x"):
            if sep in text:
                f, n = text.split(sep, 1)
                return cls(sampling_rate_hz=float(f), frames_per_segment=int(n))
        raise ConfigError(f"grid must look like f:n, got {text!r}")

    @property
    def label(self) -> str:
        return f"f{self.sampling_rate_hz:g}_n{self.frames_per_segment}"


class ReconstructionConfig(_Section):
    terminal_grasp_window_s: float = Field(default=2.0, gt=0)
    # overwritten per grid by the agents
    segment_duration_s: float = Field(default=8 / 15, gt=0)

    def for_grid(self, grid) -> "ReconstructionConfig":
        return self.model_copy(update={"segment_duration_s": grid.segment_duration_s})


class CropConfig(_Section):
    extension_factor: float = 0.7
    min_confidence: float = Field(default=0.9, gt=0, le=1)
    quick_move_px: float = Field(default=15.0, gt=0)
    still_px: float = Field(default=3.0, gt=0)
    crop_size_px: int = Field(default=224, gt=0)
    image_width: int = Field(default=1088, gt=0)
    image_height: int = Field(default=704, gt=0)

    @model_validator(mode="after")
    def _fits(self):
        if self.crop_size_px > min(self.image_width, self.image_height):
            raise ValueError("crop_size_px must not exceed the image dimensions")
        return self


class ExtractionConfig(_Section):
    command: str = (
        "ffmpeg -nostdin -loglevel error -ss {time} -i {input} -frames:v 1 {crop} -q:v 2 -y {output}"
    )
    probe_command: str = (
        "ffprobe -v quiet -print_format json -show_format {input}"
    )
    cache_dir: Path = Path(".frame_cache")
    max_concurrency: int = Field(default=4, ge=1)


class RuntimeConfig(_Section):
    parallelism: int = Field(default=4, ge=1)
    request_concurrency: int = Field(default=8, ge=1)
    seed: int = 0
    output_dir: Path = Path("runs/latest")


class PrimitivesConfig(_Section):
    grid: GridConfig = GridConfig()
    sweep_grids: List[str] = Field(
        default_factory=lambda: [
            "1:1", "2:2", "4:4", "8:8", "15:15", "30:30", "2:1", "4:2",
            "8:4", "15:8", "30:15", "4:1", "8:2", "15:4", "30:8", "8:1",
        ]
    )
    unparseable_default: Literal["no"] = "no"


class PrimRsConfig(_Section):
    grid: GridConfig = GridConfig(sampling_rate_hz=15.0, frames_per_segment=4)
    still_run_length: int = Field(default=3, ge=1)
    terminal_still_window: int = Field(default=3, ge=1)


class FmaConfig(_Section):
    dense_grid: GridConfig = GridConfig(sampling_rate_hz=30.0, frames_per_segment=8)
    uniform_frames: int = Field(default=8, ge=1)
    touch_target: int = Field(default=5, ge=1)
    speed_full_below_s: float = Field(default=2.0, gt=0)
    speed_partial_below_s: float = Field(default=6.0, gt=0)
    clip_warning_s: float = Field(default=10.0, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.speed_partial_below_s < self.speed_full_below_s:
            raise ValueError("speed thresholds must be non-decreasing")
        return self


class ActivityConfig(_Section):
    prompt_variant: Literal["direct", "optimized"] = "optimized"
    frames: int = Field(default=8, ge=1)


class AppConfig(_Section):
    app: AppInfo = AppInfo()
    backend: BackendConfig = BackendConfig()
    primitives: PrimitivesConfig = PrimitivesConfig()
    primrs: PrimRsConfig = PrimRsConfig()
    reconstruction: ReconstructionConfig = ReconstructionConfig()
    crop: CropConfig = CropConfig()
    extraction: ExtractionConfig = ExtractionConfig()
    runtime: RuntimeConfig = RuntimeConfig()
    fma: FmaConfig = FmaConfig()
    activity: ActivityConfig = ActivityConfig()

    def digest(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _deep_merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> AppConfig:
    """Load and validate a config file, then apply dotted-section overrides."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                data = yaml.safe_load(f) or {}
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config file is not valid YAML: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping at top level")
    if overrides:
        data = _deep_merge(data, overrides)
    try:
        return AppConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
