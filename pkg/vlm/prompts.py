"""Prompt catalogs: versioned YAML templates rendered with jinja2."""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from jinja2 import Environment, StrictUndefined, TemplateError
from pydantic import BaseModel, ConfigDict

from models.errors import ConfigError
from models.schemas import Hand

logger = logging.getLogger(__name__)

CATALOG_DIR = Path(__file__).parent / "catalogs"
CATALOG_NAMES = ("activity", "primitives", "primrs", "probe", "fma")

CENTER_HAND = "the hand in the center"

_env = Environment(undefined=StrictUndefined, autoescape=False, keep_trailing_newline=False)


class PromptSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    template_id: str
    text: str
    placeholders: Dict[str, Any] = {}


class PromptCatalog(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    version: int
    templates: Dict[str, str]

    def render(self, template_id: str, **values: Any) -> PromptSpec:
        if template_id not in self.templates:
            raise ConfigError(f"catalog {self.name!r} has no template {template_id!r}")
        try:
            text = _env.from_string(self.templates[template_id]).render(**values).strip()
        except TemplateError as e:
            raise ConfigError(f"{self.name}.{template_id}: {e}") from e
        if "{{" in text or "{%" in text:
            raise ConfigError(f"{self.name}.{template_id}: unresolved placeholder in rendered prompt")
        return PromptSpec(template_id=f"{self.name}.{template_id}", text=text, placeholders=values)


@lru_cache(maxsize=None)
def load_catalog(name: str, directory: Optional[Path] = None) -> PromptCatalog:
    path = (directory or CATALOG_DIR) / f"{name}.yaml"
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"prompt catalog not found: {path}") from e
    try:
        catalog = PromptCatalog.model_validate(data)
    except ValueError as e:
        raise ConfigError(f"prompt catalog {path} is invalid: {e}") from e
    logger.debug("Loaded catalog %s v%d (%d templates)", catalog.name, catalog.version, len(catalog.templates))
    return catalog


def catalog_versions(directory: Optional[Path] = None) -> Dict[str, int]:
    return {name: load_catalog(name, directory).version for name in CATALOG_NAMES}


def hand_reference(hand: Hand, cropped: bool, center: str = CENTER_HAND) -> str:
    """How a prompt names the target hand; cropped frames show it in the middle."""
    return center if cropped else f"the patient's {hand.label} hand"
