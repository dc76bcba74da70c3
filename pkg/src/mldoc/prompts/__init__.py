"""Versioned prompt text assets.

Prompt wording is part of the engine's external behavior, so the texts live
as files under a version directory and are loaded verbatim. Changing a
prompt means adding a new version directory, not editing v1 in place.
"""

from __future__ import annotations

from importlib import resources

from ..errors import ConfigurationError

PROMPT_VERSION = "v1"

_NAMES = ("doc2query", "doc2query_page", "answer", "answer_page", "judge")


def get_prompt(name: str, version: str = PROMPT_VERSION) -> str:
    if name not in _NAMES:
        raise ConfigurationError(f"unknown prompt name: {name!r}")
    try:
        root = resources.files(__package__)
        return (root / version / f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"unknown prompt version: {version!r}") from None


def prompt_names() -> tuple[str, ...]:
    return _NAMES
