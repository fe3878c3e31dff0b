"""Named prompt templates with {system}/{history}/{context}/{question} slots.

Defaults ship with the package; a directory of .txt files with the same
naming convention can override or extend them.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import UnknownTemplate

PLACEHOLDERS = ("{system}", "{history}", "{context}", "{question}")
BUILTIN_TEMPLATES = ("ANSWER", "REPHRASE", "DECOMPOSE", "AGGREGATE")


class TemplateStore:
    def __init__(self, override_dir=None):
        self._cache: dict[str, str] = {}
        self._override_dir = Path(override_dir) if override_dir else None

    def get(self, template_id: str) -> str:
        if template_id in self._cache:
            return self._cache[template_id]
        text = None
        if self._override_dir is not None:
            candidate = self._override_dir / f"{template_id}.txt"
            if candidate.is_file():
                text = candidate.read_text("utf-8")
        if text is None and template_id in BUILTIN_TEMPLATES:
            text = (
                resources.files("ragcore")
                .joinpath(f"templates/{template_id}.txt")
                .read_text("utf-8")
            )
        if text is None:
            raise UnknownTemplate(f"no template named {template_id!r}")
        self._cache[template_id] = text
        return text

    def render(self, template_id: str, *, system: str = "", history: str = "",
               context: str = "", question: str = "") -> str:
        """Fill the four placeholders; literal replacement, no format engine."""
        text = self.get(template_id)
        for name, value in (("system", system), ("history", history),
                            ("context", context), ("question", question)):
            text = text.replace("{" + name + "}", value)
        return text
