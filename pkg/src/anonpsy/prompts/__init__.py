"""Versioned prompt assets and template rendering.

Each template is a text file shipped with the package. A file may contain
``[[SYSTEM]]`` and ``[[USER]]`` section markers; without markers the whole
file is the user message. Placeholders use ``{name}`` syntax and are replaced
literally, so braces inside substituted values are never re-interpreted.
"""

from __future__ import annotations

import hashlib
import re
from importlib import resources

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class TemplateError(KeyError):
    pass


def _asset_text(template_id: str) -> str:
    try:
        return resources.files(__name__).joinpath(f"{template_id}.txt").read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateError(f"no prompt template named {template_id!r}") from exc


def asset_hash(template_id: str) -> str:
    """SHA-256 of the raw template file, for run manifests and drift guards."""
    raw = resources.files(__name__).joinpath(f"{template_id}.txt").read_bytes()
    return hashlib.sha256(raw).hexdigest()


def list_templates() -> list[str]:
    names = []
    for entry in resources.files(__name__).iterdir():
        if entry.name.endswith(".txt"):
            names.append(entry.name[: -len(".txt")])
    return sorted(names)


def _split_sections(text: str) -> list[tuple[str, str]]:
    if "[[SYSTEM]]" not in text and "[[USER]]" not in text:
        return [("user", text.strip("\n"))]
    sections: list[tuple[str, str]] = []
    role = None
    buf: list[str] = []
    for line in text.splitlines():
        marker = line.strip()
        if marker in ("[[SYSTEM]]", "[[USER]]"):
            if role is not None:
                sections.append((role, "\n".join(buf).strip("\n")))
            role = "system" if marker == "[[SYSTEM]]" else "user"
            buf = []
        else:
            buf.append(line)
    if role is not None:
        sections.append((role, "\n".join(buf).strip("\n")))
    return sections


def render(template_id: str, variables: dict[str, str]) -> list[tuple[str, str]]:
    """Render a template into (role, content) messages.

    Every placeholder in the template must be provided; extra variables are
    allowed (they still participate in mock fixture digests).
    """
    text = _asset_text(template_id)
    needed = set(_PLACEHOLDER.findall(text))
    missing = needed - set(variables)
    if missing:
        raise TemplateError(
            f"template {template_id!r} missing variables: {', '.join(sorted(missing))}"
        )
    messages = []
    for role, content in _split_sections(text):
        for name in needed:
            content = content.replace("{" + name + "}", str(variables[name]))
        messages.append((role, content))
    return messages
