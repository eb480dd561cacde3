"""SKILL.md document format.

A skill file is frontmatter between two ``---`` delimiter lines followed by a
Markdown body. The frontmatter carries single-line ``key: value`` entries;
``name``, ``description``, and ``category`` are the understood keys, emitted
in exactly that order on render. Unknown keys are kept verbatim (after the
three canonical ones) so a round-trip never drops them, but nothing else in
the system reads them.

``render_skill_md`` is canonical: parse-then-render normalizes a file, and a
file already in canonical form round-trips byte-for-byte. The content digest
of a skill is the SHA-256 of its canonical rendered bytes, which is what
change detection and the deployment manifest key on.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import SkillMdError

SLUG_RE = re.compile(r"^[a-z0-9]+(-[a-z0-9]+)*$")

DELIMITER = "---"
DEFAULT_CATEGORY = "general"

_KNOWN_KEYS = ("name", "description", "category")


def is_valid_slug(name: str) -> bool:
    return bool(SLUG_RE.match(name))


@dataclass(frozen=True)
class Skill:
    """One skill document: identity, trigger description, body text."""

    name: str
    description: str
    body: str
    category: str = DEFAULT_CATEGORY
    extras: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not is_valid_slug(self.name):
            raise ValueError(
                f"skill name must be a lowercase hyphenated slug, got {self.name!r}")
        if not self.description:
            raise ValueError("skill description must be non-empty")
        if not self.body:
            raise ValueError("skill body must be non-empty")
        for value, what in ((self.description, "description"),
                            (self.category, "category")):
            if "\n" in value:
                raise ValueError(f"skill {what} must be a single line")
        object.__setattr__(self, "extras", tuple(self.extras))
        for line in self.extras:
            if "\n" in line or ":" not in line:
                raise ValueError(f"extra frontmatter entry malformed: {line!r}")


def parse_skill_md(text: str) -> Skill:
    """Parse a SKILL.md document; errors carry 1-based line numbers."""
    lines = text.split("\n")
    if not lines or lines[0].strip() != DELIMITER:
        raise SkillMdError("document must open with a '---' frontmatter "
                           "delimiter", line=1)
    close = None
    for number, line in enumerate(lines[1:], start=2):
        if line.strip() == DELIMITER:
            close = number
            break
    if close is None:
        raise SkillMdError("frontmatter is never terminated by a closing "
                           f"'---' (scanned {len(lines)} lines)",
                           line=len(lines))

    values: dict[str, str] = {}
    value_lines: dict[str, int] = {}
    extras: list[str] = []
    for number in range(2, close):
        line = lines[number - 1]
        if not line.strip():
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise SkillMdError(f"frontmatter line has no key separator: "
                               f"{line!r}", line=number)
        key = key.strip()
        if key in _KNOWN_KEYS:
            if key in values:
                raise SkillMdError(f"duplicate frontmatter key {key!r}",
                                   line=number)
            values[key] = value.strip()
            value_lines[key] = number
        else:
            extras.append(line)

    if "name" not in values:
        raise SkillMdError("frontmatter is missing the 'name' key", line=close)
    if "description" not in values or not values["description"]:
        raise SkillMdError("frontmatter is missing the 'description' key",
                           line=value_lines.get("description", close))
    if not is_valid_slug(values["name"]):
        raise SkillMdError(
            f"name {values['name']!r} is not a lowercase hyphenated slug",
            line=value_lines["name"])

    body_lines = lines[close:]
    if body_lines and body_lines[0] == "":
        body_lines = body_lines[1:]
    body = "\n".join(body_lines)
    if not body:
        raise SkillMdError("skill body is empty", line=len(lines))

    try:
        return Skill(
            name=values["name"],
            description=values["description"],
            body=body,
            category=values.get("category", DEFAULT_CATEGORY),
            extras=tuple(extras),
        )
    except ValueError as exc:
        raise SkillMdError(str(exc)) from exc


def render_skill_md(skill: Skill) -> str:
    """Render the canonical document: delimiters, ordered keys, blank line,
    body verbatim."""
    header = [
        DELIMITER,
        f"name: {skill.name}",
        f"description: {skill.description}",
        f"category: {skill.category}",
        *skill.extras,
        DELIMITER,
        "",
    ]
    return "\n".join(header) + "\n" + skill.body


def content_digest(skill: Skill) -> str:
    """SHA-256 hex digest of the canonical rendered bytes."""
    return hashlib.sha256(render_skill_md(skill).encode("utf-8")).hexdigest()


def digest_of_text(text: str) -> str:
    """Digest of an on-disk document, normalizing to canonical form first."""
    return content_digest(parse_skill_md(text))
