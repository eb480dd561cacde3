"""Evolver action protocol.

Backends answer with exactly one JSON object naming one of four actions:
``improve_skill``, ``optimize_description``, ``create_skill``, or ``skip``.
``parse_action`` is deliberately strict — the only tolerated decoration is
surrounding whitespace and a single Markdown code fence. Everything else
(unknown action names, missing fields, stray keys, trailing text) is a parse
error. The wire format carries the body under the key ``content``.

``enforce_constraints`` applies the hard rules no model output can take the
loop past: names are immutable under improvement, description optimization
may touch nothing but the description, created names must be fresh valid
slugs, and bodies must be non-empty. A rejected action never aborts a round;
callers degrade it to Skip.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

from .errors import ActionParseError, ConstraintRejectionError
from .repo import SkillRecord
from .skillmd import DEFAULT_CATEGORY, Skill, is_valid_slug

ACTION_IMPROVE = "improve_skill"
ACTION_OPTIMIZE = "optimize_description"
ACTION_CREATE = "create_skill"
ACTION_SKIP = "skip"

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\n(.*)\n```$", re.DOTALL)


@dataclass(frozen=True)
class EditSummary:
    preserved_sections: tuple[str, ...]
    changed_sections: tuple[str, ...]
    notes: str


@dataclass(frozen=True)
class ImproveSkill:
    name: str
    description: str
    body: str
    category: str
    edit_summary: EditSummary
    rationale: str


@dataclass(frozen=True)
class OptimizeDescription:
    name: str
    description: str
    rationale: str
    # The wire shape for this action carries only name and description, but
    # a sloppy backend may echo the rest of the skill object back. Those
    # echoes are kept so the constraint check can prove nothing else moved.
    body: str | None = None
    category: str | None = None


@dataclass(frozen=True)
class CreateSkill:
    name: str
    description: str
    body: str
    rationale: str


@dataclass(frozen=True)
class Skip:
    rationale: str


EvolutionAction = ImproveSkill | OptimizeDescription | CreateSkill | Skip


def strip_markdown_fence(raw: str) -> str:
    """Drop surrounding whitespace and at most one wrapping code fence."""
    text = raw.strip()
    match = _FENCE_RE.match(text)
    if match:
        return match.group(1).strip()
    return text


def _require_str(obj: Mapping[str, Any], key: str, where: str,
                 *, allow_empty: bool = False) -> str:
    if key not in obj:
        raise ActionParseError(f"missing required field {where}{key!r}")
    value = obj[key]
    if not isinstance(value, str):
        raise ActionParseError(f"field {where}{key!r} must be a string")
    if not value and not allow_empty:
        raise ActionParseError(f"field {where}{key!r} must be non-empty")
    return value


def _require_obj(obj: Mapping[str, Any], key: str) -> Mapping[str, Any]:
    if key not in obj:
        raise ActionParseError(f"missing required field {key!r}")
    value = obj[key]
    if not isinstance(value, Mapping):
        raise ActionParseError(f"field {key!r} must be an object")
    return value


def _reject_unknown(obj: Mapping[str, Any], allowed: Iterable[str],
                    where: str = "") -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ActionParseError(f"unexpected field(s) {where}{unknown}")


def _str_list(obj: Mapping[str, Any], key: str, where: str) -> tuple[str, ...]:
    if key not in obj:
        raise ActionParseError(f"missing required field {where}{key!r}")
    value = obj[key]
    if not isinstance(value, (list, tuple)) or any(
            not isinstance(item, str) for item in value):
        raise ActionParseError(f"field {where}{key!r} must be a list of "
                               "strings")
    return tuple(value)


def parse_action(raw: str) -> EvolutionAction:
    """Parse raw backend output into exactly one action.

    Tolerates leading/trailing whitespace and one surrounding Markdown
    fence; any other deviation from the documented shapes is an
    ``ActionParseError`` describing the defect.
    """
    text = strip_markdown_fence(raw)
    if not text:
        raise ActionParseError("empty response where one JSON object was "
                               "expected")
    decoder = json.JSONDecoder()
    try:
        payload, end = decoder.raw_decode(text)
    except json.JSONDecodeError as exc:
        raise ActionParseError(f"response is not valid JSON: {exc}") from exc
    if text[end:].strip():
        raise ActionParseError("response must contain exactly one JSON "
                               "object; found trailing content")
    if not isinstance(payload, Mapping):
        raise ActionParseError("response must be a JSON object, got "
                               f"{type(payload).__name__}")

    kind = payload.get("action")
    if kind is None:
        raise ActionParseError("missing required field 'action'")

    if kind == ACTION_SKIP:
        _reject_unknown(payload, ("action", "rationale"))
        return Skip(rationale=_require_str(payload, "rationale", ""))

    if kind == ACTION_IMPROVE:
        _reject_unknown(payload, ("action", "rationale", "skill"))
        rationale = _require_str(payload, "rationale", "")
        skill = _require_obj(payload, "skill")
        _reject_unknown(skill, ("name", "description", "content", "category",
                                "edit_summary"), "skill.")
        summary_obj = skill.get("edit_summary")
        if summary_obj is None:
            raise ActionParseError("missing required field "
                                   "'skill.edit_summary'")
        if not isinstance(summary_obj, Mapping):
            raise ActionParseError("field 'skill.edit_summary' must be an "
                                   "object")
        _reject_unknown(summary_obj, ("preserved_sections", "changed_sections",
                                      "notes"), "skill.edit_summary.")
        summary = EditSummary(
            preserved_sections=_str_list(summary_obj, "preserved_sections",
                                         "skill.edit_summary."),
            changed_sections=_str_list(summary_obj, "changed_sections",
                                       "skill.edit_summary."),
            notes=_require_str(summary_obj, "notes", "skill.edit_summary.",
                               allow_empty=True),
        )
        return ImproveSkill(
            name=_require_str(skill, "name", "skill."),
            description=_require_str(skill, "description", "skill."),
            body=_require_str(skill, "content", "skill.", allow_empty=True),
            category=_require_str(skill, "category", "skill."),
            edit_summary=summary,
            rationale=rationale,
        )

    if kind == ACTION_OPTIMIZE:
        _reject_unknown(payload, ("action", "rationale", "skill"))
        rationale = _require_str(payload, "rationale", "")
        skill = _require_obj(payload, "skill")
        _reject_unknown(skill, ("name", "description", "content", "category"),
                        "skill.")
        body = skill.get("content")
        if body is not None and not isinstance(body, str):
            raise ActionParseError("field skill.'content' must be a string")
        category = skill.get("category")
        if category is not None and not isinstance(category, str):
            raise ActionParseError("field skill.'category' must be a string")
        return OptimizeDescription(
            name=_require_str(skill, "name", "skill."),
            description=_require_str(skill, "description", "skill."),
            rationale=rationale,
            body=body,
            category=category,
        )

    if kind == ACTION_CREATE:
        _reject_unknown(payload, ("action", "rationale", "skill"))
        rationale = _require_str(payload, "rationale", "")
        skill = _require_obj(payload, "skill")
        _reject_unknown(skill, ("name", "description", "content"), "skill.")
        return CreateSkill(
            name=_require_str(skill, "name", "skill."),
            description=_require_str(skill, "description", "skill."),
            body=_require_str(skill, "content", "skill.", allow_empty=True),
            rationale=rationale,
        )

    raise ActionParseError(f"unknown action {kind!r}")


def serialize_action(action: EvolutionAction) -> str:
    """Render an action back to its wire JSON (inverse of parse_action)."""
    payload = action_to_dict(action)
    return json.dumps(payload, ensure_ascii=False, indent=2)


def action_to_dict(action: EvolutionAction) -> dict[str, Any]:
    if isinstance(action, Skip):
        return {"action": ACTION_SKIP, "rationale": action.rationale}
    if isinstance(action, ImproveSkill):
        return {
            "action": ACTION_IMPROVE,
            "rationale": action.rationale,
            "skill": {
                "name": action.name,
                "description": action.description,
                "content": action.body,
                "category": action.category,
                "edit_summary": {
                    "preserved_sections": list(action.edit_summary.preserved_sections),
                    "changed_sections": list(action.edit_summary.changed_sections),
                    "notes": action.edit_summary.notes,
                },
            },
        }
    if isinstance(action, OptimizeDescription):
        skill: dict[str, Any] = {
            "name": action.name,
            "description": action.description,
        }
        if action.body is not None:
            skill["content"] = action.body
        if action.category is not None:
            skill["category"] = action.category
        return {"action": ACTION_OPTIMIZE, "rationale": action.rationale,
                "skill": skill}
    if isinstance(action, CreateSkill):
        return {
            "action": ACTION_CREATE,
            "rationale": action.rationale,
            "skill": {
                "name": action.name,
                "description": action.description,
                "content": action.body,
            },
        }
    raise TypeError(f"not an action: {action!r}")


def enforce_constraints(action: EvolutionAction,
                        current: SkillRecord | None,
                        existing_names: Iterable[str]) -> EvolutionAction:
    """Apply the hard action constraints; returns the action unchanged.

    ``current`` is the record the action's evidence group is scoped to (None
    for the no-skill scope). Violations raise ``ConstraintRejectionError``
    with the broken rule's name; callers log and degrade to Skip.
    """
    names = set(existing_names)

    if isinstance(action, Skip):
        return action

    if isinstance(action, ImproveSkill):
        if current is None:
            raise ConstraintRejectionError(
                "unknown-skill", "improve_skill targets a skill that does "
                "not exist")
        if action.name != current.skill.name:
            raise ConstraintRejectionError(
                "name-immutable", f"improve_skill may not rename "
                f"{current.skill.name!r} to {action.name!r}")
        if not action.body.strip():
            raise ConstraintRejectionError(
                "empty-body", "improve_skill must carry a non-empty body")
        return action

    if isinstance(action, OptimizeDescription):
        if current is None:
            raise ConstraintRejectionError(
                "unknown-skill", "optimize_description targets a skill that "
                "does not exist")
        if action.name != current.skill.name:
            raise ConstraintRejectionError(
                "name-immutable", f"optimize_description may not rename "
                f"{current.skill.name!r} to {action.name!r}")
        if action.body is not None and action.body != current.skill.body:
            raise ConstraintRejectionError(
                "description-only", "optimize_description may not edit the "
                "skill body")
        if action.category is not None and action.category != current.skill.category:
            raise ConstraintRejectionError(
                "description-only", "optimize_description may not edit the "
                "skill category")
        return action

    if isinstance(action, CreateSkill):
        if not is_valid_slug(action.name):
            raise ConstraintRejectionError(
                "invalid-slug", f"created name {action.name!r} is not a "
                "lowercase hyphenated slug")
        if action.name in names:
            raise ConstraintRejectionError(
                "name-collision", f"created name {action.name!r} already "
                "exists")
        if not action.body.strip():
            raise ConstraintRejectionError(
                "empty-body", "create_skill must carry a non-empty body")
        return action

    raise TypeError(f"not an action: {action!r}")


def skill_from_action(action: EvolutionAction,
                      current: SkillRecord | None) -> Skill:
    """Materialize the proposed skill document an action describes."""
    if isinstance(action, ImproveSkill):
        assert current is not None
        return Skill(name=action.name, description=action.description,
                     body=action.body, category=action.category,
                     extras=current.skill.extras)
    if isinstance(action, OptimizeDescription):
        assert current is not None
        return Skill(name=action.name, description=action.description,
                     body=current.skill.body,
                     category=current.skill.category,
                     extras=current.skill.extras)
    if isinstance(action, CreateSkill):
        return Skill(name=action.name, description=action.description,
                     body=action.body, category=DEFAULT_CATEGORY)
    raise TypeError("skip carries no skill")
