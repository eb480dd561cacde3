"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
DATA_DIR = TESTS_DIR / "data"

if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))

from skillclaw.repo import SkillRepository  # noqa: E402
from skillclaw.sessions import (  # noqa: E402
    StructuredSession,
    raw_session_from_dict,
    structure_session,
)
from skillclaw.skillmd import Skill  # noqa: E402


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


def load_raw(name: str) -> dict:
    path = DATA_DIR / "sessions" / "raw" / f"{name}.json"
    return json.loads(path.read_text(encoding="utf-8"))


def raw_corpus() -> list[tuple[str, dict]]:
    out = []
    for path in sorted((DATA_DIR / "sessions" / "raw").glob("*.json")):
        out.append((path.stem,
                    json.loads(path.read_text(encoding="utf-8"))))
    return out


def golden_bytes(name: str) -> bytes:
    return (DATA_DIR / "sessions" / "structured" / f"{name}.json").read_bytes()


def make_session(session_id: str, task_id: str = "task-1",
                 skills: tuple[str, ...] = (),
                 final_scores: tuple[float, ...] = (0.9,),
                 succeeded: tuple[bool | None, ...] | None = None,
                 ) -> StructuredSession:
    """Build a small valid structured session for plumbing tests."""
    flags = succeeded or (None,) * len(final_scores)
    raw = {
        "session_id": session_id,
        "task_id": task_id,
        "rollouts": [
            {
                "turns": [{"role": "assistant", "content": "Done.",
                           "skills_read": list(skills)}],
                "final_score": score,
                **({} if flag is None else {"succeeded": flag}),
            }
            for score, flag in zip(final_scores, flags)
        ],
    }
    return structure_session(raw_session_from_dict(raw))


def make_skill(name: str = "sample-skill",
               description: str = "Do the sample thing when asked.",
               body: str = "Follow the sample procedure.\n",
               category: str = "general") -> Skill:
    return Skill(name=name, description=description, body=body,
                 category=category)


def seeded_repo(root: Path, skills: tuple[Skill, ...]) -> SkillRepository:
    """A repository root with the given skills committed as creations."""
    repo = SkillRepository(root).load()
    for skill in skills:
        repo.commit_update(skill, f"seeded {skill.name} for a test\n")
    return repo
