"""Evolver harness: workspace construction and the two evolution modes.

Per-group mode walks the evidence groups in a fixed order (skill slugs
lexicographically, then the no-skill pass), asks the backend for raw action
text per group, parses it strictly, and enforces the hard constraints. A
malformed response gets one retry with the parse error appended to the
context; anything still broken degrades to Skip. A constraint violation
degrades immediately. Nothing a backend says can abort a round.

Whole-workspace mode materializes a filesystem workspace (sessions, skill
tree, catalogue files, instructions document), lets the backend edit it in
place, then mechanically restores anything the contract forbids touching,
discards skills whose ledger discipline is broken, and reports what
legitimately changed.
"""

from __future__ import annotations

import enum
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .actions import (CreateSkill, EvolutionAction, Skip, enforce_constraints,
                      parse_action, strip_markdown_fence)
from .backends import DecisionContext, EvolverBackend, load_prompt
from .errors import (ActionParseError, BackendError, ConstraintRejectionError,
                     WorkspaceBuildError)
from .evidence import EvidenceGroups, session_failed
from .repo import (HISTORY_DIR, HISTORY_FILE_RE, MANIFEST_FILE, REGISTRY_FILE,
                   SKILL_FILE, Changeset, SkillRepository, detect_changes)
from .sessions import StructuredSession, encode_session
from .skillmd import parse_skill_md, render_skill_md

logger = logging.getLogger(__name__)

INSTRUCTIONS_FILE = "EVOLVE_AGENTS.md"
SESSIONS_DIR = "sessions"
SKILLS_DIR = "skills"

MAX_CONTEXT_SESSIONS = 20

# Upper bound on create_skill actions accepted from one no-skill pass; the
# wire protocol is one JSON object per response, so multiple creations take
# repeated calls and a runaway backend must not loop forever.
MAX_CREATES_PER_PASS = 16


class WorkspaceMode(str, enum.Enum):
    FRESH = "fresh"
    NO_FRESH = "no_fresh"


@dataclass
class EvolverWorkspace:
    """A materialized workspace plus the pristine state needed to police it."""

    root: Path
    mode: WorkspaceMode
    session_dir: Path
    skills_dir: Path
    prior_digests: dict[str, str] = field(default_factory=dict)
    prior_texts: dict[str, str] = field(default_factory=dict)
    prior_history: dict[str, dict[str, bytes]] = field(default_factory=dict)
    protected: dict[str, bytes] = field(default_factory=dict)

    def skill_path(self, name: str) -> Path:
        return self.skills_dir / name / SKILL_FILE

    def history_path(self, name: str) -> Path:
        return self.skills_dir / name / HISTORY_DIR

    def skill_text(self, name: str) -> str:
        return self.skill_path(name).read_text(encoding="utf-8")

    def latest_evidence(self, name: str) -> str:
        """Evidence note of the newest ledger entry for a skill, or ''."""
        history = self.history_path(name)
        if not history.exists():
            return ""
        best_version = -1
        best_text = ""
        for entry in history.iterdir():
            match = HISTORY_FILE_RE.match(entry.name)
            if match and match.group(2) and int(match.group(1)) > best_version:
                best_version = int(match.group(1))
                best_text = entry.read_text(encoding="utf-8")
        return best_text


def build_workspace(repo: SkillRepository,
                    batch: Sequence[StructuredSession],
                    mode: WorkspaceMode,
                    root: Path | str) -> EvolverWorkspace:
    """Materialize a workspace for the backend under ``root``.

    The build lands in a temporary sibling directory that replaces ``root``
    in one rename, so a failed build never leaves a partial workspace. In
    ``no_fresh`` mode the ledger directories of an existing workspace at
    ``root`` are carried over; everything else is refreshed from the
    repository and batch.
    """
    root = Path(root)
    mode = WorkspaceMode(mode)
    staging = root.parent / (root.name + ".building")
    discard = root.parent / (root.name + ".discard")

    carried: dict[str, dict[str, bytes]] = {}
    if mode is WorkspaceMode.NO_FRESH and root.exists():
        for skill_dir in (root / SKILLS_DIR).glob("*"):
            history = skill_dir / HISTORY_DIR
            if history.is_dir():
                carried[skill_dir.name] = {
                    entry.name: entry.read_bytes()
                    for entry in history.iterdir() if entry.is_file()
                }

    try:
        if staging.exists():
            shutil.rmtree(staging)
        session_dir = staging / SESSIONS_DIR
        skills_dir = staging / SKILLS_DIR
        session_dir.mkdir(parents=True)
        skills_dir.mkdir(parents=True)

        protected: dict[str, bytes] = {}
        for session in batch:
            data = encode_session(session)
            relpath = f"{SESSIONS_DIR}/{session.session_id}.json"
            (staging / relpath).write_bytes(data)
            protected[relpath] = data

        prior_digests: dict[str, str] = {}
        prior_texts: dict[str, str] = {}
        prior_history: dict[str, dict[str, bytes]] = {}
        for name, record in sorted(repo.records.items()):
            text = render_skill_md(record.skill)
            skill_dir = skills_dir / name
            history_dir = skill_dir / HISTORY_DIR
            history_dir.mkdir(parents=True)
            (skill_dir / SKILL_FILE).write_text(text, encoding="utf-8")
            for filename, data in carried.get(name, {}).items():
                (history_dir / filename).write_bytes(data)
            prior_digests[name] = record.content_digest
            prior_texts[name] = text
            prior_history[name] = dict(carried.get(name, {}))

        manifest = (json.dumps(repo.manifest_entries(), ensure_ascii=False,
                               indent=2, sort_keys=True) + "\n").encode("utf-8")
        registry = (json.dumps(
            {name: {"skill_id": record.skill_id, "version": record.version}
             for name, record in sorted(repo.records.items())},
            ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode("utf-8")
        instructions = load_prompt("agentic_evolve.md").replace(
            "<<MODE>>", mode.value).encode("utf-8")
        for relpath, data in ((MANIFEST_FILE, manifest),
                              (REGISTRY_FILE, registry),
                              (INSTRUCTIONS_FILE, instructions)):
            (staging / relpath).write_bytes(data)
            protected[relpath] = data

        if root.exists():
            if discard.exists():
                shutil.rmtree(discard)
            root.rename(discard)
        staging.rename(root)
        if discard.exists():
            shutil.rmtree(discard)
    except OSError as exc:
        shutil.rmtree(staging, ignore_errors=True)
        raise WorkspaceBuildError(f"workspace build failed: {exc}") from exc

    return EvolverWorkspace(
        root=root,
        mode=mode,
        session_dir=root / SESSIONS_DIR,
        skills_dir=root / SKILLS_DIR,
        prior_digests=prior_digests,
        prior_texts=prior_texts,
        prior_history=prior_history,
        protected=protected,
    )


# ---------------------------------------------------------------------------
# Session summarization
# ---------------------------------------------------------------------------

def summarize_session(session: StructuredSession,
                      backend: EvolverBackend) -> StructuredSession:
    """Attach a backend-written summary; backend failure leaves it absent."""
    try:
        raw = backend.summarize(session)
    except BackendError as exc:
        logger.warning("summarizer failed for %s: %s", session.session_id, exc)
        return session
    cleaned = strip_markdown_fence(raw).strip()
    if not cleaned:
        return session
    return session.with_summary(cleaned)


# ---------------------------------------------------------------------------
# Per-group evolution
# ---------------------------------------------------------------------------

def _describe_session(session: StructuredSession) -> str:
    state = "FAILED" if session_failed(session) else "ok"
    stats = session.aggregate
    line = (f"- {session.session_id} task={session.task_id} {state} "
            f"mean={stats.mean_score:.3f} "
            f"({stats.success_count}/{stats.success_count + stats.fail_count} "
            f"rollouts, {stats.stability.value})"
            if stats else
            f"- {session.session_id} task={session.task_id} {state}")
    if session.metadata.has_tool_errors:
        line += " tool-errors"
    if session.metadata.avg_prm is not None:
        line += f" avg_prm={session.metadata.avg_prm:.2f}"
    if session.summary:
        line += f"\n  summary: {session.summary}"
    return line


def order_for_context(sessions: Sequence[StructuredSession],
                      cap: int = MAX_CONTEXT_SESSIONS,
                      ) -> list[StructuredSession]:
    """Failures first, batch order preserved within each bucket."""
    failures = [s for s in sessions if session_failed(s)]
    successes = [s for s in sessions if not session_failed(s)]
    return (failures + successes)[:cap]


def _render_evidence(sessions: Sequence[StructuredSession]) -> str:
    return "\n".join(_describe_session(s) for s in sessions)


def _decide_action(backend: EvolverBackend, context: DecisionContext,
                   ) -> EvolutionAction:
    """Raw decision -> parsed action, with one retry on a parse error."""
    raw = backend.decide(context)
    try:
        return parse_action(raw)
    except ActionParseError as first:
        logger.info("action parse failed for scope %r, retrying: %s",
                    context.scope, first)
        retry_context = DecisionContext(
            scope=context.scope,
            skill_text=context.skill_text,
            existing_names=context.existing_names,
            evidence=context.evidence,
            parse_error=str(first),
        )
        raw = backend.decide(retry_context)
        try:
            return parse_action(raw)
        except ActionParseError as second:
            logger.warning("action parse failed twice for scope %r, "
                           "degrading to skip: %s", context.scope, second)
            return Skip(rationale=f"degraded after parse failure: {second}")


def run_group_evolution(groups: EvidenceGroups,
                        repo: SkillRepository,
                        backend: EvolverBackend,
                        *,
                        max_context_sessions: int = MAX_CONTEXT_SESSIONS,
                        ) -> list[tuple[str | None, EvolutionAction]]:
    """One evolution pass over all evidence groups.

    Returns (scope, action) pairs: one per skill group in slug order, then
    the actions of the no-skill pass. Every returned action has already
    survived constraint enforcement; rejected or unparseable decisions
    appear as Skip with the reason in the rationale.
    """
    results: list[tuple[str | None, EvolutionAction]] = []
    known_names: set[str] = set(repo.records)

    for name in sorted(groups.by_skill):
        sessions = order_for_context(groups.by_skill[name],
                                     max_context_sessions)
        current = repo.records.get(name)
        context = DecisionContext(
            scope=name,
            skill_text=render_skill_md(current.skill) if current else "",
            existing_names=tuple(sorted(known_names)),
            evidence=_render_evidence(sessions),
        )
        action = _decide_action(backend, context)
        try:
            action = enforce_constraints(action, current, known_names)
        except ConstraintRejectionError as exc:
            logger.warning("action for %r rejected (%s); treating as skip",
                           name, exc.rule)
            action = Skip(rationale=f"degraded after rejection: {exc}")
        if isinstance(action, CreateSkill):
            known_names.add(action.name)
        results.append((name, action))

    if groups.no_skill:
        sessions = order_for_context(groups.no_skill, max_context_sessions)
        evidence = _render_evidence(sessions)
        for _ in range(MAX_CREATES_PER_PASS):
            context = DecisionContext(
                scope=None,
                skill_text="",
                existing_names=tuple(sorted(known_names)),
                evidence=evidence,
            )
            action = _decide_action(backend, context)
            try:
                action = enforce_constraints(action, None, known_names)
            except ConstraintRejectionError as exc:
                logger.warning("no-skill action rejected (%s); treating as "
                               "skip", exc.rule)
                action = Skip(rationale=f"degraded after rejection: {exc}")
            results.append((None, action))
            if not isinstance(action, CreateSkill):
                break
            known_names.add(action.name)
        else:
            logger.warning("no-skill pass hit the creation bound (%d)",
                           MAX_CREATES_PER_PASS)

    return results


# ---------------------------------------------------------------------------
# Whole-workspace evolution
# ---------------------------------------------------------------------------

def _restore_protected(workspace: EvolverWorkspace) -> list[str]:
    """Put every protected file back; returns the violated paths."""
    violations: list[str] = []
    for relpath, data in workspace.protected.items():
        path = workspace.root / relpath
        if not path.exists() or path.read_bytes() != data:
            violations.append(relpath)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
    expected = {relpath.split("/", 1)[1] for relpath in workspace.protected
                if relpath.startswith(f"{SESSIONS_DIR}/")}
    for entry in workspace.session_dir.iterdir():
        if entry.name not in expected:
            violations.append(f"{SESSIONS_DIR}/{entry.name}")
            if entry.is_dir():
                shutil.rmtree(entry)
            else:
                entry.unlink()
    return violations


def _restore_skill(workspace: EvolverWorkspace, name: str) -> None:
    """Reset one skill directory to its pristine build state."""
    skill_dir = workspace.skills_dir / name
    if name not in workspace.prior_texts:
        if skill_dir.exists():
            shutil.rmtree(skill_dir)
        return
    history_dir = skill_dir / HISTORY_DIR
    if history_dir.exists():
        shutil.rmtree(history_dir)
    history_dir.mkdir(parents=True, exist_ok=True)
    for filename, data in workspace.prior_history[name].items():
        (history_dir / filename).write_bytes(data)
    workspace.skill_path(name).write_text(workspace.prior_texts[name],
                                          encoding="utf-8")


def _history_state(history_dir: Path) -> dict[str, bytes] | None:
    """Filename -> bytes for a ledger dir, or None if a name is foreign."""
    if not history_dir.exists():
        return {}
    state: dict[str, bytes] = {}
    for entry in history_dir.iterdir():
        if not entry.is_file() or not HISTORY_FILE_RE.match(entry.name):
            return None
        state[entry.name] = entry.read_bytes()
    return state


def _check_skill_transition(workspace: EvolverWorkspace, name: str) -> str | None:
    """Validate one skill directory after an agentic run.

    Returns None when the state is acceptable, otherwise a human-readable
    reason; the caller discards the change and restores the pristine state.
    """
    skill_path = workspace.skill_path(name)
    if not skill_path.exists():
        return "skill or its SKILL.md was deleted"
    try:
        skill = parse_skill_md(skill_path.read_text(encoding="utf-8"))
    except Exception as exc:
        return f"SKILL.md no longer parses: {exc}"
    if skill.name != name:
        return (f"frontmatter renamed the skill to {skill.name!r}; names are "
                "immutable")

    state = _history_state(workspace.history_path(name))
    if state is None:
        return "history contains foreign (e.g. date-named) files"

    prior = workspace.prior_history.get(name)
    if prior is None:
        # Newly created skill: the ledger must hold exactly the creation note.
        if set(state) != {"v0_evidence.md"}:
            return (f"created skill must record exactly v0_evidence.md, "
                    f"found {sorted(state)}")
        return None

    text = workspace.skill_text(name)
    if text == workspace.prior_texts[name]:
        if state != prior:
            return "history changed for an unmodified skill"
        return None

    prior_versions = [int(HISTORY_FILE_RE.match(f).group(1)) for f in prior]
    next_version = max(prior_versions, default=0) + 1
    expected_names = set(prior) | {f"v{next_version}.md",
                                   f"v{next_version}_evidence.md"}
    if set(state) != expected_names:
        return (f"modified skill must add exactly the v{next_version} "
                f"snapshot/evidence pair, found {sorted(set(state) - set(prior))}")
    for filename, data in prior.items():
        if state[filename] != data:
            return f"existing ledger file {filename} was rewritten"
    snapshot = state[f"v{next_version}.md"].decode("utf-8", errors="replace")
    if snapshot != workspace.prior_texts[name]:
        return (f"v{next_version}.md must be a verbatim copy of the pre-edit "
                "SKILL.md")
    return None


def run_agentic_evolution(workspace: EvolverWorkspace,
                          backend: EvolverBackend) -> Changeset:
    """Let the backend edit the workspace, then police and report changes.

    Forbidden-file mutations are reverted; skills whose edits break ledger
    discipline (or no longer parse) are discarded and logged; deletion is
    undone. The returned changeset covers only changes that survived.
    """
    backend.run_agentic(workspace)

    for relpath in _restore_protected(workspace):
        logger.warning("protocol violation: %s was mutated; restored", relpath)

    names = set(workspace.prior_digests)
    for entry in workspace.skills_dir.iterdir():
        if entry.is_dir():
            names.add(entry.name)

    for name in sorted(names):
        reason = _check_skill_transition(workspace, name)
        if reason is not None:
            logger.warning("discarding change to skill %r: %s", name, reason)
            _restore_skill(workspace, name)

    return detect_changes(workspace.prior_digests, workspace.skills_dir)
