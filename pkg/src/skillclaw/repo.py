"""Skill repository: versioned records, history ledger, change detection.

On disk a repository root holds::

    skills/<name>/SKILL.md
    skills/<name>/history/v<N>.md, v<N>_evidence.md   (v0_evidence.md on creation)
    manifest.json                                      (derived catalogue)
    skill_registry.json                                (name -> skill_id, version)

SKILL.md files are the source of truth for content; the registry is the
source of truth for version counters and stable skill ids. The manifest is a
derived view rewritten on every save. All file updates go through
write-temp-then-rename, so a crash mid-save leaves the old bytes visible.

The history ledger is append-only and deletion of a skill is forbidden:
``detect_changes`` reports a missing skill as a protocol violation rather
than a change.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import LedgerError, ProtocolViolationError, RepoError
from .skillmd import Skill, content_digest, parse_skill_md, render_skill_md

logger = logging.getLogger(__name__)

HISTORY_FILE_RE = re.compile(r"^v([0-9]+)(_evidence)?\.md$")

SKILLS_DIR = "skills"
HISTORY_DIR = "history"
SKILL_FILE = "SKILL.md"
MANIFEST_FILE = "manifest.json"
REGISTRY_FILE = "skill_registry.json"

# Seam for fault-injection tests; production code never overrides it.
_replace_file = os.replace


def stable_skill_id(name: str) -> str:
    """Deterministic stable identifier for a skill name."""
    return hashlib.sha256(f"skill:{name}".encode("utf-8")).hexdigest()[:16]


def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` via a same-directory temp file and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.parent / f".{path.name}.tmp"
    tmp.write_text(text, encoding="utf-8")
    try:
        _replace_file(tmp, path)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise


def atomic_write_json(path: Path, payload: object) -> None:
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False,
                                       indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SkillRecord:
    """A skill plus its registry identity and content digest."""

    skill: Skill
    skill_id: str
    version: int
    content_digest: str

    def __post_init__(self) -> None:
        if self.version < 1:
            raise ValueError(f"version must be >= 1, got {self.version}")
        if self.content_digest != content_digest(self.skill):
            raise ValueError("content_digest does not match the skill content")

    @classmethod
    def for_skill(cls, skill: Skill, *, skill_id: str | None = None,
                  version: int = 1) -> "SkillRecord":
        return cls(skill=skill,
                   skill_id=skill_id or stable_skill_id(skill.name),
                   version=version,
                   content_digest=content_digest(skill))


@dataclass(frozen=True)
class HistoryEntry:
    """One ledger step: the pre-edit snapshot (absent for creations) and the
    evidence note that justified the edit."""

    version: int
    snapshot: str | None
    evidence: str


@dataclass(frozen=True)
class Changeset:
    """Names partitioned by what happened to them between two tree states."""

    created: tuple[str, ...]
    modified: tuple[str, ...]
    unchanged: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "created", tuple(sorted(self.created)))
        object.__setattr__(self, "modified", tuple(sorted(self.modified)))
        object.__setattr__(self, "unchanged", tuple(sorted(self.unchanged)))
        buckets = (set(self.created), set(self.modified), set(self.unchanged))
        total = sum(len(b) for b in buckets)
        if len(set().union(*buckets)) != total:
            raise ValueError("changeset buckets must be disjoint")

    @property
    def changed(self) -> tuple[str, ...]:
        return tuple(sorted(self.created + self.modified))


def _scan_history(history_dir: Path) -> tuple[set[int], set[int]]:
    """Return (snapshot versions, evidence versions); reject foreign files."""
    snapshots: set[int] = set()
    evidences: set[int] = set()
    if not history_dir.exists():
        return snapshots, evidences
    for entry in sorted(history_dir.iterdir()):
        match = HISTORY_FILE_RE.match(entry.name)
        if not match:
            raise LedgerError(
                f"foreign file in history ledger: {entry.name!r} "
                "(history files must be v<N>.md / v<N>_evidence.md)")
        version = int(match.group(1))
        if match.group(2):
            evidences.add(version)
        else:
            if version == 0:
                raise LedgerError("v0.md is not a valid ledger file; "
                                  "creations record v0_evidence.md only")
            snapshots.add(version)
    return snapshots, evidences


def check_ledger(history_dir: Path) -> int:
    """Validate a ledger directory; returns the highest recorded version.

    A well-formed ledger holds snapshot/evidence pairs v1..vN with no gaps,
    optionally preceded by a lone v0_evidence.md from the skill's creation.
    """
    snapshots, evidences = _scan_history(history_dir)
    top = max(snapshots) if snapshots else 0
    if snapshots != set(range(1, top + 1)):
        missing = sorted(set(range(1, top + 1)) - snapshots)
        raise LedgerError(f"ledger snapshots are not contiguous; missing "
                          f"versions {missing}")
    if evidences not in (snapshots, snapshots | {0}):
        raise LedgerError(
            f"ledger evidence files do not pair with snapshots "
            f"(snapshots {sorted(snapshots)}, evidence {sorted(evidences)})")
    return top


class SkillRepository:
    """In-memory view of a repository root plus its persistence operations."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.records: dict[str, SkillRecord] = {}
        self.load_errors: list[tuple[str, str]] = []

    # -- paths ---------------------------------------------------------------

    @property
    def skills_root(self) -> Path:
        return self.root / SKILLS_DIR

    def skill_dir(self, name: str) -> Path:
        return self.skills_root / name

    def skill_file(self, name: str) -> Path:
        return self.skill_dir(name) / SKILL_FILE

    def history_dir(self, name: str) -> Path:
        return self.skill_dir(name) / HISTORY_DIR

    # -- loading -------------------------------------------------------------

    def load(self) -> "SkillRepository":
        self.records.clear()
        self.load_errors.clear()
        registry = self._read_registry()
        self.skills_root.mkdir(parents=True, exist_ok=True)
        for entry in sorted(self.skills_root.iterdir()):
            if not entry.is_dir():
                continue
            name = entry.name
            try:
                text = (entry / SKILL_FILE).read_text(encoding="utf-8")
            except OSError as exc:
                self.load_errors.append((name, f"unreadable SKILL.md: {exc}"))
                continue
            try:
                skill = parse_skill_md(text)
            except Exception as exc:
                self.load_errors.append((name, str(exc)))
                continue
            if skill.name != name:
                self.load_errors.append(
                    (name, f"frontmatter names {skill.name!r} but the "
                           f"directory is {name!r}"))
                continue
            identity = registry.get(name, {})
            self.records[name] = SkillRecord.for_skill(
                skill,
                skill_id=identity.get("skill_id"),
                version=int(identity.get("version", 1)),
            )
        if self.load_errors:
            logger.warning("repository load skipped %d skill(s): %s",
                           len(self.load_errors),
                           ", ".join(name for name, _ in self.load_errors))
        return self

    def _read_registry(self) -> dict[str, dict]:
        path = self.root / REGISTRY_FILE
        if not path.exists():
            return {}
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RepoError(f"unreadable skill registry: {exc}") from exc
        if not isinstance(payload, dict):
            raise RepoError("skill registry must be a JSON object")
        return payload

    # -- saving --------------------------------------------------------------

    def manifest_entries(self) -> list[dict]:
        return [
            {
                "name": record.skill.name,
                "description": record.skill.description,
                "category": record.skill.category,
                "version": record.version,
                "digest": record.content_digest,
            }
            for _, record in sorted(self.records.items())
        ]

    def save_skill(self, record: SkillRecord) -> None:
        """Persist one record and refresh the derived index files."""
        atomic_write_text(self.skill_file(record.skill.name),
                          render_skill_md(record.skill))
        self.records[record.skill.name] = record
        self.write_index()

    def write_index(self) -> None:
        atomic_write_json(self.root / MANIFEST_FILE, self.manifest_entries())
        atomic_write_json(self.root / REGISTRY_FILE, {
            name: {"skill_id": record.skill_id, "version": record.version}
            for name, record in sorted(self.records.items())
        })

    # -- history ledger ------------------------------------------------------

    def record_history(self, skill_name: str, prior_text: str | None,
                       evidence_text: str) -> int:
        """Append one ledger step; returns the version ordinal written.

        ``prior_text`` is the pre-edit SKILL.md for modifications, or None
        for a creation (which records only a v0 evidence note). Re-appending
        an identical step is a no-op, which keeps crash-resume safe.
        """
        history = self.history_dir(skill_name)
        snapshots, evidences = _scan_history(history)

        if prior_text is None:
            if snapshots or (evidences and evidences != {0}):
                raise LedgerError(
                    f"creation note for {skill_name!r} but the ledger already "
                    f"has entries")
            path = history / "v0_evidence.md"
            if path.exists():
                if path.read_text(encoding="utf-8") != evidence_text:
                    raise LedgerError(
                        "v0_evidence.md already exists with different content")
                return 0
            atomic_write_text(path, evidence_text)
            return 0

        top = max(snapshots) if snapshots else 0
        if snapshots != set(range(1, top + 1)):
            raise LedgerError(
                f"cannot append to a non-contiguous ledger for {skill_name!r}")
        if evidences in (snapshots, snapshots | {0}):
            version = top + 1
        elif evidences | {top} == snapshots or (evidences | {0, top}) == snapshots | {0}:
            # A crash left the top snapshot without its evidence note; the
            # append is only resumable if it is the same transition.
            version = top
            existing = (history / f"v{version}.md").read_text(encoding="utf-8")
            if existing != prior_text:
                raise LedgerError(
                    f"dangling v{version}.md does not match the prior text; "
                    "ledger needs manual repair")
        else:
            raise LedgerError(
                f"ledger evidence files do not pair with snapshots for "
                f"{skill_name!r}")
        atomic_write_text(history / f"v{version}.md", prior_text)
        atomic_write_text(history / f"v{version}_evidence.md", evidence_text)
        return version

    def history_entries(self, skill_name: str) -> list[HistoryEntry]:
        history = self.history_dir(skill_name)
        top = check_ledger(history)
        entries: list[HistoryEntry] = []
        creation = history / "v0_evidence.md"
        if creation.exists():
            entries.append(HistoryEntry(
                version=0, snapshot=None,
                evidence=creation.read_text(encoding="utf-8")))
        for version in range(1, top + 1):
            entries.append(HistoryEntry(
                version=version,
                snapshot=(history / f"v{version}.md").read_text(encoding="utf-8"),
                evidence=(history / f"v{version}_evidence.md").read_text(encoding="utf-8"),
            ))
        return entries

    # -- acceptance application ---------------------------------------------

    def commit_update(self, proposed: Skill, evidence_text: str) -> SkillRecord:
        """Apply an accepted candidate: ledger first, then the record.

        Committing a candidate whose content already matches the stored
        record is a no-op, so a resumed promotion cannot double-bump
        versions or duplicate ledger entries.
        """
        name = proposed.name
        current = self.records.get(name)
        digest = content_digest(proposed)
        if current is not None and current.content_digest == digest:
            return current
        if current is None:
            self.record_history(name, None, evidence_text)
            record = SkillRecord.for_skill(proposed)
        else:
            self.record_history(name, render_skill_md(current.skill),
                                evidence_text)
            record = SkillRecord.for_skill(proposed,
                                           skill_id=current.skill_id,
                                           version=current.version + 1)
        self.save_skill(record)
        return record


def load_repo(root: Path | str) -> SkillRepository:
    """Load a repository root, collecting per-skill errors instead of dying."""
    return SkillRepository(Path(root)).load()


def save_skill(repo: SkillRepository, record: SkillRecord) -> None:
    repo.save_skill(record)


def record_history(repo: SkillRepository, skill_name: str,
                   prior_text: str | None, evidence_text: str) -> int:
    return repo.record_history(skill_name, prior_text, evidence_text)


def detect_changes(before: Mapping[str, str], after_root: Path | str) -> Changeset:
    """Classify every skill under ``after_root`` against prior digests.

    ``before`` maps skill name to content digest. A name present before but
    absent after means the tree deleted a skill, which the workspace
    contract forbids.
    """
    after_root = Path(after_root)
    if not after_root.is_dir():
        raise RepoError(f"after_root is not a directory: {after_root}")
    created: list[str] = []
    modified: list[str] = []
    unchanged: list[str] = []
    seen: set[str] = set()
    for entry in sorted(after_root.iterdir()):
        skill_path = entry / SKILL_FILE
        if not entry.is_dir() or not skill_path.exists():
            continue
        name = entry.name
        seen.add(name)
        try:
            skill = parse_skill_md(skill_path.read_text(encoding="utf-8"))
        except Exception as exc:
            raise RepoError(f"skill {name!r}: {exc}") from exc
        if skill.name != name:
            raise RepoError(f"skill {name!r}: frontmatter names "
                            f"{skill.name!r}")
        digest = content_digest(skill)
        if name not in before:
            created.append(name)
        elif before[name] != digest:
            modified.append(name)
        else:
            unchanged.append(name)
    deleted = sorted(set(before) - seen)
    if deleted:
        raise ProtocolViolationError(
            f"skills deleted from the tree (deletion is forbidden): {deleted}")
    return Changeset(created=tuple(created), modified=tuple(modified),
                     unchanged=tuple(unchanged))
