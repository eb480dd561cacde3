"""Validation gate and deployment pool.

A candidate skill update reaches users only by beating the deployed version
on real evidence: every selected validation task runs twice against the
executor — once with the pool as-is, once with the candidate substituted —
and the candidate is accepted iff its mean score is strictly greater and at
least one task actually ran. Ties reject, no evidence rejects, execution
failure rejects. Because the pool changes only through acceptances, its
measured score on the validator's own tasks never degrades across rounds.

Pools are immutable snapshots with strictly increasing versions; promotion
builds a new snapshot from the accepted candidates and leaves everything
else untouched. Rejected candidates (and the losers of same-skill conflicts)
go to an append-only archive for audit, never to users.
"""

from __future__ import annotations

import datetime as _dt
import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .actions import EvolutionAction, action_to_dict
from .errors import ExecutionError
from .evidence import TaskDescriptor
from .repo import SkillRecord, atomic_write_text
from .skillmd import Skill, render_skill_md

logger = logging.getLogger(__name__)

PoolView = Mapping[str, SkillRecord]

Clock = Callable[[], str]


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Decision(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class Preference(str, enum.Enum):
    OLD = "old"
    NEW = "new"
    TIE = "tie"


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of running one task once against one pool snapshot."""

    score: float
    succeeded: bool
    trace: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be within [0, 1], got {self.score}")


class TaskExecutor(Protocol):
    """Replays one task against a given pool snapshot.

    Implementations raise ``ExecutionError`` when the task cannot be run at
    all; the gate drops such tasks from both sides of the comparison.
    """

    def run(self, task: TaskDescriptor, pool: PoolView) -> ExecutionOutcome: ...


@dataclass(frozen=True)
class Candidate:
    """A proposed skill update awaiting validation."""

    skill_name: str
    baseline: SkillRecord | None
    proposed: Skill
    origin_action: EvolutionAction
    evidence_batch: str = ""

    def __post_init__(self) -> None:
        if self.proposed.name != self.skill_name:
            raise ValueError(
                f"candidate for {self.skill_name!r} proposes a skill named "
                f"{self.proposed.name!r}")
        if self.baseline is not None and self.baseline.skill.name != self.skill_name:
            raise ValueError("baseline record names a different skill")

    @property
    def target_version(self) -> int:
        return 1 if self.baseline is None else self.baseline.version + 1

    def proposed_record(self) -> SkillRecord:
        return SkillRecord.for_skill(
            self.proposed,
            skill_id=self.baseline.skill_id if self.baseline else None,
            version=self.target_version,
        )


@dataclass(frozen=True)
class Verdict:
    """Outcome of validating one candidate."""

    decision: Decision
    old_score: float
    new_score: float
    task_count: int
    rationale: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "decision", Decision(self.decision))
        should_accept = (self.new_score > self.old_score
                         and self.task_count >= 1)
        if (self.decision is Decision.ACCEPT) != should_accept:
            raise ValueError(
                f"verdict violates the acceptance rule: decision="
                f"{self.decision.value} old={self.old_score} "
                f"new={self.new_score} tasks={self.task_count}")

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT


@dataclass(frozen=True)
class DeploymentPool:
    """Immutable published snapshot of the serving skill set."""

    pool_version: int
    skills: Mapping[str, SkillRecord]
    published_at: str

    def __post_init__(self) -> None:
        if self.pool_version < 1:
            raise ValueError(f"pool_version must be >= 1, got "
                             f"{self.pool_version}")
        object.__setattr__(self, "skills", dict(self.skills))


def judge_comparison(old: ExecutionOutcome, new: ExecutionOutcome,
                     judge: Callable[[ExecutionOutcome, ExecutionOutcome], str]
                     | None = None) -> Preference:
    """Per-task preference between two outcomes.

    The default compares scores numerically. A model judge may override the
    per-task preference; garbage or a failing judge falls back to numbers.
    The aggregate accept rule never changes either way.
    """
    if judge is not None:
        try:
            answer = str(judge(old, new)).strip().lower()
            if answer in (p.value for p in Preference):
                return Preference(answer)
            logger.warning("judge answered %r; falling back to numeric "
                           "comparison", answer)
        except Exception as exc:
            logger.warning("judge failed (%s); falling back to numeric "
                           "comparison", exc)
    if new.score > old.score:
        return Preference.NEW
    if old.score > new.score:
        return Preference.OLD
    return Preference.TIE


def validate(candidate: Candidate,
             tasks: Sequence[TaskDescriptor],
             executor: TaskExecutor,
             pool: DeploymentPool,
             judge: Callable[[ExecutionOutcome, ExecutionOutcome], str]
             | None = None) -> Verdict:
    """Score a candidate old-vs-new over its validation tasks."""
    if not tasks:
        return Verdict(decision=Decision.REJECT, old_score=0.0, new_score=0.0,
                       task_count=0,
                       rationale="no-evidence: no validation tasks selected")

    baseline_pool: PoolView = dict(pool.skills)
    candidate_pool: PoolView = dict(pool.skills)
    candidate_pool[candidate.skill_name] = candidate.proposed_record()

    old_scores: list[float] = []
    new_scores: list[float] = []
    preferences: list[Preference] = []
    dropped: list[str] = []
    for task in tasks:
        try:
            old_outcome = executor.run(task, baseline_pool)
            new_outcome = executor.run(task, candidate_pool)
        except ExecutionError as exc:
            logger.warning("dropping task %s from validation of %r: %s",
                           task.task_id, candidate.skill_name, exc)
            dropped.append(task.task_id)
            continue
        old_scores.append(old_outcome.score)
        new_scores.append(new_outcome.score)
        preferences.append(judge_comparison(old_outcome, new_outcome, judge))

    if not old_scores:
        return Verdict(decision=Decision.REJECT, old_score=0.0, new_score=0.0,
                       task_count=0,
                       rationale="execution-unavailable: every validation "
                                 f"task failed to run ({len(dropped)} dropped)")

    old_score = sum(old_scores) / len(old_scores)
    new_score = sum(new_scores) / len(new_scores)
    task_count = len(old_scores)
    accepted = new_score > old_score
    counts = {p: preferences.count(p) for p in Preference}
    rationale = (
        f"{'improved' if accepted else 'no strict improvement'}: "
        f"old={old_score:.4f} new={new_score:.4f} over {task_count} task(s); "
        f"prefs new={counts[Preference.NEW]} old={counts[Preference.OLD]} "
        f"tie={counts[Preference.TIE]}"
    )
    if dropped:
        rationale += f"; dropped={dropped}"
    return Verdict(
        decision=Decision.ACCEPT if accepted else Decision.REJECT,
        old_score=old_score,
        new_score=new_score,
        task_count=task_count,
        rationale=rationale,
    )


class CandidateArchive:
    """Append-only archive of candidates that were kept out of the pool."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)
        self.candidates_dir = self.root / "candidates"
        self.log_path = self.root / "verdict_log.jsonl"

    def _log_keys(self) -> set[str]:
        if not self.log_path.exists():
            return set()
        keys = set()
        with self.log_path.open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    entry = json.loads(line)
                    keys.add(entry.get("key", ""))
        return keys

    def record(self, round_index: int, candidate: Candidate, verdict: Verdict,
               *, deployed: bool) -> None:
        """Log one verdict; archive the document unless it deployed.

        Re-recording the same (round, skill, content) is a no-op so a
        resumed promotion cannot double-log.
        """
        digest = candidate.proposed_record().content_digest
        key = f"{round_index}/{candidate.skill_name}/{digest[:12]}"
        if key not in self._log_keys():
            entry = {
                "key": key,
                "round": round_index,
                "skill": candidate.skill_name,
                "decision": verdict.decision.value,
                "deployed": deployed,
                "old_score": verdict.old_score,
                "new_score": verdict.new_score,
                "task_count": verdict.task_count,
                "rationale": verdict.rationale,
                "action": action_to_dict(candidate.origin_action),
                "evidence_batch": candidate.evidence_batch,
            }
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.log_path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry, ensure_ascii=False,
                                        sort_keys=True) + "\n")
        if not deployed:
            round_dir = self.candidates_dir / str(round_index)
            path = round_dir / f"{candidate.skill_name}.md"
            text = render_skill_md(candidate.proposed)
            if path.exists() and path.read_text(encoding="utf-8") != text:
                path = round_dir / f"{candidate.skill_name}.{digest[:8]}.md"
            atomic_write_text(path, text)


def promote(pool: DeploymentPool,
            verdicts: Sequence[tuple[Candidate, Verdict]],
            *,
            clock: Clock = utc_now,
            archive: CandidateArchive | None = None,
            round_index: int = 0) -> DeploymentPool:
    """Fold a round's verdicts into the next pool snapshot.

    Accepted candidates land at baseline version + 1 (creations at 1). When
    several acceptances target the same skill, the highest new_score wins
    and the others are archived. With zero acceptances the incoming pool
    object itself is returned and no version is spent.
    """
    winners: dict[str, tuple[Candidate, Verdict]] = {}
    for candidate, verdict in verdicts:
        if not verdict.accepted:
            continue
        held = winners.get(candidate.skill_name)
        if held is None or verdict.new_score > held[1].new_score:
            winners[candidate.skill_name] = (candidate, verdict)

    if archive is not None:
        for candidate, verdict in verdicts:
            deployed = (verdict.accepted
                        and winners.get(candidate.skill_name, (None,))[0]
                        is candidate)
            if verdict.accepted and not deployed:
                logger.warning(
                    "conflicting acceptance for %r lost on new_score "
                    "(%0.4f); archived", candidate.skill_name,
                    verdict.new_score)
            archive.record(round_index, candidate, verdict,
                           deployed=deployed)

    if not winners:
        return pool

    skills = dict(pool.skills)
    for name, (candidate, _verdict) in sorted(winners.items()):
        record = candidate.proposed_record()
        current = pool.skills.get(name)
        expected_version = 1 if current is None else current.version + 1
        if record.version != expected_version:
            # The candidate was validated against this very pool; a version
            # drift here means the caller mixed pools and must not publish.
            raise ValueError(
                f"candidate for {name!r} targets version {record.version} "
                f"but the pool expects {expected_version}")
        skills[name] = record
    return DeploymentPool(
        pool_version=pool.pool_version + 1,
        skills=skills,
        published_at=clock(),
    )
