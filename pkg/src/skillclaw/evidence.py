"""Per-skill evidence grouping over a batch of structured sessions.

A batch partitions into one group per referenced skill plus a no-skill group.
Sessions that reference several skills appear in each of those groups
(membership, not a partition in the strict sense); sessions referencing no
skill land in the no-skill group exactly once. Within every group the batch
order is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import GroupingError
from .sessions import Stability, StructuredSession

DEFAULT_VALIDATION_CAP = 5


@dataclass(frozen=True)
class EvidenceGroups:
    """Grouped view of one batch; ``batch_id`` tags downstream audit logs."""

    by_skill: dict[str, list[StructuredSession]]
    no_skill: list[StructuredSession]
    batch_id: str = ""

    def skill_names(self) -> list[str]:
        return sorted(self.by_skill)


@dataclass(frozen=True)
class TaskDescriptor:
    """One task to replay during validation, with its evidence trail."""

    task_id: str
    failed: bool
    session_ids: tuple[str, ...] = ()


def session_failed(session: StructuredSession) -> bool:
    """A session counts as failed unless every rollout succeeded."""
    if session.aggregate is not None:
        return session.aggregate.stability is not Stability.ALL_SUCCESS
    return any(not trace.succeeded for trace in session.trajectory)


def group_sessions(batch: Sequence[StructuredSession],
                   batch_id: str = "") -> EvidenceGroups:
    """Group a batch of sessions by the skills they reference.

    Duplicate session ids are rejected; an empty batch yields empty groups.
    """
    seen: set[str] = set()
    by_skill: dict[str, list[StructuredSession]] = {}
    no_skill: list[StructuredSession] = []
    for session in batch:
        if session.session_id in seen:
            raise GroupingError(
                f"duplicate session id in batch: {session.session_id!r}")
        seen.add(session.session_id)
        if session.metadata.skills_referenced:
            for name in session.metadata.skills_referenced:
                by_skill.setdefault(name, []).append(session)
        else:
            no_skill.append(session)
    return EvidenceGroups(by_skill=by_skill, no_skill=no_skill,
                          batch_id=batch_id)


def _tasks_from_sessions(sessions: Sequence[StructuredSession],
                         cap: int) -> list[TaskDescriptor]:
    # One descriptor per distinct task id; a task counts as failed if any
    # contributing session failed. Failures sort first, then task id.
    failed: dict[str, list[str]] = {}
    succeeded: dict[str, list[str]] = {}
    for session in sessions:
        bucket = failed if session_failed(session) else succeeded
        bucket.setdefault(session.task_id, []).append(session.session_id)
    descriptors = [
        TaskDescriptor(task_id=task_id, failed=True,
                       session_ids=tuple(failed[task_id]
                                         + succeeded.get(task_id, [])))
        for task_id in sorted(failed)
    ]
    descriptors += [
        TaskDescriptor(task_id=task_id, failed=False,
                       session_ids=tuple(succeeded[task_id]))
        for task_id in sorted(succeeded)
        if task_id not in failed
    ]
    return descriptors[:cap]


def select_validation_tasks(candidate_skill: str | None,
                            groups: EvidenceGroups,
                            cap: int = DEFAULT_VALIDATION_CAP,
                            ) -> list[TaskDescriptor]:
    """Pick up to ``cap`` validation tasks for a candidate.

    Tasks come from the candidate's evidence group (or, for a skill with no
    group and for creations addressed by ``None``, the no-skill group).
    Failed-session tasks come first; ties break on task id, so the result is
    deterministic for a given batch.
    """
    if cap < 0:
        raise ValueError(f"cap must be >= 0, got {cap}")
    if candidate_skill is None:
        sessions: Sequence[StructuredSession] = groups.no_skill
    else:
        sessions = groups.by_skill.get(candidate_skill, ())
    return _tasks_from_sessions(sessions, cap)
