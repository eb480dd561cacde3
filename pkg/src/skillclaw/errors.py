"""Exception types shared across the package.

Every error raised by skillclaw code derives from SkillClawError so callers
can catch the package's failures without also swallowing programming bugs.
Subclasses carry the structured context the contracts promise (turn index,
line number, rejected rule name, and so on) as attributes.
"""

from __future__ import annotations


class SkillClawError(Exception):
    """Base class for all errors raised by this package."""


class StructuringError(SkillClawError):
    """A raw session log could not be turned into a structured session."""

    def __init__(self, message: str, *, rollout_index: int | None = None,
                 turn_index: int | None = None) -> None:
        where = ""
        if rollout_index is not None:
            where = f" (rollout {rollout_index}"
            where += f", turn {turn_index})" if turn_index is not None else ")"
        super().__init__(message + where)
        self.rollout_index = rollout_index
        self.turn_index = turn_index


class SessionDecodeError(SkillClawError):
    """A stored session file failed validation on decode."""

    def __init__(self, message: str, *, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class GroupingError(SkillClawError):
    """Evidence grouping rejected a batch (e.g. duplicate session ids)."""


class SkillMdError(SkillClawError):
    """A SKILL.md document is malformed; ``line`` is 1-based."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RepoError(SkillClawError):
    """Skill repository load or save failure."""


class LedgerError(SkillClawError):
    """A skill's history ledger is corrupt or an append would break it."""


class ProtocolViolationError(SkillClawError):
    """An evolver mutated something the workspace contract forbids."""


class ActionParseError(SkillClawError):
    """Raw evolver output did not parse into a known action shape."""


class ConstraintRejectionError(SkillClawError):
    """A parsed action violated a hard constraint; ``rule`` names it."""

    def __init__(self, rule: str, message: str) -> None:
        super().__init__(f"{rule}: {message}")
        self.rule = rule


class WorkspaceBuildError(SkillClawError):
    """Workspace construction failed; no partial workspace is left behind."""


class BackendError(SkillClawError):
    """An evolver backend call failed outright (transport, bad config...)."""


class ExecutionError(SkillClawError):
    """A task executor could not produce an outcome for a validation run."""


class ScenarioError(SkillClawError):
    """A simulation scenario failed validation before any round ran."""


class StageError(SkillClawError):
    """A nightly pipeline stage failed after its retries."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


class RoundInProgressError(SkillClawError):
    """A nightly round was triggered while another one is still running."""


class NotFoundError(SkillClawError):
    """A requested skill, pool, or resource does not exist."""


class PoolGoneError(SkillClawError):
    """A pinned pool version fell out of the retention window."""
