"""Structured session model.

Raw interaction logs arrive as a neutral turn list (``RawSessionLog``) and are
distilled into ``StructuredSession`` values: a step-by-step trajectory per
rollout, aggregate rollout statistics, and derived metadata (skills
referenced, tool-error flag, average process-reward score, and a coarse
quality estimate). Long free text is truncated to a bounded preview so the
stored artifact stays desk-sized.

Derived metadata is never trusted on read: ``decode_session`` recomputes it
from the trajectory and rejects files that disagree.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

from .errors import SessionDecodeError, StructuringError

TRUNCATION_MARKER = "…[truncated]"
DEFAULT_PREVIEW_LIMIT = 400

# Rollouts without an explicit success flag count as succeeded at or above
# this final score.
SUCCESS_THRESHOLD = 0.5

_ROLES = ("user", "assistant")


class Stability(str, enum.Enum):
    """Cross-rollout outcome consistency."""

    ALL_SUCCESS = "all_success"
    ALL_FAIL = "all_fail"
    UNSTABLE = "unstable"


class QualityEstimate(str, enum.Enum):
    """Coarse evidence-quality bucket derived from scores and tool errors."""

    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


class ToolOutcome(str, enum.Enum):
    SUCCESS = "success"
    ERROR = "error"


def truncate_preview(text: str, limit: int = DEFAULT_PREVIEW_LIMIT) -> str:
    """Clamp ``text`` to at most ``limit`` characters.

    Truncated text ends with ``TRUNCATION_MARKER``; the marker is counted
    inside the limit, so the result never exceeds ``limit``. Idempotent.
    """
    if limit <= len(TRUNCATION_MARKER):
        raise ValueError(
            f"preview limit must exceed the marker length "
            f"({len(TRUNCATION_MARKER)}), got {limit}"
        )
    if len(text) <= limit:
        return text
    return text[: limit - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER


def _check_unit(value: float, what: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValueError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{what} must be within [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class ToolCallRecord:
    """One tool invocation inside a step, with bounded previews."""

    tool_name: str
    arguments_preview: str
    outcome: ToolOutcome
    result_preview: str

    def __post_init__(self) -> None:
        if not self.tool_name:
            raise ValueError("tool_name must be non-empty")
        object.__setattr__(self, "outcome", ToolOutcome(self.outcome))


@dataclass(frozen=True)
class TrajectoryStep:
    """One agent action cycle: skills read, tool calls, response, scores."""

    index: int
    skills_used: tuple[str, ...] = ()
    tool_calls: tuple[ToolCallRecord, ...] = ()
    response_snippet: str = ""
    prm_score: float | None = None
    orm_score: float | None = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"step index must be >= 0, got {self.index}")
        object.__setattr__(self, "skills_used",
                           tuple(sorted(set(self.skills_used))))
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        for score, name in ((self.prm_score, "prm_score"),
                            (self.orm_score, "orm_score")):
            if score is not None:
                object.__setattr__(self, name, _check_unit(score, name))


@dataclass(frozen=True)
class RolloutTrace:
    """One complete attempt at the task, scored by the outcome reward."""

    rollout_id: int
    steps: tuple[TrajectoryStep, ...]
    final_score: float
    succeeded: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "final_score",
                          _check_unit(self.final_score, "final_score"))
        for position, step in enumerate(self.steps):
            if step.index != position:
                raise ValueError(
                    f"step indices must be contiguous from 0; "
                    f"found {step.index} at position {position}"
                )


@dataclass(frozen=True)
class AggregateStats:
    """Rollout-level statistics for a multi-rollout session."""

    mean_score: float
    success_count: int
    fail_count: int
    stability: Stability

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean_score",
                          _check_unit(self.mean_score, "mean_score"))
        object.__setattr__(self, "stability", Stability(self.stability))
        if self.success_count < 0 or self.fail_count < 0:
            raise ValueError("rollout counts must be non-negative")
        if self.success_count + self.fail_count == 0:
            raise ValueError("aggregate must cover at least one rollout")
        expected = (
            Stability.ALL_SUCCESS if self.fail_count == 0
            else Stability.ALL_FAIL if self.success_count == 0
            else Stability.UNSTABLE
        )
        if self.stability is not expected:
            raise ValueError(
                f"stability {self.stability.value} inconsistent with counts "
                f"{self.success_count}/{self.fail_count}"
            )


@dataclass(frozen=True)
class SessionMetadata:
    """Derived evidence signals; always recomputable from the trajectory."""

    skills_referenced: tuple[str, ...]
    has_tool_errors: bool
    avg_prm: float | None
    quality_estimate: QualityEstimate

    def __post_init__(self) -> None:
        object.__setattr__(self, "skills_referenced",
                           tuple(sorted(set(self.skills_referenced))))
        if self.avg_prm is not None:
            object.__setattr__(self, "avg_prm",
                              _check_unit(self.avg_prm, "avg_prm"))
        object.__setattr__(self, "quality_estimate",
                           QualityEstimate(self.quality_estimate))


@dataclass(frozen=True)
class StructuredSession:
    """A structured, bounded record of one agent session."""

    session_id: str
    task_id: str
    num_turns: int
    trajectory: tuple[RolloutTrace, ...]
    metadata: SessionMetadata
    aggregate: AggregateStats | None = None
    summary: str | None = None
    pool_version: int | None = None

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ValueError("session_id must be non-empty")
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if self.num_turns < 1:
            raise ValueError(f"num_turns must be >= 1, got {self.num_turns}")
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        if not self.trajectory:
            raise ValueError("trajectory must hold at least one rollout")
        for position, trace in enumerate(self.trajectory):
            if trace.rollout_id != position:
                raise ValueError(
                    f"rollout ids must be ordinal; found {trace.rollout_id} "
                    f"at position {position}"
                )

    def with_summary(self, summary: str | None) -> "StructuredSession":
        return replace(self, summary=summary)


# ---------------------------------------------------------------------------
# Raw input form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawToolCall:
    tool_name: Any
    arguments: Any = ""
    ok: Any = True
    result: Any = ""


@dataclass(frozen=True)
class RawTurn:
    role: Any
    content: Any = ""
    skills_read: Any = ()
    tool_calls: Any = ()
    prm_score: Any = None
    orm_score: Any = None


@dataclass(frozen=True)
class RawRollout:
    turns: Any
    final_score: Any
    succeeded: Any = None


@dataclass(frozen=True)
class RawSessionLog:
    """Neutral, time-ordered turn list as captured at the source."""

    session_id: Any
    task_id: Any
    rollouts: Any
    pool_version: Any = None
    summary: Any = None


def raw_session_from_dict(payload: Mapping[str, Any]) -> RawSessionLog:
    """Build a raw log from a plain dict; validation happens on structuring."""
    rollouts = []
    for entry in payload.get("rollouts") or ():
        turns = []
        for turn in (entry.get("turns") or () if isinstance(entry, Mapping) else ()):
            calls = tuple(
                RawToolCall(
                    tool_name=call.get("tool_name"),
                    arguments=call.get("arguments", ""),
                    ok=call.get("ok", True),
                    result=call.get("result", ""),
                )
                for call in (turn.get("tool_calls") or ())
            ) if isinstance(turn, Mapping) else ()
            turns.append(RawTurn(
                role=turn.get("role") if isinstance(turn, Mapping) else None,
                content=turn.get("content", "") if isinstance(turn, Mapping) else "",
                skills_read=tuple(turn.get("skills_read") or ()) if isinstance(turn, Mapping) else (),
                tool_calls=calls,
                prm_score=turn.get("prm_score") if isinstance(turn, Mapping) else None,
                orm_score=turn.get("orm_score") if isinstance(turn, Mapping) else None,
            ))
        if isinstance(entry, Mapping):
            rollouts.append(RawRollout(
                turns=tuple(turns),
                final_score=entry.get("final_score"),
                succeeded=entry.get("succeeded"),
            ))
    return RawSessionLog(
        session_id=payload.get("session_id"),
        task_id=payload.get("task_id"),
        rollouts=tuple(rollouts),
        pool_version=payload.get("pool_version"),
        summary=payload.get("summary"),
    )


# ---------------------------------------------------------------------------
# Structuring
# ---------------------------------------------------------------------------

def compute_aggregate(rollouts: Sequence[RolloutTrace]) -> AggregateStats:
    """Summarize rollout outcomes; rejects an empty rollout list."""
    if not rollouts:
        raise ValueError("cannot aggregate an empty rollout list")
    successes = sum(1 for trace in rollouts if trace.succeeded)
    failures = len(rollouts) - successes
    mean_score = sum(trace.final_score for trace in rollouts) / len(rollouts)
    stability = (
        Stability.ALL_SUCCESS if failures == 0
        else Stability.ALL_FAIL if successes == 0
        else Stability.UNSTABLE
    )
    return AggregateStats(
        mean_score=mean_score,
        success_count=successes,
        fail_count=failures,
        stability=stability,
    )


def _quality_estimate(avg_prm: float | None, has_tool_errors: bool,
                      stability: Stability) -> QualityEstimate:
    # Rule order matters: the high gate wins over the low gate.
    if avg_prm is not None and avg_prm >= 0.7 and not has_tool_errors:
        return QualityEstimate.HIGH
    if (avg_prm is not None and avg_prm < 0.3) or stability is Stability.ALL_FAIL:
        return QualityEstimate.LOW
    return QualityEstimate.MEDIUM


def derive_metadata(trajectory: Sequence[RolloutTrace],
                    aggregate: AggregateStats | None = None) -> SessionMetadata:
    """Recompute session metadata from the trajectory alone."""
    skills: set[str] = set()
    has_tool_errors = False
    prm_scores: list[float] = []
    for trace in trajectory:
        for step in trace.steps:
            skills.update(step.skills_used)
            if any(call.outcome is ToolOutcome.ERROR for call in step.tool_calls):
                has_tool_errors = True
            if step.prm_score is not None:
                prm_scores.append(step.prm_score)
    avg_prm = sum(prm_scores) / len(prm_scores) if prm_scores else None
    stats = aggregate if aggregate is not None else compute_aggregate(trajectory)
    return SessionMetadata(
        skills_referenced=tuple(sorted(skills)),
        has_tool_errors=has_tool_errors,
        avg_prm=avg_prm,
        quality_estimate=_quality_estimate(avg_prm, has_tool_errors,
                                           stats.stability),
    )


def _structure_tool_call(raw: RawToolCall, limit: int, *, rollout: int,
                         turn: int) -> ToolCallRecord:
    if not isinstance(raw.tool_name, str) or not raw.tool_name:
        raise StructuringError("tool call is missing a tool name",
                               rollout_index=rollout, turn_index=turn)
    if not isinstance(raw.arguments, str):
        raise StructuringError(
            f"tool call arguments must be text, got {type(raw.arguments).__name__}",
            rollout_index=rollout, turn_index=turn)
    if not isinstance(raw.result, str):
        raise StructuringError(
            f"unparseable tool result of type {type(raw.result).__name__}",
            rollout_index=rollout, turn_index=turn)
    if not isinstance(raw.ok, bool):
        raise StructuringError("tool call outcome flag must be a boolean",
                               rollout_index=rollout, turn_index=turn)
    return ToolCallRecord(
        tool_name=raw.tool_name,
        arguments_preview=truncate_preview(raw.arguments, limit),
        outcome=ToolOutcome.SUCCESS if raw.ok else ToolOutcome.ERROR,
        result_preview=truncate_preview(raw.result, limit),
    )


def _optional_unit(value: Any, what: str, *, rollout: int,
                   turn: int) -> float | None:
    if value is None:
        return None
    try:
        return _check_unit(value, what)
    except ValueError as exc:
        raise StructuringError(str(exc), rollout_index=rollout,
                               turn_index=turn) from exc


def structure_session(raw: RawSessionLog, *,
                      preview_limit: int = DEFAULT_PREVIEW_LIMIT,
                      success_threshold: float = SUCCESS_THRESHOLD,
                      ) -> StructuredSession:
    """Distill a raw turn log into a structured session.

    Each assistant turn becomes one trajectory step carrying the skills it
    read, its tool calls, a bounded response snippet, and per-step scores.
    User turns count toward ``num_turns`` but produce no step of their own.
    Rollouts without an explicit success flag succeed at final_score >=
    ``success_threshold``.
    """
    if not isinstance(raw.session_id, str) or not raw.session_id:
        raise StructuringError("raw log has no session_id")
    if not isinstance(raw.task_id, str) or not raw.task_id:
        raise StructuringError("raw log has no task_id")
    if not raw.rollouts:
        raise StructuringError("raw log has no rollouts")

    traces: list[RolloutTrace] = []
    num_turns = 0
    for rollout_index, rollout in enumerate(raw.rollouts):
        turns = tuple(rollout.turns or ())
        if not turns:
            raise StructuringError("rollout has no turns",
                                   rollout_index=rollout_index)
        steps: list[TrajectoryStep] = []
        for turn_index, turn in enumerate(turns):
            num_turns += 1
            if turn.role not in _ROLES:
                raise StructuringError(
                    f"turn role must be one of {_ROLES}, got {turn.role!r}",
                    rollout_index=rollout_index, turn_index=turn_index)
            if not isinstance(turn.content, str):
                raise StructuringError(
                    f"turn content must be text, got {type(turn.content).__name__}",
                    rollout_index=rollout_index, turn_index=turn_index)
            if turn.role != "assistant":
                continue
            skills = tuple(turn.skills_read or ())
            if any(not isinstance(name, str) or not name for name in skills):
                raise StructuringError("skill references must be non-empty names",
                                       rollout_index=rollout_index,
                                       turn_index=turn_index)
            calls = tuple(
                _structure_tool_call(call, preview_limit,
                                     rollout=rollout_index, turn=turn_index)
                for call in (turn.tool_calls or ())
            )
            steps.append(TrajectoryStep(
                index=len(steps),
                skills_used=skills,
                tool_calls=calls,
                response_snippet=truncate_preview(turn.content, preview_limit),
                prm_score=_optional_unit(turn.prm_score, "prm_score",
                                         rollout=rollout_index,
                                         turn=turn_index),
                orm_score=_optional_unit(turn.orm_score, "orm_score",
                                         rollout=rollout_index,
                                         turn=turn_index),
            ))
        try:
            final_score = _check_unit(rollout.final_score, "final_score")
        except ValueError as exc:
            raise StructuringError(str(exc),
                                   rollout_index=rollout_index) from exc
        if rollout.succeeded is None:
            succeeded = final_score >= success_threshold
        elif isinstance(rollout.succeeded, bool):
            succeeded = rollout.succeeded
        else:
            raise StructuringError("succeeded flag must be a boolean",
                                   rollout_index=rollout_index)
        traces.append(RolloutTrace(
            rollout_id=rollout_index,
            steps=tuple(steps),
            final_score=final_score,
            succeeded=succeeded,
        ))

    trajectory = tuple(traces)
    aggregate = compute_aggregate(trajectory)
    summary = raw.summary if isinstance(raw.summary, str) else None
    pool_version = raw.pool_version if isinstance(raw.pool_version, int) else None
    return StructuredSession(
        session_id=raw.session_id,
        task_id=raw.task_id,
        num_turns=num_turns,
        trajectory=trajectory,
        metadata=derive_metadata(trajectory, aggregate),
        aggregate=aggregate,
        summary=summary,
        pool_version=pool_version,
    )


# ---------------------------------------------------------------------------
# Storage codec
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("session_id", "task_id", "num_turns", "_skills_referenced",
                    "_has_tool_errors", "_trajectory")


def session_to_dict(session: StructuredSession) -> dict[str, Any]:
    """Render a session as its storage dict, fixed key order."""
    payload: dict[str, Any] = {
        "session_id": session.session_id,
        "task_id": session.task_id,
        "num_turns": session.num_turns,
        "aggregate": None if session.aggregate is None else {
            "mean_score": session.aggregate.mean_score,
            "success_count": session.aggregate.success_count,
            "fail_count": session.aggregate.fail_count,
            "stability": session.aggregate.stability.value,
        },
        "_skills_referenced": list(session.metadata.skills_referenced),
        "_avg_prm": session.metadata.avg_prm,
        "_has_tool_errors": session.metadata.has_tool_errors,
        "_trajectory": [
            {
                "rollout_id": trace.rollout_id,
                "final_score": trace.final_score,
                "succeeded": trace.succeeded,
                "steps": [
                    {
                        "index": step.index,
                        "skills_used": list(step.skills_used),
                        "tool_calls": [
                            {
                                "tool_name": call.tool_name,
                                "arguments_preview": call.arguments_preview,
                                "outcome": call.outcome.value,
                                "result_preview": call.result_preview,
                            }
                            for call in step.tool_calls
                        ],
                        "response_snippet": step.response_snippet,
                        "prm_score": step.prm_score,
                        "orm_score": step.orm_score,
                    }
                    for step in trace.steps
                ],
            }
            for trace in session.trajectory
        ],
        "_summary": session.summary,
    }
    if session.pool_version is not None:
        payload["pool_version"] = session.pool_version
    return payload


def encode_session(session: StructuredSession) -> bytes:
    """Serialize a session to its on-disk JSON form."""
    text = json.dumps(session_to_dict(session), ensure_ascii=False, indent=2)
    return (text + "\n").encode("utf-8")


def _require(payload: Mapping[str, Any], key: str) -> Any:
    if key not in payload:
        raise SessionDecodeError(f"missing required field {key!r}", field=key)
    return payload[key]


def _decode_step(entry: Any, where: str) -> TrajectoryStep:
    if not isinstance(entry, Mapping):
        raise SessionDecodeError(f"{where} must be an object", field=where)
    calls = []
    for call_index, call in enumerate(entry.get("tool_calls") or ()):
        call_where = f"{where}.tool_calls[{call_index}]"
        if not isinstance(call, Mapping):
            raise SessionDecodeError(f"{call_where} must be an object",
                                     field=call_where)
        try:
            calls.append(ToolCallRecord(
                tool_name=call.get("tool_name") or "",
                arguments_preview=call.get("arguments_preview") or "",
                outcome=call.get("outcome"),
                result_preview=call.get("result_preview") or "",
            ))
        except ValueError as exc:
            raise SessionDecodeError(f"{call_where}: {exc}",
                                     field=call_where) from exc
    try:
        return TrajectoryStep(
            index=_require(entry, "index"),
            skills_used=tuple(entry.get("skills_used") or ()),
            tool_calls=tuple(calls),
            response_snippet=entry.get("response_snippet") or "",
            prm_score=entry.get("prm_score"),
            orm_score=entry.get("orm_score"),
        )
    except SessionDecodeError:
        raise
    except (TypeError, ValueError) as exc:
        raise SessionDecodeError(f"{where}: {exc}", field=where) from exc


def session_from_dict(payload: Mapping[str, Any]) -> StructuredSession:
    """Rebuild a session from its storage dict, verifying derived fields."""
    if not isinstance(payload, Mapping):
        raise SessionDecodeError("session payload must be a JSON object")
    for key in _REQUIRED_FIELDS:
        _require(payload, key)

    traces: list[RolloutTrace] = []
    trajectory_raw = payload["_trajectory"]
    if not isinstance(trajectory_raw, Sequence) or isinstance(trajectory_raw, (str, bytes)):
        raise SessionDecodeError("_trajectory must be a list",
                                 field="_trajectory")
    for trace_index, entry in enumerate(trajectory_raw):
        where = f"_trajectory[{trace_index}]"
        if not isinstance(entry, Mapping):
            raise SessionDecodeError(f"{where} must be an object", field=where)
        steps = tuple(
            _decode_step(step, f"{where}.steps[{step_index}]")
            for step_index, step in enumerate(entry.get("steps") or ())
        )
        try:
            traces.append(RolloutTrace(
                rollout_id=_require(entry, "rollout_id"),
                steps=steps,
                final_score=_require(entry, "final_score"),
                succeeded=bool(_require(entry, "succeeded")),
            ))
        except SessionDecodeError:
            raise
        except (TypeError, ValueError) as exc:
            raise SessionDecodeError(f"{where}: {exc}", field=where) from exc

    aggregate_raw = payload.get("aggregate")
    aggregate = None
    if aggregate_raw is not None:
        if not isinstance(aggregate_raw, Mapping):
            raise SessionDecodeError("aggregate must be an object",
                                     field="aggregate")
        try:
            aggregate = AggregateStats(
                mean_score=_require(aggregate_raw, "mean_score"),
                success_count=_require(aggregate_raw, "success_count"),
                fail_count=_require(aggregate_raw, "fail_count"),
                stability=_require(aggregate_raw, "stability"),
            )
        except SessionDecodeError:
            raise
        except (TypeError, ValueError) as exc:
            raise SessionDecodeError(f"aggregate: {exc}",
                                     field="aggregate") from exc
        if aggregate != compute_aggregate(traces):
            raise SessionDecodeError(
                "aggregate does not match the stored trajectory",
                field="aggregate")

    derived = derive_metadata(traces, aggregate)
    try:
        stored = SessionMetadata(
            skills_referenced=tuple(payload["_skills_referenced"] or ()),
            has_tool_errors=bool(payload["_has_tool_errors"]),
            avg_prm=payload.get("_avg_prm"),
            quality_estimate=derived.quality_estimate,
        )
    except (TypeError, ValueError) as exc:
        raise SessionDecodeError(f"metadata fields: {exc}",
                                 field="_skills_referenced") from exc
    if stored != derived:
        raise SessionDecodeError(
            "stored metadata does not match the trajectory "
            f"(stored {stored}, derived {derived})",
            field="_skills_referenced")

    summary = payload.get("_summary")
    if summary is not None and not isinstance(summary, str):
        raise SessionDecodeError("_summary must be text or null",
                                 field="_summary")
    pool_version = payload.get("pool_version")
    if pool_version is not None and not isinstance(pool_version, int):
        raise SessionDecodeError("pool_version must be an integer or absent",
                                 field="pool_version")

    try:
        return StructuredSession(
            session_id=payload["session_id"],
            task_id=payload["task_id"],
            num_turns=payload["num_turns"],
            trajectory=tuple(traces),
            metadata=derived,
            aggregate=aggregate,
            summary=summary,
            pool_version=pool_version,
        )
    except (TypeError, ValueError) as exc:
        raise SessionDecodeError(str(exc)) from exc


def decode_session(data: bytes | str) -> StructuredSession:
    """Parse and validate a stored session file."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SessionDecodeError(f"session file is not UTF-8: {exc}") from exc
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SessionDecodeError(f"session file is not valid JSON: {exc}") from exc
    return session_from_dict(payload)
