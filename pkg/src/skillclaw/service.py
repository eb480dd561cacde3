"""Central sync service: session intake, pool serving, nightly rounds.

Everything lives under one data directory::

    repo/                      authoritative skill store (see repo.py)
    pools/<N>/                 immutable published snapshots
    pools/CURRENT              pointer file naming the live snapshot
    batches/<id>/              uploaded session files, one dir per batch
    batches/CURRENT            the batch uploads currently land in
    rounds/<N>/                per-round stage outputs and the Round record
    candidates/, verdict_log.jsonl   candidate archive (see gate.py)
    workspace/                 evolver workspace in whole-workspace mode

The nightly pipeline is a fixed sequence of stages (seal batch, structure,
group, evolve, validate, promote, finalize). Each stage persists its output
atomically before the next one starts, and a stage whose output already
exists is skipped on the next run — so a crash anywhere resumes to the same
Round record, and the promote stage's effects (repository commits, pool
publication, pointer swap) are individually idempotent, which keeps
publication at-most-once.

Uploads are concurrency-safe: a session is durably stored in exactly one
batch before it is acknowledged, duplicate ids are acknowledged without a
second store, and sealing a batch waits out in-flight writers so the round
boundary never splits or drops a session.
"""

from __future__ import annotations

import json
import logging
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .actions import (CreateSkill, EvolutionAction, ImproveSkill, Skip,
                      action_to_dict, parse_action, skill_from_action)
from .backends import EvolverBackend, GatewayConfig, GatewayEvolver, ScriptedEvolver
from .errors import (ExecutionError, NotFoundError, PoolGoneError,
                     RoundInProgressError, SessionDecodeError, SkillClawError,
                     StageError)
from .evidence import (DEFAULT_VALIDATION_CAP, EvidenceGroups, TaskDescriptor,
                       group_sessions, select_validation_tasks)
from .gate import (Candidate, CandidateArchive, Clock, Decision,
                   DeploymentPool, TaskExecutor, Verdict, promote, utc_now,
                   validate)
from .evolver import WorkspaceMode, build_workspace, run_agentic_evolution, \
    run_group_evolution
from .repo import (SkillRecord, SkillRepository, atomic_write_json,
                   atomic_write_text, load_repo)
from .sessions import (StructuredSession, decode_session, encode_session,
                       session_from_dict, session_to_dict)
from .skillmd import Skill, parse_skill_md, render_skill_md

logger = logging.getLogger(__name__)

STAGES = ("structure", "group", "evolve", "validate", "promote", "finalize")

_BATCH_PREFIX = "b"
_PROCESSED_MARKER = "PROCESSED"


@dataclass(frozen=True)
class ServiceConfig:
    """Service settings; file values can be overridden by environment."""

    data_dir: Path
    listen: str = "127.0.0.1:8420"
    round_schedule: str = "manual"
    users_expected: int = 8
    backend: str = "scripted"
    evolution_mode: str = "group"      # "group" | "agentic"
    workspace_mode: str = "fresh"      # "fresh" | "no_fresh"
    validation_cap: int = DEFAULT_VALIDATION_CAP
    admin_token: str | None = None
    stage_retries: int = 1
    pool_retention: int = 2
    script_path: Path | None = None

    @classmethod
    def from_file(cls, path: Path | str | None,
                  environ: Mapping[str, str] | None = None) -> "ServiceConfig":
        import os
        env = os.environ if environ is None else environ
        values: dict[str, Any] = {}
        if path is not None:
            payload = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
            if payload is None:
                payload = {}
            if not isinstance(payload, dict):
                raise SkillClawError("service config must be a mapping")
            values.update(payload)
        if env.get("SKILLCLAW_DATA_DIR"):
            values["data_dir"] = env["SKILLCLAW_DATA_DIR"]
        if env.get("SKILLCLAW_LISTEN"):
            values["listen"] = env["SKILLCLAW_LISTEN"]
        if env.get("SKILLCLAW_ADMIN_TOKEN"):
            values["admin_token"] = env["SKILLCLAW_ADMIN_TOKEN"]
        if "data_dir" not in values:
            raise SkillClawError(
                "data_dir must be set (config file or SKILLCLAW_DATA_DIR)")
        values["data_dir"] = Path(values["data_dir"])
        if values.get("script_path"):
            values["script_path"] = Path(values["script_path"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise SkillClawError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass(frozen=True)
class Round:
    """Auditable record of one nightly round."""

    day_index: int
    batch: tuple[StructuredSession, ...]
    actions: tuple[tuple[str | None, EvolutionAction], ...]
    verdicts: tuple[dict, ...]
    pool_before: int
    pool_after: int

    @property
    def accepted_skills(self) -> tuple[str, ...]:
        return tuple(sorted(
            entry["candidate"]["skill_name"] for entry in self.verdicts
            if entry["verdict"]["decision"] == Decision.ACCEPT.value
            and entry.get("deployed", True)))


class _NullExecutor:
    """Placeholder executor for deployments with no execution environment;
    every validation run fails, so every candidate rejects honestly."""

    def run(self, task: TaskDescriptor, pool: Mapping[str, SkillRecord]):
        raise ExecutionError("no task execution environment is configured")


BackendFactory = Callable[[int], EvolverBackend]


def _scripted_factory(script_path: Path | None) -> BackendFactory:
    """Scripted backend from a day-keyed script file (all-skip if absent)."""
    table: dict[int, dict[str | None, list[str]]] = {}
    if script_path is not None:
        payload = json.loads(Path(script_path).read_text(encoding="utf-8"))
        for day_key, scopes in payload.items():
            day_table: dict[str | None, list[str]] = {}
            for scope_key, entries in scopes.items():
                scope = scope_key if scope_key else None
                day_table[scope] = [
                    entry if isinstance(entry, str)
                    else json.dumps(entry, ensure_ascii=False)
                    for entry in entries
                ]
            table[int(day_key)] = day_table

    def factory(day: int) -> EvolverBackend:
        return ScriptedEvolver(script=table.get(day, {}))

    return factory


class Orchestrator:
    """The service core; the HTTP layer in api.py is a thin shell over it."""

    def __init__(self, config: ServiceConfig, *,
                 backend_factory: BackendFactory | None = None,
                 executor: TaskExecutor | None = None,
                 judge: Callable | None = None,
                 clock: Clock = utc_now) -> None:
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.clock = clock
        self.judge = judge
        self.executor: TaskExecutor = executor or _NullExecutor()
        if backend_factory is not None:
            self.backend_factory = backend_factory
        elif config.backend == "gateway":
            self.backend_factory = lambda day: GatewayEvolver(
                GatewayConfig.from_env())
        else:
            self.backend_factory = _scripted_factory(config.script_path)

        self.pools_dir = self.data_dir / "pools"
        self.batches_dir = self.data_dir / "batches"
        self.rounds_dir = self.data_dir / "rounds"
        self.workspace_dir = self.data_dir / "workspace"
        self.archive = CandidateArchive(self.data_dir)

        self._state_lock = threading.Lock()
        self._flushed = threading.Condition(self._state_lock)
        self._in_flight: dict[str, int] = {}
        self._pipeline_lock = threading.Lock()

        for directory in (self.pools_dir, self.batches_dir, self.rounds_dir):
            directory.mkdir(parents=True, exist_ok=True)
        self.repo: SkillRepository = load_repo(self.data_dir / "repo")

        self._current_batch = self._init_batches()
        self._seen_ids = self._scan_seen_ids()
        self._ensure_initial_pool()

    # ------------------------------------------------------------------
    # batches and uploads
    # ------------------------------------------------------------------

    def _batch_pointer(self) -> Path:
        return self.batches_dir / "CURRENT"

    def _init_batches(self) -> str:
        pointer = self._batch_pointer()
        if pointer.exists():
            batch_id = pointer.read_text(encoding="utf-8").strip()
            (self.batches_dir / batch_id).mkdir(exist_ok=True)
            return batch_id
        batch_id = f"{_BATCH_PREFIX}000001"
        (self.batches_dir / batch_id).mkdir(exist_ok=True)
        atomic_write_text(pointer, batch_id + "\n")
        return batch_id

    def _scan_seen_ids(self) -> set[str]:
        seen: set[str] = set()
        for batch_dir in self.batches_dir.glob(f"{_BATCH_PREFIX}*"):
            if batch_dir.is_dir():
                seen.update(p.stem for p in batch_dir.glob("*.json"))
        return seen

    def upload_session(self, payload: bytes) -> dict:
        """Validate, durably store, and acknowledge one session upload."""
        session = decode_session(payload)
        session_id = session.session_id
        with self._state_lock:
            if session_id in self._seen_ids:
                return {"session_id": session_id}
            self._seen_ids.add(session_id)
            batch_id = self._current_batch
            self._in_flight[batch_id] = self._in_flight.get(batch_id, 0) + 1
        try:
            target = self.batches_dir / batch_id / f"{session_id}.json"
            atomic_write_text(target,
                              encode_session(session).decode("utf-8"))
        except Exception:
            with self._state_lock:
                self._seen_ids.discard(session_id)
            raise
        finally:
            with self._flushed:
                self._in_flight[batch_id] -= 1
                self._flushed.notify_all()
        return {"session_id": session_id}

    def seal_batch(self) -> str:
        """Close the open batch; uploads from now on land in a fresh one."""
        with self._flushed:
            sealed = self._current_batch
            next_id = f"{_BATCH_PREFIX}{int(sealed[len(_BATCH_PREFIX):]) + 1:06d}"
            (self.batches_dir / next_id).mkdir(exist_ok=True)
            atomic_write_text(self._batch_pointer(), next_id + "\n")
            self._current_batch = next_id
            while self._in_flight.get(sealed, 0) > 0:
                self._flushed.wait()
        return sealed

    def _unprocessed_batches(self) -> list[str]:
        sealed = []
        for batch_dir in sorted(self.batches_dir.glob(f"{_BATCH_PREFIX}*")):
            if not batch_dir.is_dir():
                continue
            if batch_dir.name == self._current_batch:
                continue
            if (batch_dir / _PROCESSED_MARKER).exists():
                continue
            sealed.append(batch_dir.name)
        return sealed

    # ------------------------------------------------------------------
    # pools
    # ------------------------------------------------------------------

    def _pool_pointer(self) -> Path:
        return self.pools_dir / "CURRENT"

    def get_pool_version(self) -> int:
        pointer = self._pool_pointer()
        if not pointer.exists():
            raise NotFoundError("no pool has been published yet")
        return int(pointer.read_text(encoding="utf-8").strip())

    def _ensure_initial_pool(self) -> None:
        if not self._pool_pointer().exists():
            self._write_pool_snapshot(1, self.repo.records)
            atomic_write_text(self._pool_pointer(), "1\n")

    def _write_pool_snapshot(self, version: int,
                             records: Mapping[str, SkillRecord]) -> None:
        """Materialize pools/<version>; complete dirs appear via one rename."""
        final_dir = self.pools_dir / str(version)
        if final_dir.exists():
            return
        staging = self.pools_dir / f".{version}.building"
        if staging.exists():
            shutil.rmtree(staging)
        skills_dir = staging / "skills"
        skills_dir.mkdir(parents=True)
        manifest = {
            "pool_version": version,
            "published_at": self.clock(),
            "skills": [
                {
                    "name": record.skill.name,
                    "description": record.skill.description,
                    "category": record.skill.category,
                    "version": record.version,
                    "digest": record.content_digest,
                    "skill_id": record.skill_id,
                }
                for _, record in sorted(records.items())
            ],
        }
        (staging / "manifest.json").write_text(
            json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True)
            + "\n", encoding="utf-8")
        for name, record in records.items():
            (skills_dir / f"{name}.md").write_text(
                render_skill_md(record.skill), encoding="utf-8")
        staging.rename(final_dir)

    def _pool_dir(self, version: int) -> Path:
        current = self.get_pool_version()
        if version > current or version < 1:
            raise NotFoundError(f"pool version {version} does not exist")
        directory = self.pools_dir / str(version)
        if not directory.exists():
            raise PoolGoneError(
                f"pool version {version} fell out of the retention window")
        return directory

    def get_manifest(self, pool: int | None = None) -> bytes:
        version = self.get_pool_version() if pool is None else pool
        return (self._pool_dir(version) / "manifest.json").read_bytes()

    def get_skill(self, name: str, pool: int | None = None) -> bytes:
        version = self.get_pool_version() if pool is None else pool
        path = self._pool_dir(version) / "skills" / f"{name}.md"
        if not path.exists():
            raise NotFoundError(f"no skill {name!r} in pool {version}")
        return path.read_bytes()

    def load_pool(self, version: int) -> DeploymentPool:
        directory = self._pool_dir(version)
        manifest = json.loads((directory / "manifest.json")
                              .read_text(encoding="utf-8"))
        records: dict[str, SkillRecord] = {}
        for entry in manifest["skills"]:
            text = (directory / "skills" / f"{entry['name']}.md").read_text(
                encoding="utf-8")
            records[entry["name"]] = SkillRecord(
                skill=parse_skill_md(text),
                skill_id=entry["skill_id"],
                version=entry["version"],
                content_digest=entry["digest"],
            )
        return DeploymentPool(pool_version=manifest["pool_version"],
                              skills=records,
                              published_at=manifest["published_at"])

    def _gc_pools(self, newest: int) -> None:
        floor = newest - self.config.pool_retention + 1
        for directory in self.pools_dir.glob("[0-9]*"):
            if directory.is_dir() and int(directory.name) < floor:
                shutil.rmtree(directory, ignore_errors=True)

    # ------------------------------------------------------------------
    # nightly pipeline
    # ------------------------------------------------------------------

    def run_night(self, *, after_stage: Callable[[str], None] | None = None,
                  ) -> Round:
        """Run (or resume) one nightly round; at most one at a time."""
        if not self._pipeline_lock.acquire(blocking=False):
            raise RoundInProgressError("a nightly round is already running")
        try:
            return self._run_night_locked(after_stage)
        finally:
            self._pipeline_lock.release()

    def _round_dirs(self) -> list[int]:
        return sorted(int(p.name) for p in self.rounds_dir.glob("[0-9]*")
                      if p.is_dir())

    def _resume_or_new(self) -> int:
        existing = self._round_dirs()
        for index in existing:
            round_dir = self.rounds_dir / str(index)
            if not (round_dir / "round.json").exists() \
                    and not (round_dir / "aborted.json").exists():
                logger.info("resuming incomplete round %d", index)
                return index
        return (existing[-1] + 1) if existing else 1

    def _stage(self, round_dir: Path, name: str, build: Callable[[], Any],
               after_stage: Callable[[str], None] | None) -> Any:
        """Load a stage's persisted output, or build and persist it."""
        path = round_dir / f"{name}.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        attempts = self.config.stage_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                payload = build()
                break
            except Exception as exc:  # noqa: BLE001 - stage boundary
                last = exc
                logger.warning("stage %s failed (attempt %d/%d): %s",
                               name, attempt + 1, attempts, exc)
        else:
            if name in ("structure", "group", "evolve", "validate"):
                atomic_write_json(round_dir / "aborted.json",
                                  {"stage": name, "error": str(last)})
                logger.error("round aborted at stage %s; batch carries "
                             "forward", name)
            raise StageError(name, str(last))
        atomic_write_json(path, payload)
        if after_stage is not None:
            after_stage(name)
        return payload

    def _run_night_locked(self, after_stage) -> Round:
        round_index = self._resume_or_new()
        round_dir = self.rounds_dir / str(round_index)
        round_dir.mkdir(exist_ok=True)

        # Stage 0 happens before anything persists: freeze the batch set and
        # the pool the whole round will be judged against.
        batch_path = round_dir / "batch.json"
        if batch_path.exists():
            batch_info = json.loads(batch_path.read_text(encoding="utf-8"))
        else:
            self.seal_batch()
            batch_info = {
                "batch_ids": self._unprocessed_batches(),
                "pool_before": self.get_pool_version(),
            }
            atomic_write_json(batch_path, batch_info)
            if after_stage is not None:
                after_stage("batch")
        batch_ids: list[str] = batch_info["batch_ids"]
        pool_before: int = batch_info["pool_before"]

        sessions_payload = self._stage(
            round_dir, "structure",
            lambda: self._stage_structure(batch_ids), after_stage)
        sessions = [session_from_dict(entry)
                    for entry in sessions_payload["sessions"]]

        batch_tag = "+".join(batch_ids) if batch_ids else f"round-{round_index}"
        groups = group_sessions(sessions, batch_id=batch_tag)
        self._stage(round_dir, "group",
                    lambda: self._stage_group(groups), after_stage)

        actions_payload = self._stage(
            round_dir, "evolve",
            lambda: self._stage_evolve(round_index, groups, sessions),
            after_stage)
        actions = [
            (entry["scope"], parse_action(json.dumps(entry["action"])))
            for entry in actions_payload["actions"]
        ]

        verdicts_payload = self._stage(
            round_dir, "validate",
            lambda: self._stage_validate(pool_before, groups,
                                         actions_payload["actions"]),
            after_stage)

        publish_payload = self._stage(
            round_dir, "promote",
            lambda: self._stage_promote(round_index, pool_before,
                                        verdicts_payload["verdicts"]),
            after_stage)

        record_path = round_dir / "round.json"
        if record_path.exists():
            record_payload = json.loads(record_path.read_text(
                encoding="utf-8"))
        else:
            record_payload = self._build_round_record(
                round_index, batch_ids, sessions_payload, actions_payload,
                verdicts_payload, publish_payload)
            for batch_id in batch_ids:
                marker = self.batches_dir / batch_id / _PROCESSED_MARKER
                if not marker.exists():
                    atomic_write_text(marker, f"round {round_index}\n")
            atomic_write_json(record_path, record_payload)
            if after_stage is not None:
                after_stage("finalize")

        return Round(
            day_index=round_index,
            batch=tuple(sessions),
            actions=tuple(actions),
            verdicts=tuple(record_payload["verdicts"]),
            pool_before=publish_payload["pool_before"],
            pool_after=publish_payload["pool_after"],
        )

    # -- individual stages -------------------------------------------------

    def _stage_structure(self, batch_ids: Sequence[str]) -> dict:
        by_id: dict[str, dict] = {}
        for batch_id in batch_ids:
            for path in sorted((self.batches_dir / batch_id).glob("*.json")):
                try:
                    session = decode_session(path.read_bytes())
                except SessionDecodeError as exc:
                    logger.warning("skipping undecodable session file %s: %s",
                                   path.name, exc)
                    continue
                if session.session_id in by_id:
                    logger.warning("duplicate session %s across batches; "
                                   "keeping the first", session.session_id)
                    continue
                by_id[session.session_id] = session_to_dict(session)
        ordered = [by_id[key] for key in sorted(by_id)]
        return {"session_ids": sorted(by_id), "sessions": ordered}

    def _stage_group(self, groups: EvidenceGroups) -> dict:
        return {
            "batch_id": groups.batch_id,
            "by_skill": {name: [s.session_id for s in members]
                         for name, members in sorted(groups.by_skill.items())},
            "no_skill": [s.session_id for s in groups.no_skill],
        }

    def _stage_evolve(self, round_index: int, groups: EvidenceGroups,
                      sessions: Sequence[StructuredSession]) -> dict:
        backend = self.backend_factory(round_index)
        if self.config.evolution_mode == "agentic":
            return self._evolve_agentic(backend, sessions)
        pairs = run_group_evolution(groups, self.repo, backend)
        entries = []
        for scope, action in pairs:
            entries.append({
                "scope": scope,
                "action": action_to_dict(action),
                "evidence": self._group_evidence_text(groups, scope, action),
            })
        return {"mode": "group", "actions": entries}

    def _group_evidence_text(self, groups: EvidenceGroups, scope: str | None,
                             action: EvolutionAction) -> str:
        if isinstance(action, Skip):
            return ""
        members = (groups.no_skill if scope is None
                   else groups.by_skill.get(scope, []))
        ids = ", ".join(s.session_id for s in members) or "(none)"
        lines = [f"batch: {groups.batch_id}",
                 f"sessions: {ids}",
                 f"action: {action_to_dict(action)['action']}",
                 f"rationale: {getattr(action, 'rationale', '')}"]
        if isinstance(action, ImproveSkill) and action.edit_summary.notes:
            lines.append(f"notes: {action.edit_summary.notes}")
        return "\n".join(lines) + "\n"

    def _evolve_agentic(self, backend: EvolverBackend,
                        sessions: Sequence[StructuredSession]) -> dict:
        workspace = build_workspace(self.repo, sessions,
                                    WorkspaceMode(self.config.workspace_mode),
                                    self.workspace_dir)
        changes = run_agentic_evolution(workspace, backend)
        entries = []
        for name in changes.created:
            skill = parse_skill_md(workspace.skill_text(name))
            entries.append({
                "scope": None,
                "action": {
                    "action": "create_skill",
                    "rationale": "workspace evolution created this skill",
                    "skill": {"name": skill.name,
                              "description": skill.description,
                              "content": skill.body},
                },
                "evidence": workspace.latest_evidence(name),
            })
        for name in changes.modified:
            skill = parse_skill_md(workspace.skill_text(name))
            entries.append({
                "scope": name,
                "action": {
                    "action": "improve_skill",
                    "rationale": "workspace evolution edited this skill",
                    "skill": {
                        "name": skill.name,
                        "description": skill.description,
                        "content": skill.body,
                        "category": skill.category,
                        "edit_summary": {"preserved_sections": [],
                                         "changed_sections": [],
                                         "notes": "whole-workspace edit"},
                    },
                },
                "evidence": workspace.latest_evidence(name),
            })
        return {"mode": "agentic", "actions": entries}

    def _stage_validate(self, pool_before: int, groups: EvidenceGroups,
                        action_entries: Sequence[dict]) -> dict:
        pool = self.load_pool(pool_before)
        cap = self.config.validation_cap
        verdicts = []
        for entry in action_entries:
            action = parse_action(json.dumps(entry["action"]))
            if isinstance(action, Skip):
                continue
            scope = entry["scope"]
            if isinstance(action, CreateSkill):
                baseline = None
                tasks = select_validation_tasks(None, groups, cap)
            else:
                baseline = pool.skills.get(action.name)
                if baseline is None:
                    logger.warning("skipping candidate for %r: not in pool %d",
                                   action.name, pool_before)
                    continue
                tasks = select_validation_tasks(action.name, groups, cap)
            proposed = skill_from_action(
                action,
                baseline if baseline is not None else None)
            candidate = Candidate(skill_name=action.name, baseline=baseline,
                                  proposed=proposed, origin_action=action,
                                  evidence_batch=groups.batch_id)
            verdict = validate(candidate, tasks, self.executor, pool,
                               self.judge)
            verdicts.append({
                "candidate": {
                    "skill_name": candidate.skill_name,
                    "baseline_version": (None if baseline is None
                                         else baseline.version),
                    "proposed": {
                        "name": proposed.name,
                        "description": proposed.description,
                        "category": proposed.category,
                        "body": proposed.body,
                        "extras": list(proposed.extras),
                    },
                    "origin_action": entry["action"],
                    "evidence": entry.get("evidence", ""),
                    "evidence_batch": groups.batch_id,
                },
                "verdict": {
                    "decision": verdict.decision.value,
                    "old_score": verdict.old_score,
                    "new_score": verdict.new_score,
                    "task_count": verdict.task_count,
                    "rationale": verdict.rationale,
                },
                "tasks": [task.task_id for task in tasks],
            })
        return {"verdicts": verdicts}

    def _stage_promote(self, round_index: int, pool_before: int,
                       verdict_entries: Sequence[dict]) -> dict:
        pool = self.load_pool(pool_before)
        pairs: list[tuple[Candidate, Verdict]] = []
        evidence_by_key: dict[str, str] = {}
        for entry in verdict_entries:
            spec = entry["candidate"]
            proposed = Skill(
                name=spec["proposed"]["name"],
                description=spec["proposed"]["description"],
                body=spec["proposed"]["body"],
                category=spec["proposed"]["category"],
                extras=tuple(spec["proposed"].get("extras", ())),
            )
            baseline = (pool.skills.get(spec["skill_name"])
                        if spec["baseline_version"] is not None else None)
            candidate = Candidate(
                skill_name=spec["skill_name"],
                baseline=baseline,
                proposed=proposed,
                origin_action=parse_action(json.dumps(spec["origin_action"])),
                evidence_batch=spec.get("evidence_batch", ""),
            )
            verdict = Verdict(
                decision=entry["verdict"]["decision"],
                old_score=entry["verdict"]["old_score"],
                new_score=entry["verdict"]["new_score"],
                task_count=entry["verdict"]["task_count"],
                rationale=entry["verdict"]["rationale"],
            )
            pairs.append((candidate, verdict))
            evidence_by_key[candidate.skill_name + "/" +
                            candidate.proposed_record().content_digest] = \
                spec.get("evidence", "")

        new_pool = promote(pool, pairs, clock=self.clock,
                           archive=self.archive, round_index=round_index)
        deployed: dict[str, int] = {}
        if new_pool is not pool:
            for candidate, verdict in pairs:
                if not verdict.accepted:
                    continue
                record = new_pool.skills[candidate.skill_name]
                if record.content_digest != \
                        candidate.proposed_record().content_digest:
                    continue  # lost a same-skill conflict
                evidence = evidence_by_key.get(
                    candidate.skill_name + "/" + record.content_digest, "")
                self.repo.commit_update(candidate.proposed,
                                        evidence or "(no evidence note)")
                deployed[candidate.skill_name] = record.version
            self._write_pool_snapshot(new_pool.pool_version, new_pool.skills)
            current = self.get_pool_version()
            if current < new_pool.pool_version:
                atomic_write_text(self._pool_pointer(),
                                  f"{new_pool.pool_version}\n")
            self._gc_pools(new_pool.pool_version)
        return {
            "pool_before": pool_before,
            "pool_after": new_pool.pool_version,
            "published": new_pool is not pool,
            "deployed": deployed,
        }

    def _build_round_record(self, round_index: int, batch_ids: Sequence[str],
                            sessions_payload: dict, actions_payload: dict,
                            verdicts_payload: dict,
                            publish_payload: dict) -> dict:
        deployed = publish_payload.get("deployed", {})
        verdict_records = []
        for entry in verdicts_payload["verdicts"]:
            name = entry["candidate"]["skill_name"]
            verdict_records.append({
                "candidate": entry["candidate"],
                "verdict": entry["verdict"],
                "tasks": entry["tasks"],
                "deployed": name in deployed
                and entry["verdict"]["decision"] == Decision.ACCEPT.value,
            })
        return {
            "day_index": round_index,
            "batch_ids": list(batch_ids),
            "sessions": sessions_payload["sessions"],
            "actions": actions_payload["actions"],
            "verdicts": verdict_records,
            "pool_before": publish_payload["pool_before"],
            "pool_after": publish_payload["pool_after"],
        }


def read_round_record(data_dir: Path | str, round_index: int) -> dict:
    path = Path(data_dir) / "rounds" / str(round_index) / "round.json"
    if not path.exists():
        raise NotFoundError(f"no record for round {round_index}")
    return json.loads(path.read_text(encoding="utf-8"))
