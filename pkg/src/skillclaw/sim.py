"""Closed-loop simulator: scripted users, scripted evolver, real service.

A scenario pins down everything stochastic about a run: the task list, a
success-probability table keyed by (task, skill, version), the evolver's
scripted decisions per night, and one integer seed. Daytime outcomes are
Bernoulli draws whose seeds derive from (seed, day, user, task, rollout),
so thread scheduling and upload order cannot change a single outcome, and
validation scores the deterministic expectation instead of sampling. That
makes the whole run replayable byte-for-byte and lets a scenario be checked
against its own closed-form forecast before any round runs.

The simulator drives the real orchestrator, either in process or over a
loopback HTTP server, never a shortcut path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .actions import (ACTION_CREATE, ACTION_IMPROVE, ACTION_OPTIMIZE,
                      CreateSkill, ImproveSkill, Skip, parse_action)
from .backends import ScriptedEvolver
from .errors import ActionParseError, ScenarioError, SkillClawError
from .evidence import TaskDescriptor
from .gate import ExecutionOutcome, TaskExecutor
from .repo import SkillRecord, load_repo
from .service import Orchestrator, ServiceConfig, read_round_record
from .sessions import (RawRollout, RawSessionLog, RawToolCall, RawTurn,
                       encode_session, structure_session)
from .skillmd import Skill, is_valid_slug

logger = logging.getLogger(__name__)

OUTCOME_SAMPLED = "sampled"
OUTCOME_EXPECTED = "expected"

DEFAULT_CLOCK = "2026-01-01T00:00:00+00:00"
ADMIN_TOKEN = "sim-admin"


def draw_unit(seed: int, *parts: object) -> float:
    """Deterministic uniform draw in [0, 1) from a seed and key parts."""
    key = ":".join([str(seed), *(str(part) for part in parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


# ---------------------------------------------------------------------------
# Scenario model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimTask:
    task_id: str
    category: str
    skill: str
    baseline: float = 0.2


@dataclass(frozen=True)
class Scenario:
    """Complete declarative description of one simulated deployment."""

    name: str
    seed: int
    days: int
    users: int
    tasks: tuple[SimTask, ...]
    skills: tuple[Skill, ...]
    effects: Mapping[tuple[str, str, int], float]
    script: Mapping[int, Mapping[str | None, tuple[str, ...]]]
    categories: tuple[str, ...]
    rollouts_per_attempt: int = 8
    outcome_mode: str = OUTCOME_SAMPLED
    validation_cap: int | None = None
    clock: str = DEFAULT_CLOCK

    @property
    def cap(self) -> int:
        return self.validation_cap if self.validation_cap is not None \
            else len(self.tasks)


def _as_raw_actions(value: Any) -> tuple[str, ...]:
    """Normalize one script cell to a queue of raw decision strings."""
    if isinstance(value, str):
        return (value,)
    if isinstance(value, Mapping):
        return (json.dumps(value, ensure_ascii=False),)
    if isinstance(value, Sequence):
        out = []
        for item in value:
            if isinstance(item, str):
                out.append(item)
            elif isinstance(item, Mapping):
                out.append(json.dumps(item, ensure_ascii=False))
            else:
                raise ScenarioError(f"unsupported script entry: {item!r}")
        return tuple(out)
    raise ScenarioError(f"unsupported script entry: {value!r}")


def scenario_from_dict(payload: Mapping[str, Any]) -> Scenario:
    try:
        tasks = tuple(
            SimTask(task_id=entry["task_id"], category=entry["category"],
                    skill=entry["skill"],
                    baseline=float(entry.get("baseline", 0.2)))
            for entry in payload["tasks"]
        )
        skills = tuple(
            Skill(name=entry["name"], description=entry["description"],
                  body=entry["body"],
                  category=entry.get("category", "general"))
            for entry in payload.get("skills", ())
        )
        effects = {
            (entry["task_id"], entry["skill"], int(entry["version"])):
                float(entry["p"])
            for entry in payload.get("effects", ())
        }
        if len(effects) != len(payload.get("effects", ())):
            raise ScenarioError("duplicate effect table entries")
        script: dict[int, dict[str | None, tuple[str, ...]]] = {}
        for day_key, scopes in (payload.get("script") or {}).items():
            day_table: dict[str | None, tuple[str, ...]] = {}
            for scope_key, value in (scopes or {}).items():
                scope = None if scope_key in ("", None) else str(scope_key)
                day_table[scope] = _as_raw_actions(value)
            script[int(day_key)] = day_table
        scenario = Scenario(
            name=str(payload["name"]),
            seed=int(payload["seed"]),
            days=int(payload["days"]),
            users=int(payload["users"]),
            tasks=tasks,
            skills=skills,
            effects=effects,
            script=script,
            categories=tuple(payload["categories"]),
            rollouts_per_attempt=int(payload.get("rollouts_per_attempt", 8)),
            outcome_mode=str(payload.get("outcome_mode", OUTCOME_SAMPLED)),
            validation_cap=(int(payload["validation_cap"])
                            if "validation_cap" in payload else None),
            clock=str(payload.get("clock", DEFAULT_CLOCK)),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    return scenario


def load_scenario(source: Path | str) -> Scenario:
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(source)
    if not path.suffix:
        from importlib import resources
        ref = resources.files("skillclaw") / "scenarios" / f"{source}.yaml"
        text = ref.read_text(encoding="utf-8")
    else:
        text = path.read_text(encoding="utf-8")
    payload = yaml.safe_load(text)
    if not isinstance(payload, Mapping):
        raise ScenarioError("scenario file must hold a mapping")
    return scenario_from_dict(payload)


# ---------------------------------------------------------------------------
# Effects
# ---------------------------------------------------------------------------


class EffectModel:
    """Success probabilities for tasks under a given deployed skill state."""

    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.tasks = {task.task_id: task for task in scenario.tasks}

    def p_for_state(self, task_id: str, version: int | None) -> float:
        task = self.tasks[task_id]
        if version is None:
            return task.baseline
        key = (task.task_id, task.skill, version)
        if key not in self.scenario.effects:
            raise ScenarioError(
                f"no effect entry for task {task.task_id!r} skill "
                f"{task.skill!r} version {version}")
        return self.scenario.effects[key]

    def p_for_pool(self, task_id: str, pool: Mapping[str, SkillRecord]
                   ) -> float:
        task = self.tasks[task_id]
        record = pool.get(task.skill)
        return self.p_for_state(task_id,
                                record.version if record else None)

    def mean_for_versions(self, versions: Mapping[str, int],
                          task_ids: Sequence[str] | None = None) -> float:
        ids = list(task_ids) if task_ids is not None else list(self.tasks)
        total = sum(
            self.p_for_state(task_id, versions.get(self.tasks[task_id].skill))
            for task_id in ids)
        return total / len(ids)


class ExpectationExecutor:
    """Validation executor scoring the exact expected success rate.

    Sampling noise in the gate would make verdicts non-reproducible, so the
    executor reports the truth-table expectation for the task under the
    pool it was handed.
    """

    def __init__(self, model: EffectModel) -> None:
        self.model = model

    def run(self, task: TaskDescriptor,
            pool: Mapping[str, SkillRecord]) -> ExecutionOutcome:
        p = self.model.p_for_pool(task.task_id, pool)
        return ExecutionOutcome(score=p, succeeded=p >= 0.5,
                                trace=f"expectation {p:.4f}")


# ---------------------------------------------------------------------------
# Forecast: walk the script against the effect table before running
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutlineVerdict:
    skill: str
    kind: str
    target_version: int
    old_score: float
    new_score: float
    accepted: bool


@dataclass(frozen=True)
class OutlineDay:
    day: int
    pool_version: int                 # pool serving during the day
    pool_after: int                   # pool after that night
    expected_overall: float
    expected_by_category: Mapping[str, float]
    verdicts: tuple[OutlineVerdict, ...]
    accepted: Mapping[str, int]       # skill -> new version


@dataclass(frozen=True)
class ScenarioOutline:
    days: tuple[OutlineDay, ...]
    final_versions: Mapping[str, int]

    @property
    def final_pool_version(self) -> int:
        return self.days[-1].pool_after if self.days else 1


def _parse_script_action(raw: str, where: str):
    try:
        return parse_action(raw)
    except ActionParseError as exc:
        raise ScenarioError(f"{where}: unparseable scripted decision: {exc}")


def outline_scenario(scenario: Scenario) -> ScenarioOutline:
    """Validate the scenario and forecast the whole run.

    Every reachable decision is walked with the same acceptance rule the
    gate applies to deterministic expectations, so a script line that can
    never fire, or a version the effect table has no entry for, fails here
    before any round runs.
    """
    _check_scenario_basics(scenario)
    model = EffectModel(scenario)
    versions: dict[str, int] = {skill.name: 1 for skill in scenario.skills}
    pool_version = 1
    day_rows: list[OutlineDay] = []

    for day in range(1, scenario.days + 1):
        by_cat: dict[str, list[float]] = {c: [] for c in scenario.categories}
        all_ps: list[float] = []
        for task in scenario.tasks:
            p = model.p_for_state(task.task_id, versions.get(task.skill))
            by_cat[task.category].append(p)
            all_ps.append(p)
        expected_by_category = {
            category: sum(ps) / len(ps)
            for category, ps in by_cat.items() if ps
        }
        expected_overall = sum(all_ps) / len(all_ps)

        scopes = sorted({task.skill for task in scenario.tasks
                         if task.skill in versions})
        null_tasks = [task for task in scenario.tasks
                      if task.skill not in versions]
        day_script = dict(scenario.script.get(day, {}))
        stray = set(day_script) - set(scopes) - {None}
        if stray:
            raise ScenarioError(
                f"day {day}: script targets scopes with no evidence: "
                f"{sorted(stray)}")
        if None in day_script and not null_tasks:
            raise ScenarioError(
                f"day {day}: script has a no-skill entry but every task's "
                f"skill is deployed")

        verdicts: list[OutlineVerdict] = []
        accepted_now: dict[str, int] = {}

        def forecast_create(action: CreateSkill) -> OutlineVerdict:
            target_tasks = [t.task_id for t in null_tasks]
            old = model.mean_for_versions(versions, target_tasks)
            with_new = dict(versions)
            with_new[action.name] = 1
            for task in null_tasks:
                if task.skill == action.name:
                    model.p_for_state(task.task_id, 1)   # entry must exist
            new = model.mean_for_versions(with_new, target_tasks)
            return OutlineVerdict(skill=action.name, kind=ACTION_CREATE,
                                  target_version=1, old_score=old,
                                  new_score=new, accepted=new > old)

        for scope in scopes:
            queue = day_script.get(scope)
            if not queue:
                continue
            action = _parse_script_action(queue[0], f"day {day} scope {scope}")
            if isinstance(action, Skip):
                continue
            if isinstance(action, CreateSkill):
                if action.name in versions or action.name in accepted_now:
                    continue        # degrades to skip at runtime
                if not null_tasks:
                    verdicts.append(OutlineVerdict(
                        skill=action.name, kind=ACTION_CREATE,
                        target_version=1, old_score=0.0, new_score=0.0,
                        accepted=False))
                    continue
                verdict = forecast_create(action)
                verdicts.append(verdict)
                if verdict.accepted:
                    accepted_now[action.name] = 1
                continue
            if action.name != scope:
                raise ScenarioError(
                    f"day {day}: scripted {type(action).__name__} under "
                    f"scope {scope!r} names {action.name!r}")
            kind = (ACTION_IMPROVE if isinstance(action, ImproveSkill)
                    else ACTION_OPTIMIZE)
            target = versions[scope] + 1
            scope_tasks = [t.task_id for t in scenario.tasks
                           if t.skill == scope]
            old = sum(model.p_for_state(t, versions[scope])
                      for t in scope_tasks) / len(scope_tasks)
            new = sum(model.p_for_state(t, target)
                      for t in scope_tasks) / len(scope_tasks)
            verdict = OutlineVerdict(skill=scope, kind=kind,
                                     target_version=target, old_score=old,
                                     new_score=new, accepted=new > old)
            verdicts.append(verdict)
            if verdict.accepted:
                accepted_now[scope] = target

        if null_tasks:
            for raw in day_script.get(None, ()):
                action = _parse_script_action(raw, f"day {day} no-skill pass")
                if not isinstance(action, CreateSkill):
                    break
                if action.name in versions or action.name in accepted_now:
                    break           # collision degrades to skip, ending the pass
                verdict = forecast_create(action)
                verdicts.append(verdict)
                if verdict.accepted:
                    accepted_now[action.name] = verdict.target_version

        pool_after = pool_version + 1 if accepted_now else pool_version
        day_rows.append(OutlineDay(
            day=day,
            pool_version=pool_version,
            pool_after=pool_after,
            expected_overall=expected_overall,
            expected_by_category=expected_by_category,
            verdicts=tuple(verdicts),
            accepted=dict(accepted_now),
        ))
        versions.update(accepted_now)
        pool_version = pool_after

    return ScenarioOutline(days=tuple(day_rows), final_versions=versions)


def _check_scenario_basics(scenario: Scenario) -> None:
    if scenario.days < 1 or scenario.users < 1:
        raise ScenarioError("days and users must both be at least 1")
    if scenario.rollouts_per_attempt < 1:
        raise ScenarioError("rollouts_per_attempt must be at least 1")
    if scenario.outcome_mode not in (OUTCOME_SAMPLED, OUTCOME_EXPECTED):
        raise ScenarioError(
            f"unknown outcome_mode {scenario.outcome_mode!r}")
    if not scenario.tasks:
        raise ScenarioError("scenario has no tasks")
    if len({t.task_id for t in scenario.tasks}) != len(scenario.tasks):
        raise ScenarioError("duplicate task ids")
    if len({s.name for s in scenario.skills}) != len(scenario.skills):
        raise ScenarioError("duplicate initial skill names")
    for task in scenario.tasks:
        if task.category not in scenario.categories:
            raise ScenarioError(
                f"task {task.task_id!r} has unknown category "
                f"{task.category!r}")
        if not is_valid_slug(task.skill):
            raise ScenarioError(
                f"task {task.task_id!r} names an invalid skill slug")
        if not 0.0 <= task.baseline <= 1.0:
            raise ScenarioError(f"task {task.task_id!r} baseline out of range")
    for (task_id, skill, version), p in scenario.effects.items():
        if task_id not in {t.task_id for t in scenario.tasks}:
            raise ScenarioError(f"effect entry for unknown task {task_id!r}")
        if version < 1:
            raise ScenarioError("effect entry versions start at 1")
        if not 0.0 <= p <= 1.0:
            raise ScenarioError(
                f"effect probability out of range for {task_id!r}")
    group_ceiling = max(
        [sum(1 for t in scenario.tasks if t.skill == name)
         for name in {t.skill for t in scenario.tasks}] + [0])
    null_ceiling = sum(1 for t in scenario.tasks
                       if t.skill not in {s.name for s in scenario.skills})
    if scenario.cap < max(group_ceiling, null_ceiling):
        raise ScenarioError(
            "validation_cap is below the largest possible evidence group; "
            "dropped tasks would let a regression slip through")


# ---------------------------------------------------------------------------
# Simulated users
# ---------------------------------------------------------------------------


_FAIL_SNIPPETS = (
    "The output did not match the expected structure; retrying did not help.",
    "Gave up after the tool kept returning malformed results.",
)
_OK_SNIPPETS = (
    "Produced the requested output and verified it against the input.",
    "Completed the task; spot checks passed.",
)


def build_raw_log(scenario: Scenario, model: EffectModel, day: int,
                  user: int, task: SimTask,
                  deployed_versions: Mapping[str, int],
                  pool_version: int) -> tuple[RawSessionLog, float]:
    """One simulated working session; returns the log and its score mass."""
    version = deployed_versions.get(task.skill)
    references = [task.skill] if version is not None else []
    p = model.p_for_state(task.task_id, version)
    rollouts = []
    mass = 0.0
    for index in range(scenario.rollouts_per_attempt):
        if scenario.outcome_mode == OUTCOME_SAMPLED:
            success = draw_unit(scenario.seed, day, user, task.task_id,
                                index) < p
            score = 1.0 if success else 0.0
        else:
            success = p >= 0.5
            score = p
        mass += score
        if success:
            calls = [RawToolCall(tool_name="run_task",
                                 arguments=f"task={task.task_id}",
                                 ok=True, result="done")]
            snippet = _OK_SNIPPETS[index % len(_OK_SNIPPETS)]
            prm = 0.9
        else:
            calls = [RawToolCall(tool_name="run_task",
                                 arguments=f"task={task.task_id}",
                                 ok=False,
                                 result="error: output rejected")]
            snippet = _FAIL_SNIPPETS[index % len(_FAIL_SNIPPETS)]
            prm = 0.2
        rollouts.append(RawRollout(
            turns=[
                RawTurn(role="user",
                        content=f"Please handle task {task.task_id}."),
                RawTurn(role="assistant", content=snippet,
                        skills_read=references, tool_calls=calls,
                        prm_score=prm),
            ],
            final_score=score,
        ))
    log = RawSessionLog(
        session_id=f"d{day:02d}-u{user:02d}-{task.task_id}",
        task_id=task.task_id,
        rollouts=rollouts,
        pool_version=pool_version,
    )
    return log, mass / scenario.rollouts_per_attempt


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class LocalTransport:
    """Drive the orchestrator in process."""

    def __init__(self, orch: Orchestrator) -> None:
        self.orch = orch

    def pool_version(self) -> int:
        return self.orch.get_pool_version()

    def manifest(self) -> dict:
        return json.loads(self.orch.get_manifest())

    def upload(self, payload: bytes) -> dict:
        return self.orch.upload_session(payload)

    def run_round(self) -> dict:
        record = self.orch.run_night()
        return {"day_index": record.day_index,
                "pool_before": record.pool_before,
                "pool_after": record.pool_after,
                "accepted": list(record.accepted_skills)}

    def close(self) -> None:
        pass


class HttpTransport:
    """Drive the service over HTTP on a loopback uvicorn server."""

    def __init__(self, orch: Orchestrator, admin_token: str) -> None:
        import httpx
        import uvicorn

        from .api import create_app

        self._config = uvicorn.Config(create_app(orch), host="127.0.0.1",
                                      port=0, log_level="warning")
        self._server = uvicorn.Server(self._config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        deadline = time.monotonic() + 15.0
        while not self._server.started:
            if time.monotonic() > deadline:
                raise SkillClawError("loopback server did not start")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        self._client = httpx.Client(base_url=self.base_url, timeout=600.0)
        self._token = admin_token

    def pool_version(self) -> int:
        response = self._client.get("/v1/pool/version")
        response.raise_for_status()
        return response.json()["pool_version"]

    def manifest(self) -> dict:
        response = self._client.get("/v1/skills/manifest")
        response.raise_for_status()
        return response.json()

    def upload(self, payload: bytes) -> dict:
        response = self._client.post(
            "/v1/sessions", content=payload,
            headers={"content-type": "application/json"})
        response.raise_for_status()
        return response.json()

    def run_round(self) -> dict:
        response = self._client.post(
            "/v1/rounds/run",
            headers={"authorization": f"Bearer {self._token}"})
        response.raise_for_status()
        return response.json()

    def close(self) -> None:
        self._client.close()
        self._server.should_exit = True
        self._thread.join(timeout=10.0)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class DayRow:
    day: int
    pool_version: int
    overall: float
    by_category: dict[str, float]
    accepted: dict[str, int]
    pool_after: int


@dataclass
class SimReport:
    scenario: str
    seed: int
    outcome_mode: str
    days: list[DayRow] = field(default_factory=list)
    final_pool_version: int = 1

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "outcome_mode": self.outcome_mode,
            "final_pool_version": self.final_pool_version,
            "days": [
                {
                    "day": row.day,
                    "pool_version": row.pool_version,
                    "overall": row.overall,
                    "by_category": dict(sorted(row.by_category.items())),
                    "accepted": dict(sorted(row.accepted.items())),
                    "pool_after": row.pool_after,
                }
                for row in self.days
            ],
        }


def _assert_close(got: float, want: float, what: str,
                  tolerance: float = 1e-9) -> None:
    if abs(got - want) > tolerance:
        raise SkillClawError(
            f"{what}: got {got!r}, forecast said {want!r}")


def _check_round_against_outline(record: dict, outline_day: OutlineDay
                                 ) -> None:
    """Realized verdicts must match the forecast exactly."""
    realized = {
        entry["candidate"]["skill_name"]: entry
        for entry in record["verdicts"]
    }
    forecast = {v.skill: v for v in outline_day.verdicts}
    if set(realized) != set(forecast):
        raise SkillClawError(
            f"day {outline_day.day}: validated skills {sorted(realized)} "
            f"but forecast said {sorted(forecast)}")
    for name, entry in realized.items():
        want = forecast[name]
        got_accept = entry["verdict"]["decision"] == "accept"
        if got_accept != want.accepted:
            raise SkillClawError(
                f"day {outline_day.day}: verdict for {name!r} was "
                f"{entry['verdict']['decision']}, forecast said "
                f"accepted={want.accepted}")
        _assert_close(entry["verdict"]["old_score"], want.old_score,
                      f"day {outline_day.day} old score for {name!r}")
        _assert_close(entry["verdict"]["new_score"], want.new_score,
                      f"day {outline_day.day} new score for {name!r}")


def run_scenario(scenario: Scenario, data_dir: Path | str, *,
                 transport: str = "local", strict: bool = True,
                 report_path: Path | str | None = None) -> SimReport:
    """Run a scenario end to end against the real service.

    With ``strict`` on (the default), the realized run is checked inline
    against the closed-form forecast: per-night verdicts, pool versions,
    and the monotone pool metric. Any divergence raises.
    """
    outline = outline_scenario(scenario)
    model = EffectModel(scenario)

    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    repo = load_repo(data_dir / "repo")
    for skill in scenario.skills:
        repo.commit_update(skill, "initial import\n")

    config = ServiceConfig(
        data_dir=data_dir,
        validation_cap=scenario.cap,
        admin_token=ADMIN_TOKEN,
    )
    orch = Orchestrator(
        config,
        backend_factory=lambda day: ScriptedEvolver(
            script=scenario.script.get(day, {})),
        executor=ExpectationExecutor(model),
        clock=lambda: scenario.clock,
    )
    if transport == "local":
        channel = LocalTransport(orch)
    elif transport == "http":
        channel = HttpTransport(orch, ADMIN_TOKEN)
    else:
        raise SkillClawError(f"unknown transport {transport!r}")

    report = SimReport(scenario=scenario.name, seed=scenario.seed,
                       outcome_mode=scenario.outcome_mode)
    try:
        previous_metric = None
        for day in range(1, scenario.days + 1):
            outline_day = outline.days[day - 1]
            manifest = channel.manifest()
            pool_version = manifest["pool_version"]
            if strict and pool_version != outline_day.pool_version:
                raise SkillClawError(
                    f"day {day}: serving pool {pool_version}, forecast said "
                    f"{outline_day.pool_version}")
            deployed = {entry["name"]: entry["version"]
                        for entry in manifest["skills"]}

            totals: dict[str, tuple[float, int]] = {}

            def run_user(user: int) -> dict[str, tuple[float, int]]:
                local: dict[str, tuple[float, int]] = {}
                for task in scenario.tasks:
                    log, mean_score = build_raw_log(
                        scenario, model, day, user, task, deployed,
                        pool_version)
                    session = structure_session(log)
                    ack = channel.upload(encode_session(session))
                    if ack.get("session_id") != session.session_id:
                        raise SkillClawError(
                            f"upload of {session.session_id} acknowledged "
                            f"as {ack!r}")
                    mass, count = local.get(task.category, (0.0, 0))
                    local[task.category] = (mass + mean_score, count + 1)
                return local

            with ThreadPoolExecutor(max_workers=scenario.users) as pool:
                for partial in pool.map(run_user,
                                        range(1, scenario.users + 1)):
                    for category, (mass, count) in partial.items():
                        have_mass, have_count = totals.get(category, (0.0, 0))
                        totals[category] = (have_mass + mass,
                                            have_count + count)

            by_category = {category: mass / count
                           for category, (mass, count) in totals.items()}
            overall = (sum(mass for mass, _ in totals.values())
                       / sum(count for _, count in totals.values()))

            night = channel.run_round()
            if strict:
                if night["pool_after"] != outline_day.pool_after:
                    raise SkillClawError(
                        f"night {day}: pool moved to {night['pool_after']}, "
                        f"forecast said {outline_day.pool_after}")
                record = read_round_record(data_dir, day)
                _check_round_against_outline(record, outline_day)
                metric = model.mean_for_versions(
                    _versions_after(scenario, outline, day))
                if previous_metric is not None \
                        and metric < previous_metric - 1e-12:
                    raise SkillClawError(
                        f"pool metric regressed after night {day}: "
                        f"{previous_metric} -> {metric}")
                previous_metric = metric

            report.days.append(DayRow(
                day=day,
                pool_version=pool_version,
                overall=overall,
                by_category=by_category,
                accepted=dict(outline_day.accepted),
                pool_after=night["pool_after"],
            ))
        report.final_pool_version = report.days[-1].pool_after

        if strict:
            final_repo = load_repo(data_dir / "repo")
            for name, version in outline.final_versions.items():
                record = final_repo.records.get(name)
                if record is None or record.version != version:
                    raise SkillClawError(
                        f"repository holds {name!r} at "
                        f"{record.version if record else None}, forecast "
                        f"said {version}")
                final_repo.history_entries(name)
    finally:
        channel.close()

    if report_path is not None:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return report


def _versions_after(scenario: Scenario, outline: ScenarioOutline,
                    day: int) -> dict[str, int]:
    versions = {skill.name: 1 for skill in scenario.skills}
    for row in outline.days:
        if row.day > day:
            break
        versions.update(row.accepted)
    return versions


def run_lite(scenario: Scenario, data_dir: Path | str, *,
             transport: str = "local") -> dict:
    """Small before/after probe: day one scores vs the final day's.

    Expects the expectation outcome mode so each query's score is exact;
    each query lives in its own category.
    """
    if scenario.outcome_mode != OUTCOME_EXPECTED:
        raise ScenarioError(
            "the lite runner needs outcome_mode: expected")
    report = run_scenario(scenario, data_dir, transport=transport)
    first, last = report.days[0], report.days[-1]
    queries = {
        category: {
            "before": first.by_category[category],
            "after": last.by_category[category],
            "gain": last.by_category[category] - first.by_category[category],
        }
        for category in sorted(first.by_category)
    }
    gains = [entry["gain"] for entry in queries.values()]
    return {
        "scenario": scenario.name,
        "queries": queries,
        "average_gain": sum(gains) / len(gains),
        "report": report.to_dict(),
    }


def render_report(report: SimReport | dict) -> str:
    """Plain-text score table, one row per day."""
    payload = report.to_dict() if isinstance(report, SimReport) else report
    categories = sorted({
        category
        for row in payload["days"] for category in row["by_category"]})
    headers = ["day", "pool", "overall", *categories, "accepted"]
    rows = []
    for row in payload["days"]:
        accepted = ", ".join(f"{name} v{version}"
                             for name, version in row["accepted"].items())
        rows.append([
            str(row["day"]), str(row["pool_version"]),
            f"{row['overall']:.4f}",
            *(f"{row['by_category'].get(c, float('nan')):.4f}"
              for c in categories),
            accepted or "-",
        ])
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows))
              if rows else len(headers[i]) for i in range(len(headers))]
    lines = [
        f"scenario {payload['scenario']}  seed {payload['seed']}  "
        f"mode {payload['outcome_mode']}",
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i])
                               for i, cell in enumerate(row)))
    lines.append(f"final pool version: {payload['final_pool_version']}")
    return "\n".join(lines) + "\n"
