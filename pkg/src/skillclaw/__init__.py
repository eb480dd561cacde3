"""Collective skill evolution: sessions in, validated skill updates out.

The library behind the service: session structuring, evidence grouping,
the evolver action protocol, the old-vs-new validation gate, the versioned
skill repository, and a deterministic closed-loop simulator.
"""

from .actions import (CreateSkill, EvolutionAction, ImproveSkill,
                      OptimizeDescription, Skip, enforce_constraints,
                      parse_action, serialize_action)
from .errors import SkillClawError
from .evidence import EvidenceGroups, group_sessions, select_validation_tasks
from .gate import (Candidate, Decision, DeploymentPool, ExecutionOutcome,
                   TaskExecutor, Verdict, promote, validate)
from .repo import SkillRecord, SkillRepository, load_repo
from .service import Orchestrator, Round, ServiceConfig
from .sessions import (StructuredSession, decode_session, encode_session,
                       structure_session)
from .sim import Scenario, load_scenario, outline_scenario, run_lite, \
    run_scenario
from .skillmd import Skill, content_digest, parse_skill_md, render_skill_md

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CreateSkill",
    "Decision",
    "DeploymentPool",
    "EvidenceGroups",
    "EvolutionAction",
    "ExecutionOutcome",
    "ImproveSkill",
    "OptimizeDescription",
    "Orchestrator",
    "Round",
    "Scenario",
    "ServiceConfig",
    "Skill",
    "SkillClawError",
    "SkillRecord",
    "SkillRepository",
    "Skip",
    "StructuredSession",
    "TaskExecutor",
    "Verdict",
    "content_digest",
    "decode_session",
    "encode_session",
    "enforce_constraints",
    "group_sessions",
    "load_repo",
    "load_scenario",
    "outline_scenario",
    "parse_action",
    "parse_skill_md",
    "promote",
    "render_skill_md",
    "run_lite",
    "run_scenario",
    "select_validation_tasks",
    "serialize_action",
    "structure_session",
    "validate",
]
