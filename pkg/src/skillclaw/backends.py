"""Evolver backends.

A backend is anything that can summarize a session, answer a per-group
decision prompt with raw action text, and (optionally) drive a whole
workspace. ``ScriptedEvolver`` replays canned raw responses and is what the
simulator and fixtures use; ``GatewayEvolver`` talks to a chat-completion
endpoint. Both return *raw text* from ``decide`` — parsing and constraint
enforcement always happen on the harness side, never inside a backend.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import TYPE_CHECKING, Callable, Mapping, Protocol, Sequence

import httpx

from .errors import BackendError
from .sessions import StructuredSession, encode_session

if TYPE_CHECKING:  # pragma: no cover - import cycle guard
    from .evolver import EvolverWorkspace

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "SKILLCLAW_MODEL_ENDPOINT"
ENV_MODEL = "SKILLCLAW_MODEL_NAME"
ENV_API_KEY = "SKILLCLAW_API_KEY"

SKIP_RAW = '{"action": "skip", "rationale": "no decision produced"}'


def load_prompt(name: str) -> str:
    """Read a prompt template shipped with the package."""
    return (resources.files("skillclaw") / "prompts" / name).read_text(
        encoding="utf-8")


@dataclass(frozen=True)
class DecisionContext:
    """Everything a backend sees when asked for one evolution decision."""

    scope: str | None
    skill_text: str
    existing_names: tuple[str, ...]
    evidence: str
    parse_error: str | None = None


class EvolverBackend(Protocol):
    """Injection point for the thing that actually writes skill edits."""

    def summarize(self, session: StructuredSession) -> str: ...

    def decide(self, context: DecisionContext) -> str: ...

    def run_agentic(self, workspace: "EvolverWorkspace") -> None: ...


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------

@dataclass
class ScriptedEvolver:
    """Replays pre-authored raw responses keyed by decision scope.

    ``script`` maps a scope (skill name, or None for the no-skill scope) to
    an ordered list of raw response strings; each decision for that scope
    consumes one entry. An exhausted or missing queue answers with a skip,
    so scripts only need to mention the scopes they care about.
    """

    script: Mapping[str | None, Sequence[str]] = field(default_factory=dict)
    summaries: Mapping[str, str] = field(default_factory=dict)
    agentic: Callable[["EvolverWorkspace"], None] | None = None

    def __post_init__(self) -> None:
        self._queues: dict[str | None, list[str]] = {
            scope: list(entries) for scope, entries in self.script.items()
        }

    def summarize(self, session: StructuredSession) -> str:
        return self.summaries.get(session.session_id, "")

    def decide(self, context: DecisionContext) -> str:
        queue = self._queues.get(context.scope)
        if queue:
            return queue.pop(0)
        return SKIP_RAW

    def run_agentic(self, workspace: "EvolverWorkspace") -> None:
        if self.agentic is None:
            return
        self.agentic(workspace)


# ---------------------------------------------------------------------------
# Gateway backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GatewayConfig:
    """Connection settings for a chat-completion gateway."""

    endpoint: str
    model: str
    api_key: str | None = None
    timeout: float = 120.0
    retries: int = 2

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None) -> "GatewayConfig":
        env = os.environ if environ is None else environ
        endpoint = env.get(ENV_ENDPOINT, "")
        model = env.get(ENV_MODEL, "")
        if not endpoint or not model:
            raise BackendError(
                f"gateway backend needs {ENV_ENDPOINT} and {ENV_MODEL} set")
        return cls(endpoint=endpoint, model=model,
                   api_key=env.get(ENV_API_KEY))


class GatewayEvolver:
    """Backend speaking the common chat-completions HTTP shape."""

    def __init__(self, config: GatewayConfig,
                 client: httpx.Client | None = None) -> None:
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._summarize_template = load_prompt("summarize_session.txt")
        self._decide_template = load_prompt("evolve_from_sessions.txt")
        self._agentic_template = load_prompt("agentic_evolve.md")

    # -- transport ----------------------------------------------------------

    def _complete(self, prompt: str) -> str:
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(min(2.0 ** attempt, 10.0))
            try:
                response = self._client.post(url, json=payload,
                                             headers=headers)
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning("gateway call failed (attempt %d): %s",
                               attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_error = BackendError(
                    f"gateway returned {response.status_code}")
                continue
            if response.status_code != 200:
                raise BackendError(
                    f"gateway returned {response.status_code}: "
                    f"{response.text[:200]}")
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise BackendError(
                    f"gateway response missing completion text: {exc}") from exc
        raise BackendError(f"gateway unreachable after "
                           f"{self.config.retries + 1} attempts: {last_error}")

    # -- backend interface --------------------------------------------------

    def summarize(self, session: StructuredSession) -> str:
        prompt = self._summarize_template.replace(
            "<<SESSION_JSON>>", encode_session(session).decode("utf-8"))
        return self._complete(prompt)

    def decide(self, context: DecisionContext) -> str:
        note = ""
        if context.parse_error:
            note = ("\nYour previous response could not be parsed: "
                    f"{context.parse_error}\nAnswer again with exactly one "
                    "JSON object in one of the documented shapes.")
        prompt = (self._decide_template
                  .replace("<<SCOPE>>",
                           context.scope or "(no-skill sessions: consider "
                                            "creating a new skill or skip)")
                  .replace("<<SKILL_TEXT>>", context.skill_text or "(none)")
                  .replace("<<EXISTING_NAMES>>",
                           ", ".join(context.existing_names) or "(none)")
                  .replace("<<SESSIONS>>", context.evidence)
                  .replace("<<PARSE_ERROR_NOTE>>", note))
        return self._complete(prompt)

    def run_agentic(self, workspace: "EvolverWorkspace") -> None:
        """One-shot whole-workspace pass.

        The gateway cannot run tools, so the workspace content is inlined
        into the prompt and the model answers with a list of file writes,
        which are applied under ``skills/`` only. The usual post-run checks
        then validate ledger discipline like for any other backend.
        """
        inventory: list[str] = []
        for path in sorted(workspace.skills_dir.rglob("*")):
            if path.is_file():
                rel = path.relative_to(workspace.root)
                inventory.append(f"--- {rel} ---\n"
                                 f"{path.read_text(encoding='utf-8')}")
        for path in sorted(workspace.session_dir.glob("*.json")):
            rel = path.relative_to(workspace.root)
            inventory.append(f"--- {rel} ---\n"
                             f"{path.read_text(encoding='utf-8')}")
        prompt = (
            self._agentic_template.replace("<<MODE>>", workspace.mode.value)
            + "\n\n# Workspace content\n\n" + "\n\n".join(inventory)
            + "\n\n# Output format\n\nRespond with exactly one JSON object: "
              '{"writes": [{"path": "skills/<name>/...", "content": "..."}]}'
              "\nPaths must stay under skills/. An empty writes list means "
              "no changes."
        )
        raw = self._complete(prompt)
        from .actions import strip_markdown_fence

        try:
            payload = json.loads(strip_markdown_fence(raw))
            writes = payload["writes"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise BackendError(
                f"agentic response was not a writes object: {exc}") from exc
        for entry in writes:
            rel = str(entry.get("path", ""))
            content = entry.get("content")
            if not isinstance(content, str):
                raise BackendError(f"write for {rel!r} has no content")
            target = (workspace.root / rel).resolve()
            skills_root = workspace.skills_dir.resolve()
            if skills_root not in target.parents:
                logger.warning("agentic write outside skills/ ignored: %s", rel)
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")
