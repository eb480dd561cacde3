"""Command line entry points: serve, round run, evolve, simulate, report."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import replace
from pathlib import Path

import click

from . import api
from .backends import GatewayConfig, GatewayEvolver, ScriptedEvolver
from .errors import SkillClawError
from .evolver import WorkspaceMode, build_workspace, run_agentic_evolution
from .repo import load_repo
from .service import Orchestrator, ServiceConfig
from .sessions import decode_session
from .sim import load_scenario, render_report, run_scenario

logger = logging.getLogger(__name__)


@click.group()
@click.option("--verbose", is_flag=True, help="Log at debug level.")
def main(verbose: bool) -> None:
    """Collective skill evolution service and simulator."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _config(config_path: str | None, data_dir: str | None) -> ServiceConfig:
    if data_dir is not None:
        os.environ["SKILLCLAW_DATA_DIR"] = data_dir
    return ServiceConfig.from_file(config_path)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Service config file.")
@click.option("--data-dir", default=None,
              help="Overrides the configured data directory.")
def serve(config_path: str | None, data_dir: str | None) -> None:
    """Run the sync service until interrupted."""
    config = _config(config_path, data_dir)
    orch = Orchestrator(config)
    if config.round_schedule.startswith("every:"):
        interval = float(config.round_schedule.split(":", 1)[1])

        def ticker() -> None:
            while True:
                time.sleep(interval)
                try:
                    record = orch.run_night()
                    logger.info("scheduled round %d done: pool %d -> %d",
                                record.day_index, record.pool_before,
                                record.pool_after)
                except SkillClawError as exc:
                    logger.error("scheduled round failed: %s", exc)

        threading.Thread(target=ticker, daemon=True,
                         name="round-scheduler").start()
    elif config.round_schedule != "manual":
        raise click.ClickException(
            f"unsupported round_schedule {config.round_schedule!r} "
            f"(use 'manual' or 'every:<seconds>')")
    click.echo(f"serving on {config.listen} from {config.data_dir}")
    api.serve(orch)


@main.group(name="round")
def round_group() -> None:
    """Nightly round controls."""


@round_group.command(name="run")
@click.option("--data-dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
def round_run(data_dir: str, config_path: str | None) -> None:
    """Run one nightly round against a data directory."""
    config = _config(config_path, data_dir)
    orch = Orchestrator(config)
    try:
        record = orch.run_night()
    except SkillClawError as exc:
        raise click.ClickException(str(exc))
    accepted = ", ".join(record.accepted_skills) or "none"
    click.echo(f"round {record.day_index}: {len(record.batch)} sessions, "
               f"{len(record.verdicts)} candidates, accepted: {accepted}, "
               f"pool {record.pool_before} -> {record.pool_after}")


@main.command()
@click.option("--workspace", required=True, type=click.Path(),
              help="Directory to build the evolver workspace in.")
@click.option("--mode", type=click.Choice(["fresh", "no-fresh"]),
              default="fresh")
@click.option("--backend", "backend_name",
              type=click.Choice(["scripted", "gateway"]), default="scripted")
@click.option("--data-dir", default=None,
              help="Defaults to SKILLCLAW_DATA_DIR.")
def evolve(workspace: str, mode: str, backend_name: str,
           data_dir: str | None) -> None:
    """Build a workspace from pending sessions and run one evolution pass.

    With the scripted backend no edits are made; the pass still rebuilds
    the workspace and reports it clean, which is useful for checking a
    workspace after manual edits were reverted.
    """
    root = data_dir or os.environ.get("SKILLCLAW_DATA_DIR")
    if not root:
        raise click.ClickException(
            "no data directory (use --data-dir or SKILLCLAW_DATA_DIR)")
    repo = load_repo(Path(root) / "repo")
    sessions = []
    batches_dir = Path(root) / "batches"
    if batches_dir.exists():
        for path in sorted(batches_dir.glob("b*/*.json")):
            sessions.append(decode_session(path.read_bytes()))
    ws_mode = WorkspaceMode.NO_FRESH if mode == "no-fresh" \
        else WorkspaceMode.FRESH
    ws = build_workspace(repo, sessions, ws_mode, Path(workspace))
    if backend_name == "gateway":
        backend = GatewayEvolver(GatewayConfig.from_env())
    else:
        backend = ScriptedEvolver(script={})
    changes = run_agentic_evolution(ws, backend)
    click.echo(f"workspace: {workspace} ({mode}, {len(sessions)} sessions)")
    click.echo(f"created:   {', '.join(changes.created) or '-'}")
    click.echo(f"modified:  {', '.join(changes.modified) or '-'}")
    click.echo(f"unchanged: {', '.join(changes.unchanged) or '-'}")


@main.command()
@click.option("--scenario", "scenario_ref", required=True,
              help="Scenario file path or bundled scenario name.")
@click.option("--days", type=int, default=None)
@click.option("--users", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--transport", type=click.Choice(["http", "local"]),
              default="http")
def simulate(scenario_ref: str, days: int | None, users: int | None,
             seed: int | None, out_dir: str, transport: str) -> None:
    """Run a scenario end to end; writes the score table and audit trail."""
    try:
        scenario = load_scenario(scenario_ref)
        overrides = {}
        if days is not None:
            overrides["days"] = days
        if users is not None:
            overrides["users"] = users
        if seed is not None:
            overrides["seed"] = seed
        if overrides:
            scenario = replace(scenario, **overrides)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report = run_scenario(scenario, out / "data", transport=transport,
                              report_path=out / "report.json")
    except SkillClawError as exc:
        raise click.ClickException(str(exc))
    text = render_report(report)
    (out / "report.txt").write_text(text, encoding="utf-8")
    click.echo(text, nl=False)
    click.echo(f"audit trail: {out / 'data' / 'rounds'}")


@main.command(name="report")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True),
              help="Output directory of a previous simulate run.")
@click.option("--plot/--no-plot", default=True,
              help="Also write report.png (needs matplotlib).")
def report_cmd(run_dir: str, plot: bool) -> None:
    """Render a finished run's score table; optionally plot it."""
    run = Path(run_dir)
    payload = json.loads((run / "report.json").read_text(encoding="utf-8"))
    click.echo(render_report(payload), nl=False)
    if not plot:
        return
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        click.echo("matplotlib not installed; skipping the plot", err=True)
        return
    days = [row["day"] for row in payload["days"]]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(days, [row["overall"] for row in payload["days"]],
            marker="o", label="overall")
    categories = sorted({c for row in payload["days"]
                         for c in row["by_category"]})
    for category in categories:
        ax.plot(days, [row["by_category"].get(category) for row in
                       payload["days"]], marker=".", label=category)
    ax.set_xlabel("day")
    ax.set_ylabel("mean task score")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(payload["scenario"])
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    target = run / "report.png"
    fig.savefig(target, dpi=120)
    click.echo(f"plot written to {target}")


if __name__ == "__main__":
    main()
