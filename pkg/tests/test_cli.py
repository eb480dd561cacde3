"""Command line entry points, driven through click's test runner."""

from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from conftest import make_session, make_skill, seeded_repo
from skillclaw.cli import main
from skillclaw.sessions import encode_session


@pytest.fixture
def runner():
    return CliRunner()


def test_simulate_writes_report_and_audit_trail(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(main, [
        "simulate", "--scenario", "lite_queries", "--out", str(out),
        "--transport", "local"])
    assert result.exit_code == 0, result.output
    assert "scenario lite-queries" in result.output
    assert (out / "report.txt").exists()
    payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert payload["scenario"] == "lite-queries"
    assert (out / "data" / "rounds" / "1" / "round.json").exists()


def test_simulate_overrides_days(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(main, [
        "simulate", "--scenario", "lite_queries", "--out", str(out),
        "--transport", "local", "--days", "1"])
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert len(payload["days"]) == 1


def test_simulate_surfaces_scenario_errors(runner, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: broken\nseed: 1\ndays: 0\nusers: 1\n"
                   "categories: [c]\ntasks: []\n", encoding="utf-8")
    result = runner.invoke(main, [
        "simulate", "--scenario", str(bad), "--out", str(tmp_path / "o")])
    assert result.exit_code != 0
    assert "Error" in result.output


def test_report_command_renders_without_rerunning(runner, tmp_path):
    out = tmp_path / "out"
    runner.invoke(main, ["simulate", "--scenario", "lite_queries",
                         "--out", str(out), "--transport", "local"])
    result = runner.invoke(main, ["report", "--run", str(out), "--no-plot"])
    assert result.exit_code == 0, result.output
    assert result.output == (out / "report.txt").read_text(encoding="utf-8")


def test_round_run_reports_the_outcome(runner, tmp_path):
    data_dir = tmp_path / "data"
    seeded_repo(data_dir / "repo", (make_skill("alpha"),))
    batch = data_dir / "batches" / "b000001"
    batch.mkdir(parents=True)
    session = make_session("s1", skills=("alpha",), final_scores=(0.2,))
    (batch / "s1.json").write_bytes(encode_session(session))
    (data_dir / "batches" / "CURRENT").write_text("b000001\n",
                                                  encoding="utf-8")
    result = runner.invoke(main, ["round", "run", "--data-dir",
                                  str(data_dir)])
    assert result.exit_code == 0, result.output
    assert "round 1: 1 sessions" in result.output
    assert "pool 1 -> 1" in result.output


def test_evolve_builds_a_workspace(runner, tmp_path):
    data_dir = tmp_path / "data"
    seeded_repo(data_dir / "repo", (make_skill("alpha"),))
    workspace = tmp_path / "ws"
    result = runner.invoke(main, [
        "evolve", "--workspace", str(workspace), "--data-dir",
        str(data_dir)])
    assert result.exit_code == 0, result.output
    assert "unchanged: alpha" in result.output
    assert (workspace / "skills" / "alpha" / "SKILL.md").exists()


def test_evolve_needs_a_data_dir(runner, monkeypatch, tmp_path):
    monkeypatch.delenv("SKILLCLAW_DATA_DIR", raising=False)
    result = runner.invoke(main, ["evolve", "--workspace",
                                  str(tmp_path / "ws")])
    assert result.exit_code != 0
    assert "no data directory" in result.output
