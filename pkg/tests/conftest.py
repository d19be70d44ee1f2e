from __future__ import annotations

import socket
import sys
from pathlib import Path

import pytest

from webcurate.taskconfig import parse_entity_set, parse_task_spec

ROOT = Path(__file__).resolve().parents[1]
TASKS = ROOT / "tasks"
FIXTURES = ROOT / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


def load_task(name: str):
    spec = parse_task_spec((TASKS / name / "task.yaml").read_text(encoding="utf-8"))
    entities = parse_entity_set((TASKS / name / "entities.csv").read_text(encoding="utf-8"), spec)
    return spec, entities


class NoNetwork(RuntimeError):
    pass


@pytest.fixture
def no_network(monkeypatch):
    """Fail the test if anything opens a socket connection."""

    def guard(*args, **kwargs):
        raise NoNetwork("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket.socket, "connect_ex", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
    yield


class FakeClock:
    """Virtual time shared by ``clock`` and ``sleep``; sleeping advances it."""

    def __init__(self, start: float = 1000.0):
        self.now = start
        self.slept: list[float] = []

    def __call__(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.slept.append(seconds)
        self.now += seconds


@pytest.fixture
def fake_clock():
    return FakeClock()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title = results[number]
        terminalreporter.write_line(f"{status} criterion {number}: {title}")
