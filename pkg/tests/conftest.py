"""Shared fixtures.  The desk-scale runs are trained once per session and reused
by the trainer property tests and the acceptance suite."""

from __future__ import annotations

import time

import pytest

from dadskit.config import RunConfig
from dadskit.trainer import read_metrics, train

# 150 iterations x 2000 steps = 300k environment steps (budget: 500k)
DESK_ITERATIONS = 150


def tiny_config(**overrides) -> RunConfig:
    base = {
        "trainer.iterations": 3,
        "trainer.samples_per_iter": 400,
        "trainer.checkpoint_every": 1,
        "agent.hidden_sizes": "16,16",
        "agent.updates_per_iter": 8,
        "agent.batch_size": 32,
        "trainer.dynamics_steps": 4,
        "trainer.dynamics_batch": 32,
        "reward.L": 20,
        "planner.refine_steps": 2,
        "planner.samples": 8,
        "planner.sparse_samples": 8,
        "planner.horizon": 20,
        "eval.goals": 2,
        "eval.orientation_grid": 4,
        "eval.variance_skills": 2,
        "eval.episodes_per_skill": 2,
        "eval.prediction_horizon": 10,
    }
    base.update(overrides)
    return RunConfig().replace(**base)


class DeskRun:
    def __init__(self, trainer, out_dir, metrics, seconds):
        self.trainer = trainer
        self.out_dir = out_dir
        self.metrics = metrics
        self.seconds = seconds


def _desk_run(tmp_path_factory, name: str, **overrides) -> DeskRun:
    cfg = RunConfig().replace(**{"trainer.iterations": DESK_ITERATIONS, "trainer.checkpoint_every": 50, **overrides})
    out = tmp_path_factory.mktemp(name)
    t0 = time.perf_counter()
    tr, _ = train(cfg, out)
    return DeskRun(tr, out, read_metrics(out / "metrics.csv"), time.perf_counter() - t0)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> DeskRun:
    """x-y prior skill-dynamics (the configuration used for planning)."""
    return _desk_run(tmp_path_factory, "desk_xy")


@pytest.fixture(scope="session")
def desk_run_state(tmp_path_factory) -> DeskRun:
    """Skill-dynamics conditioned on the velocity coordinates as well."""
    return _desk_run(tmp_path_factory, "desk_state", **{"dynamics.xy_prior": False})


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
