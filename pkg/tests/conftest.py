"""Shared fixtures: default parameters, one trained predictor, cached closed-loop runs."""
from __future__ import annotations

import numpy as np
import pytest

from coachddpc.config import load_params
from coachddpc.ddpc import DdpcConfig
from coachddpc.harness import ScenarioConfig, run_closed_loop
from coachddpc.predictor import fit_trajectories
from coachddpc.scenarios import scenario_schedule, training_trajectories

ACCEPTANCE_LINES: list[str] = []

TRAIN_DAYS, TRAIN_SEED = 12, 1
VAL_DAYS, VAL_SEED = 3, 2


def record_acceptance(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def params():
    return load_params()


@pytest.fixture(scope="session")
def ddpc_config(params):
    return DdpcConfig.from_dict(params.ddpc)


@pytest.fixture(scope="session")
def training_data(params):
    train = training_trajectories(params, TRAIN_DAYS, TRAIN_SEED)
    val = training_trajectories(params, VAL_DAYS, VAL_SEED, prefix="val")
    return train, val


@pytest.fixture(scope="session")
def model(training_data, ddpc_config):
    train, _ = training_data
    return fit_trajectories(train, ddpc_config.rho, ddpc_config.horizon)


class RunCache:
    """Runs each (scenario, mode) once per session."""

    def __init__(self, params, config, model):
        self.params = params
        self.config = config
        self.model = model
        self._runs = {}

    def scenario(self, name: str) -> ScenarioConfig:
        return ScenarioConfig(name=name, schedule=scenario_schedule(name), params=self.params, ddpc=self.config)

    def get(self, name: str, mode: str):
        key = (name, mode)
        if key not in self._runs:
            self._runs[key] = run_closed_loop(self.scenario(name), mode, self.model if mode == "activated" else None)
        return self._runs[key]


@pytest.fixture(scope="session")
def runs(params, ddpc_config, model):
    return RunCache(params, ddpc_config, model)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
