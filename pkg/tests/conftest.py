"""Shared fixtures: scenario configs sized for fast unit tests."""

from __future__ import annotations

from pathlib import Path

import pytest

from mocharge.env import ScenarioConfig
from mocharge.io import load_scenario

REPO_ROOT = Path(__file__).resolve().parent.parent
TOY_SCENARIO = REPO_ROOT / "scenarios" / "toy.toml"
DEFAULT_SCENARIO = REPO_ROOT / "scenarios" / "default.toml"
TOY_ALGO = REPO_ROOT / "configs" / "toy_algo.toml"


def make_cfg(**overrides) -> ScenarioConfig:
    """Small 4-sensor world; any field overridable per test."""
    base = dict(
        n_sensors=4,
        area=(100.0, 100.0),
        slot_duration=1.0,
        n_slots=20,
        sensor_init_energy=(5.0, 5.0),
        sensor_rate_range=(0.1, 0.1),
        charger_capacity=1000.0,
        move_cost=1.0,
        charge_radius=30.0,
        wpt_alpha=4.0,
        wpt_beta=1.0,
        transmit_power=5.0,
        pile_position=(50.0, 50.0),
        pile_power=300.0,
        coupling=1.0,
        quality_factors=(1.5, 2.0),
        alive_threshold=0.2,
        emergency_threshold=100.0,
        pile_proximity=10.0,
        charger_start=(50.0, 50.0),
        d_max_step=10.0,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture(scope="session")
def toy():
    """(ScenarioConfig, RewardWeights) from the shipped toy scenario file."""
    return load_scenario(TOY_SCENARIO)


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario(DEFAULT_SCENARIO)
