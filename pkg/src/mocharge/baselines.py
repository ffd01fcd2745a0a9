"""Comparison policies: uniform-random actions, a greedy lowest-battery
chaser, and fixed-weight scalarized policy optimization without recurrence
or evolution. All three drive the same rollout machinery as learned
policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import seeding
from .env import ScenarioConfig
from .momdp import RewardWeights, obs_dim, rollout
from .ppo import GaeConfig, TrainSetup, make_task, train_task

_KINDS = ("random", "greedy_emergency", "scalar_ppo")


def _inverse_squash(target: float, low: float, high: float) -> float:
    # invert x -> (tanh(u)+1)/2*(high-low)+low
    frac = (target - low) / (high - low)
    inner = min(max(2.0 * frac - 1.0, -1.0 + 1e-12), 1.0 - 1e-12)
    return math.atanh(inner)


class RandomPolicy:
    """Uniform-random heading and distance each slot."""

    kind = "random"

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.d_max = cfg.d_max_step
        self._own_rng = seeding.generator(seed, seeding.TAG_ACTION, 10_001)

    def initial_state(self, batch: int):
        return None

    def act(self, obs: np.ndarray, state, rng=None, deterministic: bool = False):
        r = rng if rng is not None else self._own_rng
        b = obs.shape[0]
        theta = r.uniform(0.0, 2.0 * math.pi, size=b)
        dist = r.uniform(0.0, self.d_max, size=b)
        u = np.empty((b, 2))
        for i in range(b):
            u[i, 0] = _inverse_squash(theta[i], 0.0, 2.0 * math.pi)
            u[i, 1] = _inverse_squash(dist[i], 0.0, self.d_max)
        return u, np.zeros(b), None


class GreedyEmergencyPolicy:
    """Heads straight for the lowest-battery alive sensor at full step.

    Ties break toward the lowest sensor index; with no alive sensors the
    charger stays put. Docking still happens through the environment's
    low-energy threshold rule. Aliveness is decoded from the normalized
    observation, which is exact for scalar initial-energy scenarios.
    """

    kind = "greedy_emergency"

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.alive_norm = cfg.alive_threshold / cfg.sensor_init_energy[1]

    def initial_state(self, batch: int):
        return None

    def act(self, obs: np.ndarray, state, rng=None, deterministic: bool = False):
        cfg = self.cfg
        xm, ym = cfg.area
        b = obs.shape[0]
        u = np.empty((b, 2))
        for i in range(b):
            row = obs[i]
            cx, cy = row[0] * xm, row[1] * ym
            energy = row[7::3]
            alive = energy > self.alive_norm
            if not alive.any():
                u[i, 0] = _inverse_squash(0.0, 0.0, 2.0 * math.pi)
                u[i, 1] = _inverse_squash(0.0, 0.0, cfg.d_max_step)
                continue
            masked = np.where(alive, energy, np.inf)
            j = int(np.argmin(masked))
            tx, ty = row[5 + 3 * j] * xm, row[6 + 3 * j] * ym
            dx, dy = tx - cx, ty - cy
            theta = math.atan2(dy, dx)
            if theta < 0.0:
                theta += 2.0 * math.pi
            dist = min(math.sqrt(dx * dx + dy * dy), cfg.d_max_step)
            u[i, 0] = _inverse_squash(theta, 0.0, 2.0 * math.pi)
            u[i, 1] = _inverse_squash(dist, 0.0, cfg.d_max_step)
        return u, np.zeros(b), None


@dataclass(frozen=True, slots=True)
class BaselineSpec:
    """Which baseline to run and how to seed/train it."""

    kind: str
    seed: int = 0
    weight: tuple[float, float] | None = None  # scalar_ppo only
    train_iters: int = 60
    hidden_size: int = 64
    learning_rate: float = 3e-4
    rollout_budget: int = 1024
    gae: GaeConfig = GaeConfig()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}; choose from {_KINDS}")
        if self.kind == "scalar_ppo" and self.weight is None:
            raise ValueError("scalar_ppo requires a weight vector")


@dataclass(slots=True)
class BaselineResult:
    spec: BaselineSpec
    per_seed: np.ndarray  # (k, 2) episode objectives per evaluation seed
    mean: np.ndarray  # (2,)
    std: np.ndarray  # (2,)
    policy: object
    diagnostics: list


def build_baseline_policy(spec: BaselineSpec, scenario: ScenarioConfig,
                          rewards: RewardWeights, use_kernel: bool | None = None):
    """Construct (and for scalar_ppo, train) the baseline policy."""
    if spec.kind == "random":
        return RandomPolicy(scenario, spec.seed), []
    if spec.kind == "greedy_emergency":
        return GreedyEmergencyPolicy(scenario), []
    task = make_task(
        uid=0,
        scenario=scenario,
        w=np.asarray(spec.weight, dtype=np.float64),
        hidden_size=spec.hidden_size,
        learning_rate=spec.learning_rate,
        init_log_std=0.0,
        seed=spec.seed,
        recurrent=False,
    )
    setup = TrainSetup(
        scenario=scenario,
        rewards=rewards,
        gae=spec.gae,
        rollout_budget=spec.rollout_budget,
        eval_seeds=seeding.derive_ints(spec.seed, seeding.TAG_EVAL, 3),
        master_seed=spec.seed,
        use_kernel=use_kernel,
    )
    rows = train_task(task, spec.train_iters, setup, phase=0)
    return task.policy, rows


def run_baseline(spec: BaselineSpec, scenario: ScenarioConfig, rewards: RewardWeights,
                 seeds, gamma: float = 0.98, use_kernel: bool | None = None,
                 drain_double_prob: float = 0.0) -> BaselineResult:
    """Evaluate a baseline on each seed; returns per-seed and summary stats.

    Each seed runs as an independent single-episode rollout (stochastic for
    the random baseline, deterministic otherwise), so per-seed results do not
    depend on the rest of the seed list.
    """
    policy, rows = build_baseline_policy(spec, scenario, rewards, use_kernel)
    per_seed = np.zeros((len(seeds), 2))
    for i, s in enumerate(seeds):
        res = rollout(
            policy,
            scenario,
            rewards,
            int(s),
            gamma,
            stochastic=(spec.kind == "random"),
            action_seed=int(s),
            use_kernel=use_kernel,
            drain_double_prob=drain_double_prob,
            collect_ledgers=False,
        )
        per_seed[i] = res.objectives
    return BaselineResult(
        spec=spec,
        per_seed=per_seed,
        mean=per_seed.mean(axis=0),
        std=per_seed.std(axis=0),
        policy=policy,
        diagnostics=rows,
    )
