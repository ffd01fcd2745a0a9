"""Decision-process wrapper around the network physics.

Exposes the simulation as a sequential decision problem with a two-component
reward: a flat normalized observation vector, a continuous (heading,
distance) action decoded from unbounded policy outputs by tanh squashing,
and episode rollouts that thread recurrent policy state. Rewards:

    r1 = r_bound + r_charge + a * E_charge + c / (N_dead + 1)
    r2 = r_bound + r_charge + b * E_charge / E_sum   (ratio term 0 when E_sum = 0)

where r_bound is a penalty applied on boundary-clamped moves, r_charge a
bonus applied on docked slots, and a, b, c scenario-file constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import seeding
from .env import (
    MochargeError,
    NetworkState,
    ScenarioConfig,
    SlotLedger,
    advance_slot,
    init_state,
)


class EpisodeDone(MochargeError):
    """step() called after the episode terminated."""


@dataclass(frozen=True, slots=True)
class RewardWeights:
    """Reward constants, read from the scenario file's [reward] section.

    r_bound is the (negative) value added to both components on a
    boundary-violating move; r_charge the bonus added on a docked slot.
    """

    a: float
    b: float
    c: float
    r_bound: float
    r_charge: float


@dataclass(frozen=True, slots=True)
class RewardVec:
    """Two-component reward plus the shared event terms it included."""

    r1: float
    r2: float
    r_bound: float
    r_charge: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r1, self.r2])


@dataclass(frozen=True, slots=True)
class Action:
    """Decoded command: heading in [0, 2*pi], distance in [0, d_max_step]."""

    theta: float
    dist: float


@dataclass(frozen=True, slots=True)
class Transition:
    observation: np.ndarray
    action: Action
    reward_vec: RewardVec
    next_observation: np.ndarray
    done: bool
    hidden_id: int


def obs_dim(cfg: ScenarioConfig) -> int:
    """Observation length: charger pose+energy, pile position, 3 per sensor."""
    return 5 + 3 * cfg.n_sensors


def encode_observation(state: NetworkState, cfg: ScenarioConfig, out: np.ndarray | None = None) -> np.ndarray:
    """Flatten state into a fixed-layout vector, every entry in [0, 1]."""
    if out is None:
        out = np.empty(obs_dim(cfg))
    xm, ym = cfg.area
    out[0] = state.charger.x / xm
    out[1] = state.charger.y / ym
    out[2] = state.charger.energy / cfg.charger_capacity
    out[3] = cfg.pile_position[0] / xm
    out[4] = cfg.pile_position[1] / ym
    out[5::3] = state.sensor_pos[:, 0] / xm
    out[6::3] = state.sensor_pos[:, 1] / ym
    out[7::3] = state.sensor_energy / state.sensor_capacity
    np.clip(out, 0.0, 1.0, out=out)
    return out


def decode_action(u, d_max_step: float) -> Action:
    """Squash two unbounded reals onto the physical action ranges."""
    theta = (math.tanh(float(u[0])) + 1.0) * math.pi
    dist = (math.tanh(float(u[1])) + 1.0) * 0.5 * d_max_step
    return Action(theta=theta, dist=dist)


def assemble_reward(ledger: SlotLedger, w: RewardWeights) -> RewardVec:
    rb = w.r_bound if ledger.boundary_violation else 0.0
    rc = w.r_charge if ledger.docked else 0.0
    ec = ledger.e_charge_total
    es = ledger.e_sum
    r1 = rb + rc + w.a * ec + w.c / (ledger.n_dead + 1)
    r2 = rb + rc + (w.b * (ec / es) if es > 0.0 else 0.0)
    return RewardVec(r1=r1, r2=r2, r_bound=rb, r_charge=rc)


class ChargingEnv:
    """One episode-at-a-time decision-process instance.

    drain_double_prob is an evaluation-time robustness knob: each slot, each
    sensor's consumption independently doubles with this probability. At 0 it
    draws nothing, so perturbed and unperturbed runs share identical streams.
    """

    def __init__(
        self,
        cfg: ScenarioConfig,
        rewards: RewardWeights,
        drain_double_prob: float = 0.0,
        use_kernel: bool | None = None,
        t_limit: int | None = None,
    ):
        if not 0.0 <= drain_double_prob <= 1.0:
            raise ValueError("drain_double_prob must be in [0, 1]")
        self.cfg = cfg
        self.rewards = rewards
        self.drain_double_prob = drain_double_prob
        self.use_kernel = use_kernel
        self.t_limit = cfg.n_slots if t_limit is None else min(t_limit, cfg.n_slots)
        self.state: NetworkState | None = None
        self._drain_rng: np.random.Generator | None = None
        self._done = True

    def reset(self, seed: int) -> np.ndarray:
        self.state = init_state(self.cfg, seeding.generator(seed, seeding.TAG_EPISODE))
        self._drain_rng = (
            seeding.generator(seed, seeding.TAG_DRAIN) if self.drain_double_prob > 0.0 else None
        )
        self._done = False
        return encode_observation(self.state, self.cfg)

    @property
    def done(self) -> bool:
        return self._done

    def step(self, action: Action, obs_out: np.ndarray | None = None):
        """Advance one slot. Returns (next_obs, RewardVec, done, SlotLedger)."""
        if self._done or self.state is None:
            raise EpisodeDone("episode is finished; call reset()")
        rates = None
        if self._drain_rng is not None:
            doubled = self._drain_rng.random(self.cfg.n_sensors) < self.drain_double_prob
            rates = self.state.sensor_rate * (1.0 + doubled)
        ledger = advance_slot(
            self.state, self.cfg, action.theta, action.dist, rates=rates, use_kernel=self.use_kernel
        )
        reward = assemble_reward(ledger, self.rewards)
        all_dead = not self.state.sensor_alive.any()
        self._done = self.state.slot >= self.t_limit or (
            self.cfg.terminate_on_all_dead and all_dead
        )
        obs = encode_observation(self.state, self.cfg, out=obs_out)
        return obs, reward, self._done, ledger


@dataclass(slots=True)
class BatchRollout:
    """Lockstep rollout results for B episodes of at most T slots.

    Arrays are time-major. mask[t, b] is 1.0 while episode b was still
    running at slot t; obs has T+1 rows (final observation included).
    """

    obs: np.ndarray  # (T+1, B, D)
    actions_u: np.ndarray  # (T, B, 2) raw pre-squash outputs
    logp: np.ndarray  # (T, B)
    rewards: np.ndarray  # (T, B, 2)
    dones: np.ndarray  # (T, B)
    mask: np.ndarray  # (T, B)
    objectives: np.ndarray  # (B, 2) episode-mean (survival, efficiency)
    returns: np.ndarray  # (B, 2) discounted reward sums
    seeds: list[int]
    gamma: float
    policy_version: int = -1
    ledgers: list[list[SlotLedger]] | None = None
    charger_track: np.ndarray | None = None  # (T+1, B, 3) exact x, y, energy

    @property
    def n_transitions(self) -> int:
        return int(self.mask.sum())


def rollout_batch(
    policy,
    cfg: ScenarioConfig,
    rewards: RewardWeights,
    seeds,
    gamma: float,
    stochastic: bool = False,
    action_seed: int | None = None,
    drain_double_prob: float = 0.0,
    use_kernel: bool | None = None,
    t_limit: int | None = None,
    collect_ledgers: bool = False,
) -> BatchRollout:
    """Run len(seeds) episodes in lockstep under one policy.

    The policy protocol: initial_state(B) -> recurrent state or None;
    act(obs (B, D), state, rng, deterministic) -> (u (B, 2), logp (B,),
    next state). Exploration noise comes from a single stream keyed by
    action_seed, consumed in slot order.
    """
    seeds = [int(s) for s in seeds]
    b_n = len(seeds)
    if b_n == 0:
        raise ValueError("need at least one seed")
    t_cap = cfg.n_slots if t_limit is None else min(t_limit, cfg.n_slots)
    d = obs_dim(cfg)
    envs = []
    obs = np.zeros((t_cap + 1, b_n, d))
    for b, s in enumerate(seeds):
        e = ChargingEnv(cfg, rewards, drain_double_prob, use_kernel, t_limit=t_cap)
        obs[0, b] = e.reset(s)
        envs.append(e)
    actions_u = np.zeros((t_cap, b_n, 2))
    logp = np.zeros((t_cap, b_n))
    rew = np.zeros((t_cap, b_n, 2))
    dones = np.zeros((t_cap, b_n))
    mask = np.zeros((t_cap, b_n))
    ledgers: list[list[SlotLedger]] | None = [[] for _ in range(b_n)] if collect_ledgers else None
    track = np.zeros((t_cap + 1, b_n, 3)) if collect_ledgers else None
    if track is not None:
        for b, e in enumerate(envs):
            track[0, b] = (e.state.charger.x, e.state.charger.y, e.state.charger.energy)
    hidden = policy.initial_state(b_n)
    rng = seeding.generator(action_seed, seeding.TAG_ACTION) if stochastic else None
    active = np.ones(b_n, dtype=bool)
    for t in range(t_cap):
        u, lp, hidden = policy.act(obs[t], hidden, rng=rng, deterministic=not stochastic)
        actions_u[t] = u
        logp[t] = lp
        for b in range(b_n):
            if not active[b]:
                obs[t + 1, b] = obs[t, b]
                if track is not None:
                    track[t + 1, b] = track[t, b]
                continue
            a = decode_action(u[b], cfg.d_max_step)
            _, rv, done, led = envs[b].step(a, obs_out=obs[t + 1, b])
            rew[t, b, 0] = rv.r1
            rew[t, b, 1] = rv.r2
            dones[t, b] = 1.0 if done else 0.0
            mask[t, b] = 1.0
            if ledgers is not None:
                ledgers[b].append(led)
            if track is not None:
                ch = envs[b].state.charger
                track[t + 1, b] = (ch.x, ch.y, ch.energy)
            if done:
                active[b] = False
        if not active.any():
            break
    objectives = np.array(
        [[e.state.mean_survival, e.state.mean_efficiency] for e in envs]
    )
    disc = gamma ** np.arange(t_cap)
    returns = np.einsum("t,tb,tbm->bm", disc, mask, rew)
    return BatchRollout(
        obs=obs,
        actions_u=actions_u,
        logp=logp,
        rewards=rew,
        dones=dones,
        mask=mask,
        objectives=objectives,
        returns=returns,
        seeds=seeds,
        gamma=gamma,
        ledgers=ledgers,
        charger_track=track,
    )


@dataclass(slots=True)
class EpisodeResult:
    transitions: list[Transition]
    objectives: tuple[float, float]
    returns: np.ndarray  # (2,)
    batch: BatchRollout


def rollout(
    policy,
    cfg: ScenarioConfig,
    rewards: RewardWeights,
    seed: int,
    gamma: float,
    t_limit: int | None = None,
    stochastic: bool = False,
    action_seed: int | None = None,
    drain_double_prob: float = 0.0,
    use_kernel: bool | None = None,
    collect_ledgers: bool = True,
) -> EpisodeResult:
    """Single-episode rollout returning the full transition list."""
    batch = rollout_batch(
        policy,
        cfg,
        rewards,
        [seed],
        gamma,
        stochastic=stochastic,
        action_seed=seed if action_seed is None else action_seed,
        drain_double_prob=drain_double_prob,
        use_kernel=use_kernel,
        t_limit=t_limit,
        collect_ledgers=collect_ledgers,
    )
    transitions = []
    t_run = int(batch.mask[:, 0].sum())
    for t in range(t_run):
        rv = RewardVec(
            r1=float(batch.rewards[t, 0, 0]),
            r2=float(batch.rewards[t, 0, 1]),
            r_bound=0.0,
            r_charge=0.0,
        )
        led = batch.ledgers[0][t] if batch.ledgers else None
        if led is not None:
            rv = assemble_reward(led, rewards)
        transitions.append(
            Transition(
                observation=batch.obs[t, 0],
                action=decode_action(batch.actions_u[t, 0], cfg.d_max_step),
                reward_vec=rv,
                next_observation=batch.obs[t + 1, 0],
                done=bool(batch.dones[t, 0]),
                hidden_id=t,
            )
        )
    objectives = (float(batch.objectives[0, 0]), float(batch.objectives[0, 1]))
    return EpisodeResult(
        transitions=transitions,
        objectives=objectives,
        returns=batch.returns[0],
        batch=batch,
    )
