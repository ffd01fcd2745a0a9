"""Clipped-surrogate policy optimization with vector-valued critics.

Per-objective generalized advantage estimation, per-objective z-normalization
followed by weighted-sum scalarization, multi-epoch minibatch updates that
keep episode sequences contiguous (recurrent state resets at episode starts),
and a multi-task runner that trains a set of weighted tasks independently and
re-evaluates their objective vectors on a fixed evaluation-seed set.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, seeding
from .env import MochargeError, ScenarioConfig
from .momdp import BatchRollout, RewardWeights, obs_dim, rollout_batch
from .nn import (
    Adam,
    FeedForwardGaussianPolicy,
    RecurrentGaussianPolicy,
    ValueNet,
    gaussian_entropy,
)


class LengthMismatch(MochargeError):
    """Trace and value arrays disagree on length or objective count."""


class StaleBatch(MochargeError):
    """Batch was collected under an older policy snapshot."""


@dataclass(frozen=True, slots=True)
class GaeConfig:
    """Advantage-estimation and update hyperparameters."""

    gamma: float = 0.98
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch_size: int = 1024
    entropy_coef: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must be in (0, 1)")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    cfg: GaeConfig,
    mask: np.ndarray | None = None,
    use_kernel: bool | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-objective advantages and value targets.

    rewards (T, B, m); values (T+1, B, m) including the final observation's
    value; dones (T, B) marks terminal steps (their bootstrap is zeroed).
    Returns (advantages (T, B, m), targets (T, B, m)) where
    targets = advantages + values[:T].
    """
    if rewards.ndim != 3 or values.ndim != 3:
        raise LengthMismatch("rewards must be (T, B, m) and values (T+1, B, m)")
    t_len, b_n, m = rewards.shape
    if values.shape != (t_len + 1, b_n, m):
        raise LengthMismatch(f"values shape {values.shape} != {(t_len + 1, b_n, m)}")
    if dones.shape != (t_len, b_n):
        raise LengthMismatch(f"dones shape {dones.shape} != {(t_len, b_n)}")
    live = 1.0 - dones
    if mask is not None:
        if mask.shape != (t_len, b_n):
            raise LengthMismatch(f"mask shape {mask.shape} != {(t_len, b_n)}")
        live = live * mask
    deltas = rewards + cfg.gamma * live[:, :, None] * values[1:] - values[:-1]
    if mask is not None:
        deltas = deltas * mask[:, :, None]
    coef = (cfg.gamma * cfg.gae_lambda) * live
    coef3 = np.broadcast_to(coef[:, :, None], deltas.shape)
    adv = kernels.discounted_scan(
        deltas.reshape(t_len, b_n * m), coef3.reshape(t_len, b_n * m).copy(), use_kernel
    ).reshape(t_len, b_n, m)
    targets = adv + values[:-1]
    return adv, targets


def scalarize_advantage(advantages: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted sum over the trailing objective axis: A_w = sum_i w_i A_i."""
    w = np.asarray(w, dtype=np.float64)
    if advantages.shape[-1] != w.shape[0]:
        raise LengthMismatch(
            f"advantage objectives {advantages.shape[-1]} != weights {w.shape[0]}"
        )
    return advantages @ w


def normalize_advantages(advantages: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Z-normalize each objective column over the masked transitions."""
    if mask is None:
        mask = np.ones(advantages.shape[:-1])
    m3 = mask[..., None]
    count = max(mask.sum(), 1.0)
    mu = (advantages * m3).sum(axis=(0, 1)) / count
    var = (((advantages - mu) ** 2) * m3).sum(axis=(0, 1)) / count
    sd = np.sqrt(var) + 1e-8
    return ((advantages - mu) / sd) * m3


@dataclass(slots=True)
class AdvantageBatch:
    """Training batch: rollout arrays plus advantages/targets, time-major.

    advantages and value_targets are (T, B, m); old_logp (T, B); obs carries
    the trailing observation row used for critic bootstraps.
    """

    obs: np.ndarray  # (T+1, B, D)
    actions_u: np.ndarray  # (T, B, A)
    old_logp: np.ndarray  # (T, B)
    mask: np.ndarray  # (T, B)
    advantages: np.ndarray  # (T, B, m)
    value_targets: np.ndarray  # (T, B, m)
    policy_version: int
    mean_return: np.ndarray  # (m,) mean discounted episode returns
    mean_objectives: np.ndarray  # (m,) mean episode objectives

    @property
    def n_transitions(self) -> int:
        return int(self.mask.sum())


def build_advantage_batch(
    roll: BatchRollout,
    critic: ValueNet,
    cfg: GaeConfig,
    use_kernel: bool | None = None,
) -> AdvantageBatch:
    """Evaluate the critic over a rollout and attach GAE results."""
    t_len, b_n, d = roll.obs.shape[0] - 1, roll.obs.shape[1], roll.obs.shape[2]
    values, _ = critic.forward(roll.obs.reshape((t_len + 1) * b_n, d))
    values = values.reshape(t_len + 1, b_n, critic.n_objectives)
    adv, targets = compute_gae(roll.rewards, values, roll.dones, cfg, roll.mask, use_kernel)
    return AdvantageBatch(
        obs=roll.obs,
        actions_u=roll.actions_u,
        old_logp=roll.logp,
        mask=roll.mask,
        advantages=adv,
        value_targets=targets,
        policy_version=roll.policy_version,
        mean_return=roll.returns.mean(axis=0),
        mean_objectives=roll.objectives.mean(axis=0),
    )


@dataclass(slots=True)
class LearningTask:
    """One weighted learner: actor, vector critic, simplex weight, training state."""

    uid: int
    policy: RecurrentGaussianPolicy | FeedForwardGaussianPolicy
    critic: ValueNet
    w: np.ndarray
    actor_opt: Adam
    critic_opt: Adam
    version: int = 0
    objectives: np.ndarray | None = None  # F = (f1, f2) from the last evaluation
    history: list = field(default_factory=list)  # [(w, delta_F)] lineage observations

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or np.any(self.w < -1e-12) or abs(self.w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weight {self.w} is not on the simplex")
        self.w = np.clip(self.w, 0.0, 1.0)

    def clone(self, new_w: np.ndarray | None = None) -> "LearningTask":
        """Deep copy for lineage branching; optimizer momentum carried over."""
        import copy

        t = LearningTask(
            uid=self.uid,
            policy=self.policy.clone(),
            critic=self.critic.clone(),
            w=self.w.copy() if new_w is None else np.asarray(new_w, dtype=np.float64).copy(),
            actor_opt=copy.deepcopy(self.actor_opt),
            critic_opt=copy.deepcopy(self.critic_opt),
            version=self.version,
            objectives=None if self.objectives is None else self.objectives.copy(),
            history=list(self.history),
        )
        return t


def make_task(
    uid: int,
    scenario: ScenarioConfig,
    w,
    hidden_size: int,
    learning_rate: float,
    init_log_std: float,
    seed: int,
    recurrent: bool = True,
    n_objectives: int = 2,
) -> LearningTask:
    """Build a freshly initialized task; parameters seeded by (seed, uid)."""
    d = obs_dim(scenario)
    rng = seeding.generator(seed, seeding.TAG_NET_INIT, uid)
    if recurrent:
        policy = RecurrentGaussianPolicy(d, hidden_size, 2, init_log_std, rng)
    else:
        policy = FeedForwardGaussianPolicy(d, hidden_size, 2, init_log_std, rng)
    critic = ValueNet(d, hidden_size, n_objectives, rng)
    return LearningTask(
        uid=uid,
        policy=policy,
        critic=critic,
        w=np.asarray(w, dtype=np.float64),
        actor_opt=Adam(policy.params(), lr=learning_rate),
        critic_opt=Adam(critic.params(), lr=learning_rate),
    )


def ppo_update(task: LearningTask, batch: AdvantageBatch, cfg: GaeConfig,
               shuffle_rng: np.random.Generator) -> dict:
    """Multi-epoch clipped-surrogate update on one task (in place).

    Episodes stay contiguous in every minibatch; the recurrent actor re-runs
    each episode from its zero initial state, matching collection. Raises
    StaleBatch when the batch was collected under a different snapshot.
    """
    if batch.policy_version != task.version:
        raise StaleBatch(
            f"batch from snapshot {batch.policy_version}, task at {task.version}"
        )
    policy, critic = task.policy, task.critic
    t_len, b_n = batch.old_logp.shape
    a_dim = policy.action_dim
    m_dim = critic.n_objectives
    adv_n = normalize_advantages(batch.advantages, batch.mask)
    adv_w = scalarize_advantage(adv_n, task.w)
    ep_per_mb = max(1, cfg.minibatch_size // t_len)
    stats = {"ratio": 0.0, "clip_fraction": 0.0, "policy_loss": 0.0, "value_loss": 0.0, "n": 0}
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(b_n)
        for lo in range(0, b_n, ep_per_mb):
            idx = perm[lo:lo + ep_per_mb]
            obs_mb = batch.obs[:t_len, idx]
            u_mb = batch.actions_u[:, idx]
            mask_mb = batch.mask[:, idx]
            n_eff = max(mask_mb.sum(), 1.0)
            means, ctx = policy.sequence_forward(obs_mb)
            std = np.exp(policy.log_std)
            diff = u_mb - means
            zs = diff / std
            logp_new = (
                -0.5 * (zs * zs).sum(axis=-1)
                - policy.log_std.sum()
                - 0.5 * a_dim * math.log(2.0 * math.pi)
            )
            ratio = np.exp(logp_new - batch.old_logp[:, idx])
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
            assert clipped.min() >= 1.0 - cfg.clip - 1e-12
            assert clipped.max() <= 1.0 + cfg.clip + 1e-12
            aw = adv_w[:, idx]
            surr1 = ratio * aw
            surr2 = clipped * aw
            chosen = np.minimum(surr1, surr2)
            policy_loss = -float((chosen * mask_mb).sum() / n_eff)
            # gradient flows through the unclipped branch only where it attains the min
            through = (surr1 <= surr2).astype(np.float64) * mask_mb
            dlogp = -(aw * ratio * through) / n_eff
            dmean = dlogp[:, :, None] * (diff / (std * std))
            dlog_std = (dlogp[:, :, None] * (zs * zs - 1.0)).sum(axis=(0, 1))
            grads = policy.sequence_backward(ctx, dmean)
            grads["log_std"] = dlog_std - cfg.entropy_coef * np.ones(a_dim)
            task.actor_opt.step(policy.params(), grads)
            # critic regression toward the GAE targets on the same minibatch
            k = idx.shape[0]
            obs_flat = obs_mb.reshape(t_len * k, -1)
            v, vctx = critic.forward(obs_flat, need_cache=True)
            targ = batch.value_targets[:, idx].reshape(t_len * k, m_dim)
            mflat = mask_mb.reshape(t_len * k, 1)
            err = (v - targ) * mflat
            value_loss = float(0.5 * (err * err).sum() / (n_eff * m_dim))
            dv = err / (n_eff * m_dim)
            task.critic_opt.step(critic.params(), critic.backward(vctx, dv))
            stats["ratio"] += float((ratio * mask_mb).sum() / n_eff)
            stats["clip_fraction"] += float(((np.abs(ratio - 1.0) > cfg.clip) * mask_mb).sum() / n_eff)
            stats["policy_loss"] += policy_loss
            stats["value_loss"] += value_loss
            stats["n"] += 1
    task.version += 1
    n = max(stats.pop("n"), 1)
    out = {k: v / n for k, v in stats.items()}
    out["entropy"] = gaussian_entropy(policy.log_std)
    return out


@dataclass(slots=True)
class TrainSetup:
    """Everything a task-training run needs besides the tasks themselves."""

    scenario: ScenarioConfig
    rewards: RewardWeights
    gae: GaeConfig
    rollout_budget: int
    eval_seeds: list[int]
    master_seed: int
    use_kernel: bool | None = None
    jobs: int = 1


def evaluate_objectives(policy, setup: TrainSetup) -> np.ndarray:
    """Deterministic (mean-action) episode objectives averaged over eval seeds."""
    roll = rollout_batch(
        policy,
        setup.scenario,
        setup.rewards,
        setup.eval_seeds,
        setup.gae.gamma,
        stochastic=False,
        use_kernel=setup.use_kernel,
    )
    return roll.objectives.mean(axis=0)


def train_task(task: LearningTask, t_iter: int, setup: TrainSetup, phase: int) -> list[dict]:
    """t_iter iterations of collect -> estimate -> update on one task.

    Appends a lineage observation (w, F_after - F_before) when training ran,
    and leaves task.objectives freshly evaluated either way. Returns
    per-iteration diagnostics rows.
    """
    t_len = setup.scenario.n_slots
    n_episodes = max(1, -(-setup.rollout_budget // t_len))
    f_before = task.objectives
    if f_before is None:
        f_before = evaluate_objectives(task.policy, setup)
        task.objectives = f_before
    rows = []
    for it in range(t_iter):
        rng = seeding.generator(setup.master_seed, seeding.TAG_ROLLOUT, phase, task.uid, it)
        ep_seeds = [int(s) for s in rng.integers(0, 2**62, size=n_episodes)]
        action_seed = int(rng.integers(0, 2**62))
        roll = rollout_batch(
            task.policy,
            setup.scenario,
            setup.rewards,
            ep_seeds,
            setup.gae.gamma,
            stochastic=True,
            action_seed=action_seed,
            use_kernel=setup.use_kernel,
        )
        roll.policy_version = task.version
        batch = build_advantage_batch(roll, task.critic, setup.gae, setup.use_kernel)
        shuffle_rng = seeding.generator(setup.master_seed, seeding.TAG_SHUFFLE, phase, task.uid, it)
        diag = ppo_update(task, batch, setup.gae, shuffle_rng)
        diag.update(
            iteration=it,
            phase=phase,
            task_uid=task.uid,
            mean_return_1=float(batch.mean_return[0]),
            mean_return_2=float(batch.mean_return[1]),
            mean_f1=float(batch.mean_objectives[0]),
            mean_f2=float(batch.mean_objectives[1]),
            w1=float(task.w[0]),
            w2=float(task.w[1]),
        )
        rows.append(diag)
    f_after = evaluate_objectives(task.policy, setup)
    task.objectives = f_after
    if t_iter > 0:
        task.history.append((task.w.copy(), f_after - f_before))
    return rows


def _train_task_job(args):
    task, t_iter, setup, phase = args
    rows = train_task(task, t_iter, setup, phase)
    return task, rows


def lstm_mppo(tasks: list[LearningTask], t_iter: int, setup: TrainSetup, phase: int = 0):
    """Train every task independently; returns (tasks, diagnostics rows).

    Seeding is keyed by (master seed, phase, task uid, iteration), so results
    are identical whether tasks run sequentially or across a process pool.
    """
    if setup.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=setup.jobs) as pool:
            results = list(pool.map(_train_task_job, [(t, t_iter, setup, phase) for t in tasks]))
        out_tasks = []
        rows = []
        for task, task_rows in results:
            out_tasks.append(task)
            rows.extend(task_rows)
        tasks[:] = out_tasks
        return tasks, rows
    rows = []
    for task in tasks:
        rows.extend(train_task(task, t_iter, setup, phase))
    return tasks, rows
