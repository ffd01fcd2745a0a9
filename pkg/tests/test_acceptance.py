"""Acceptance gate.

One test per contract criterion. Each prints a single [PASS]/[FAIL] line
with the measured quantity and its bound (visible with ``pytest -s``), and
fails the suite if the bound is violated. The three training runs used by
the learning, diversity, and robustness criteria are shared via a module
fixture so the whole gate stays inside the wall-clock budget.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from conftest import DEFAULT_SCENARIO, TOY_ALGO, TOY_SCENARIO
from mocharge.baselines import BaselineSpec, run_baseline
from mocharge.emo import (
    ArchiveEntry,
    ParetoArchive,
    dominates,
    emoppo_tml,
    hypervolume2,
    pareto_filter_unique,
)
from mocharge.env import advance_slot, init_state
from mocharge.io import load_algo_config, load_scenario
from mocharge.momdp import rollout
from mocharge.nn import FeedForwardGaussianPolicy, RecurrentGaussianPolicy, ValueNet
from mocharge.ppo import GaeConfig, compute_gae

from test_nn import fd_check
from test_ppo import gae_oracle


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def fd_check_value(net: ValueNet, x: np.ndarray, h: float = 1e-6) -> float:
    """Central finite differences on the dense value head; returns worst rel err."""
    rng = np.random.default_rng(99)
    v, ctx = net.forward(x, need_cache=True)
    m_fixed = rng.normal(size=v.shape)
    grads = net.backward(ctx, m_fixed)

    def loss():
        return float((net.forward(x)[0] * m_fixed).sum())

    worst = 0.0
    for name, p in net.params().items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in rng.choice(flat.size, size=min(10, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            worst = max(worst, abs(gflat[i] - num) / max(abs(gflat[i]) + abs(num), 1e-3))
    return worst


@pytest.fixture(scope="module")
def toy_runs():
    """Three full evolutionary runs on the bundled small scenario."""
    scenario, rewards = load_scenario(TOY_SCENARIO)
    algo = load_algo_config(TOY_ALGO)
    t0 = time.perf_counter()
    runs = [emoppo_tml(scenario, rewards, algo, master_seed=s) for s in (0, 1, 2)]
    elapsed = time.perf_counter() - t0
    return {"scenario": scenario, "rewards": rewards, "algo": algo,
            "runs": runs, "elapsed": elapsed}


def test_gradient_fidelity():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        obs_dim = int(rng.integers(2, 9))
        hidden = int(rng.integers(2, 17))
        seq = int(rng.integers(1, 7))
        batch = int(rng.integers(1, 4))
        kind = trial % 3
        if kind == 2:
            net = ValueNet(obs_dim, hidden, rng=rng)
            worst = max(worst, fd_check_value(net, rng.normal(size=(seq * batch, obs_dim))))
            continue
        if kind == 0:
            net = RecurrentGaussianPolicy(obs_dim, hidden, rng=rng)
        else:
            net = FeedForwardGaussianPolicy(obs_dim, hidden, rng=rng)
        obs = rng.normal(size=(seq, batch, obs_dim))
        worst = max(worst, fd_check(net, obs, tol=1e-4))
    elapsed = time.perf_counter() - t0
    report("gradient-fidelity", worst < 1e-4 and elapsed < 60.0,
           f"max rel err {worst:.3e} < 1e-4 over 100 trials, {elapsed:.1f}s < 60s")


def test_gae_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(1000):
        rng = np.random.default_rng(trial)
        t_len = int(rng.integers(1, 13))
        b_n = int(rng.integers(1, 4))
        rewards = rng.normal(size=(t_len, b_n, 2))
        values = rng.normal(size=(t_len + 1, b_n, 2))
        dones = (rng.random(size=(t_len, b_n)) < 0.15).astype(np.float64)
        mask = (rng.random(size=(t_len, b_n)) < 0.9).astype(np.float64)
        cfg = GaeConfig(gamma=float(rng.uniform(0.8, 1.0)),
                        gae_lambda=float(rng.uniform(0.8, 1.0)))
        fast, _ = compute_gae(rewards, values, dones, cfg, mask=mask)
        slow = gae_oracle(rewards, values, dones, cfg.gamma, cfg.gae_lambda, mask=mask)
        worst = max(worst, float(np.abs(fast - slow).max()))
    elapsed = time.perf_counter() - t0
    report("gae-oracle", worst < 1e-10 and elapsed < 10.0,
           f"max abs err {worst:.3e} < 1e-10 over 1000 traces, {elapsed:.1f}s < 10s")


def test_hypervolume_exactness():
    t0 = time.perf_counter()
    two_point = hypervolume2(np.array([[0.8, 0.2], [0.2, 0.8]]))
    exact_ok = two_point == pytest.approx(0.28, abs=1e-15)
    worst_sigma = 0.0
    n = 1_000_000
    for front_id in range(50):
        rng = np.random.default_rng(1000 + front_id)
        k = int(rng.integers(1, 9))
        pts = rng.uniform(0.05, 1.0, size=(k, 2))
        hv = hypervolume2(pts)
        samples = rng.random(size=(n, 2))
        covered = np.zeros(n, dtype=bool)
        for p in pts:
            covered |= (samples[:, 0] < p[0]) & (samples[:, 1] < p[1])
        p_hat = covered.mean()
        sigma = math.sqrt(max(p_hat * (1.0 - p_hat), 1e-12) / n)
        worst_sigma = max(worst_sigma, abs(hv - p_hat) / sigma)
    elapsed = time.perf_counter() - t0
    report("hypervolume-exactness",
           exact_ok and worst_sigma <= 3.0 and elapsed < 60.0,
           f"two-point hv {two_point:.6f} == 0.28, worst MC deviation "
           f"{worst_sigma:.2f}sigma <= 3sigma over 50 fronts, {elapsed:.1f}s < 60s")


def test_archive_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    archive = ParetoArchive()
    seen: list[np.ndarray] = []
    hv_prev = 0.0
    hv_monotone = True
    for i in range(10_000):
        f = rng.random(2)
        seen.append(f)
        archive.update([ArchiveEntry(objectives=f, policy=None, policy_meta={},
                                     weight=np.array([0.5, 0.5]), generation=0,
                                     task_uid=i)])
        if i % 100 == 0:
            hv = archive.hypervolume()
            hv_monotone = hv_monotone and hv >= hv_prev - 1e-12
            hv_prev = hv
    brute = {tuple(p) for p in pareto_filter_unique(seen)}
    got = {tuple(p) for p in archive.points()}
    archive.check_invariants()
    elapsed = time.perf_counter() - t0
    report("archive-correctness",
           got == brute and hv_monotone and elapsed < 30.0,
           f"{len(got)} entries == brute filter, hv nondecreasing, {elapsed:.1f}s < 30s")


def test_environment_conservation():
    t0 = time.perf_counter()
    cfg, _ = load_scenario(DEFAULT_SCENARIO)
    total_slots = 0
    worst_rel = 0.0
    episodes = 50
    for seed in range(episodes):
        rng = np.random.default_rng(seed)
        st = init_state(cfg, rng)
        for _ in range(cfg.n_slots):
            pre = st.charger.energy
            led = advance_slot(st, cfg, float(rng.uniform(0.0, 2.0 * math.pi)),
                               float(rng.uniform(0.0, cfg.d_max_step)))
            scale = max(1.0, abs(pre))
            err = abs(st.charger.energy
                      - (pre - led.e_move - led.e_tx + led.pile_transfer_in)) / scale
            ledger_err = abs(led.e_sum - (led.e_move + led.e_charge.sum()
                                          + led.e_loss.sum()))
            ledger_err /= max(1.0, abs(led.e_sum))
            worst_rel = max(worst_rel, err, ledger_err)
            assert 0.0 <= st.charger.x <= cfg.area[0]
            assert 0.0 <= st.charger.y <= cfg.area[1]
            total_slots += 1
    elapsed = time.perf_counter() - t0
    report("environment-conservation",
           total_slots == 10_000 and worst_rel <= 1e-9 and elapsed < 30.0,
           f"worst rel err {worst_rel:.3e} <= 1e-9 over {total_slots} slots, "
           f"box held, {elapsed:.1f}s < 30s")


def test_learning_signal(toy_runs):
    wins = 0
    details = []
    for s, result in enumerate(toy_runs["runs"]):
        final_hv = result.archive.hypervolume()
        rand = run_baseline(BaselineSpec(kind="random", seed=s),
                            toy_runs["scenario"], toy_runs["rewards"],
                            seeds=[int(x) for x in result.eval_seeds])
        rand_hv = float(np.prod(np.maximum(rand.mean, 0.0)))
        ok = final_hv > rand_hv and final_hv > result.warmup_hypervolume
        wins += ok
        details.append(f"seed {s}: final {final_hv:.4f} vs random {rand_hv:.4f}"
                       f" / warmup {result.warmup_hypervolume:.4f}")
    elapsed = toy_runs["elapsed"]
    report("learning-signal", wins == 3 and elapsed < 1800.0,
           f"{wins}/3 seeds improved ({'; '.join(details)}), "
           f"training {elapsed:.0f}s < 1800s")


def test_tradeoff_diversity(toy_runs):
    hits = 0
    spreads = []
    for result in toy_runs["runs"]:
        pts = result.archive.points()
        spread = float(pts[:, 0].max() - pts[:, 0].min()) if len(pts) >= 2 else 0.0
        spreads.append(spread)
        if len(pts) >= 2 and spread >= 0.02:
            hits += 1
    report("tradeoff-diversity", hits >= 2,
           f"{hits}/3 seeds with >= 2 entries and f1 spread >= 0.02 "
           f"(spreads {['%.3f' % s for s in spreads]})")


def test_scalarization_sanity():
    scenario, rewards = load_scenario(TOY_SCENARIO)
    seeds = [0, 1, 2, 3, 4]
    means = {}
    for w in ((1.0, 0.0), (0.0, 1.0)):
        spec = BaselineSpec(kind="scalar_ppo", weight=w, seed=0,
                            train_iters=60, learning_rate=1e-3)
        means[w] = run_baseline(spec, scenario, rewards, seeds=seeds).mean
    f1_ok = means[(1.0, 0.0)][0] >= means[(0.0, 1.0)][0]
    f2_ok = means[(0.0, 1.0)][1] >= means[(1.0, 0.0)][1]
    report("scalarization-sanity", f1_ok and f2_ok,
           f"f1 {means[(1.0, 0.0)][0]:.4f} >= {means[(0.0, 1.0)][0]:.4f}, "
           f"f2 {means[(0.0, 1.0)][1]:.4f} >= {means[(1.0, 0.0)][1]:.4f}")


def test_robustness_harness(toy_runs):
    result = toy_runs["runs"][0]
    entry = max(result.archive.entries, key=lambda e: e.objectives[0])
    scenario, rewards = toy_runs["scenario"], toy_runs["rewards"]
    gamma = toy_runs["algo"].gamma
    means = []
    deterministic = True
    for p in (0.0, 0.25, 0.5):
        f1s = []
        for seed in (0, 1, 2):
            a = rollout(entry.policy, scenario, rewards, seed, gamma,
                        stochastic=False, drain_double_prob=p)
            b = rollout(entry.policy, scenario, rewards, seed, gamma,
                        stochastic=False, drain_double_prob=p)
            deterministic = deterministic and np.array_equal(a.objectives, b.objectives)
            f1s.append(float(a.objectives[0]))
        means.append(float(np.mean(f1s)))
    monotone = means[0] >= means[1] - 1e-12 and means[1] >= means[2] - 1e-12
    strict = means[0] > means[2]
    report("robustness-harness", monotone and strict and deterministic,
           f"mean f1 {means[0]:.4f} >= {means[1]:.4f} >= {means[2]:.4f} "
           f"at p = 0 / 0.25 / 0.5, repeat runs bit-identical")
